"""ReLU feedforward networks: evaluation, accuracy, text serialization.

Every layer computes ``o = act(W x + c)`` with ``act`` either ``relu`` or
``identity``.  Layers may carry a weight-tying pattern (shared weight
classes, as in a convolution unrolled to a matrix); tied layers keep their
offsets at zero.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ACTIVATIONS",
    "WeightTying",
    "conv_tying",
    "LayerSpec",
    "Layer",
    "Network",
    "Prediction",
    "ModelIOError",
    "ModelVersionError",
    "ModelTruncatedError",
    "ModelDimensionError",
    "random_network",
    "save_network",
    "load_network",
]

ACTIVATIONS = ("relu", "identity")

_HEADER = "milptrain-model v1"

_CONV_TAG = re.compile(r"^conv(\d+)x(\d+)k(\d+)$")


class ModelIOError(Exception):
    """Base class for model file problems."""


class ModelVersionError(ModelIOError):
    """File header missing or naming an unsupported version."""


class ModelTruncatedError(ModelIOError):
    """File ended in the middle of a layer block."""


class ModelDimensionError(ModelIOError):
    """Declared shapes and actual numbers disagree, or the weights violate
    the layer's tying pattern."""


@dataclass(frozen=True)
class WeightTying:
    """Equality classes over the entries of a weight matrix.

    ``class_map[j, i]`` names the shared-value class of W[j, i]; entries
    mapped to -1 are structurally fixed at zero.  A tied layer keeps its
    offsets at zero.
    """

    class_map: np.ndarray
    num_classes: int
    tag: str

    def validate(self, out_dim: int, in_dim: int) -> None:
        if self.class_map.shape != (out_dim, in_dim):
            raise ValueError(
                f"tying map has shape {self.class_map.shape}, layer is "
                f"({out_dim}, {in_dim})"
            )
        present = np.unique(self.class_map)
        present = present[present >= 0]
        if present.size != self.num_classes or np.any(
            present != np.arange(self.num_classes)
        ):
            raise ValueError("tying classes must be exactly 0..num_classes-1")

    def materialize(self, class_values: np.ndarray) -> np.ndarray:
        """Expand per-class values into a full weight matrix."""
        W = np.zeros(self.class_map.shape)
        mask = self.class_map >= 0
        W[mask] = np.asarray(class_values, dtype=float)[self.class_map[mask]]
        return W

    def check_consistent(self, W: np.ndarray, tol: float = 0.0) -> bool:
        if np.any(np.abs(W[self.class_map < 0]) > tol):
            return False
        for cls in range(self.num_classes):
            vals = W[self.class_map == cls]
            if vals.size and np.any(np.abs(vals - vals.flat[0]) > tol):
                return False
        return True

    def class_values(self, W: np.ndarray) -> np.ndarray:
        out = np.zeros(self.num_classes)
        for cls in range(self.num_classes):
            idx = np.argwhere(self.class_map == cls)
            out[cls] = W[idx[0][0], idx[0][1]]
        return out


def conv_tying(height: int, width: int, kernel: int) -> WeightTying:
    """Tying pattern of a single-channel convolution with stride one and no
    padding, unrolled over a ``height`` x ``width`` input.  Output position
    (r, s) connects to input (r+u, s+v) with the shared weight of kernel cell
    (u, v)."""
    if kernel > height or kernel > width:
        raise ValueError("kernel exceeds the input extent")
    out_h, out_w = height - kernel + 1, width - kernel + 1
    class_map = np.full((out_h * out_w, height * width), -1, dtype=np.int64)
    for r in range(out_h):
        for s in range(out_w):
            row = r * out_w + s
            for u in range(kernel):
                for v in range(kernel):
                    col = (r + u) * width + (s + v)
                    class_map[row, col] = u * kernel + v
    return WeightTying(class_map, kernel * kernel, f"conv{height}x{width}k{kernel}")


def _tying_from_tag(tag: str) -> WeightTying | None:
    if tag == "none":
        return None
    m = _CONV_TAG.match(tag)
    if m is None:
        raise ModelDimensionError(f"unknown weight-tying tag {tag!r}")
    h, w, k = (int(g) for g in m.groups())
    if k > h or k > w:
        raise ModelDimensionError(f"tying tag {tag!r} has kernel larger than input")
    return conv_tying(h, w, k)


@dataclass(frozen=True)
class LayerSpec:
    """Shape and behaviour of one layer."""

    in_dim: int
    out_dim: int
    activation: str = "relu"
    tying: WeightTying | None = None

    def __post_init__(self) -> None:
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError("layer dimensions must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.tying is not None:
            self.tying.validate(self.out_dim, self.in_dim)

    @property
    def offsets_fixed_zero(self) -> bool:
        return self.tying is not None


@dataclass
class Layer:
    spec: LayerSpec
    W: np.ndarray
    c: np.ndarray

    def __post_init__(self) -> None:
        self.W = np.asarray(self.W, dtype=float)
        self.c = np.asarray(self.c, dtype=float)
        if self.W.shape != (self.spec.out_dim, self.spec.in_dim):
            raise ValueError(
                f"weight matrix shape {self.W.shape} does not match spec "
                f"({self.spec.out_dim}, {self.spec.in_dim})"
            )
        if self.c.shape != (self.spec.out_dim,):
            raise ValueError(f"offset shape {self.c.shape} != ({self.spec.out_dim},)")

    def copy(self) -> "Layer":
        return Layer(self.spec, self.W.copy(), self.c.copy())


@dataclass(frozen=True)
class Prediction:
    outputs: np.ndarray
    label: int


@dataclass
class Network:
    layers: list[Layer]

    def __post_init__(self) -> None:
        if not self.layers:
            raise ValueError("a network needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.spec.out_dim != nxt.spec.in_dim:
                raise ValueError(
                    f"layer widths do not chain: {prev.spec.out_dim} feeds "
                    f"{nxt.spec.in_dim}"
                )

    @property
    def input_dim(self) -> int:
        return self.layers[0].spec.in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].spec.out_dim

    def copy(self) -> "Network":
        return Network([layer.copy() for layer in self.layers])


def _apply(activation: str, a: np.ndarray) -> np.ndarray:
    if activation == "relu":
        return np.maximum(a, 0.0)
    return a


def forward(net: Network, x: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Evaluate one input; returns per-layer (pre-activation, output) pairs."""
    x = np.asarray(x, dtype=float)
    if x.shape != (net.input_dim,):
        raise ValueError(f"input has shape {x.shape}, network expects ({net.input_dim},)")
    records = []
    h = x
    for layer in net.layers:
        a = layer.W @ h + layer.c
        h = _apply(layer.spec.activation, a)
        records.append((a, h))
    return records


def forward_batch(net: Network, X: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Evaluate a batch (rows are samples); per-layer (A, O) matrices."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise ValueError(f"batch has shape {X.shape}, expected (m, {net.input_dim})")
    records = []
    H = X
    for layer in net.layers:
        A = H @ layer.W.T + layer.c
        H = _apply(layer.spec.activation, A)
        records.append((A, H))
    return records


def outputs(net: Network, x: np.ndarray) -> np.ndarray:
    return forward(net, x)[-1][1]


def predict(net: Network, x: np.ndarray) -> Prediction:
    """Label is the output coordinate closest to one; ties go to the lowest
    index."""
    o = outputs(net, x)
    label = int(np.argmin(np.abs(o - 1.0)))
    return Prediction(o, label)


def predict_batch(net: Network, X: np.ndarray) -> np.ndarray:
    O = forward_batch(net, X)[-1][1]
    return np.argmin(np.abs(O - 1.0), axis=1)


def accuracy(net: Network, X: np.ndarray, labels: np.ndarray) -> float:
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("accuracy of an empty sample set is undefined")
    if X.shape[0] != labels.shape[0]:
        raise ValueError("inputs and labels disagree in length")
    return float(np.mean(predict_batch(net, X) == labels))


def random_network(
    specs: list[LayerSpec],
    rng: np.random.Generator,
    low: float = -1.0,
    high: float = 1.0,
) -> Network:
    """Uniform random initialization; tied layers draw one value per weight
    class and keep offsets at zero.  Draw order is fixed (per layer: weights,
    then offsets) so a seeded generator reproduces the same network."""
    layers = []
    for spec in specs:
        if spec.tying is not None:
            class_vals = rng.uniform(low, high, size=spec.tying.num_classes)
            W = spec.tying.materialize(class_vals)
            c = np.zeros(spec.out_dim)
        else:
            W = rng.uniform(low, high, size=(spec.out_dim, spec.in_dim))
            c = rng.uniform(low, high, size=spec.out_dim)
        layers.append(Layer(spec, W, c))
    return Network(layers)


# -- serialization ---------------------------------------------------------


def _fmt(value: float) -> str:
    return "%.17g" % value


def save_network(net: Network, destination) -> None:
    """Write the network as text: a header line, then per layer one
    declaration line ``layer <in> <out> <activation> <tying-tag>`` followed by
    ``out`` weight rows and one offset row, 17 significant digits each."""
    lines = [_HEADER]
    for layer in net.layers:
        tag = layer.spec.tying.tag if layer.spec.tying is not None else "none"
        lines.append(
            f"layer {layer.spec.in_dim} {layer.spec.out_dim} {layer.spec.activation} {tag}"
        )
        for row in layer.W:
            lines.append(" ".join(_fmt(v) for v in row))
        lines.append(" ".join(_fmt(v) for v in layer.c))
    text = "\n".join(lines) + "\n"
    if hasattr(destination, "write"):
        destination.write(text)
    else:
        with open(destination, "w", encoding="ascii", newline="\n") as fh:
            fh.write(text)


def load_network(source) -> Network:
    """Inverse of :func:`save_network`; raises :class:`ModelVersionError`,
    :class:`ModelTruncatedError` or :class:`ModelDimensionError` on bad
    files."""
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(source, "r", encoding="ascii") as fh:
            text = fh.read()
    lines = [ln for ln in text.splitlines()]
    if not lines or lines[0].strip() != _HEADER:
        found = lines[0].strip() if lines else "<empty file>"
        raise ModelVersionError(f"expected header {_HEADER!r}, found {found!r}")
    pos = 1
    layers: list[Layer] = []
    while pos < len(lines):
        if not lines[pos].strip():
            pos += 1
            continue
        head = lines[pos].split()
        if head[0] != "layer" or len(head) != 5:
            raise ModelDimensionError(f"malformed layer line: {lines[pos]!r}")
        try:
            in_dim, out_dim = int(head[1]), int(head[2])
        except ValueError:
            raise ModelDimensionError(f"non-integer layer shape in {lines[pos]!r}") from None
        activation, tag = head[3], head[4]
        if activation not in ACTIVATIONS:
            raise ModelDimensionError(f"unknown activation {activation!r}")
        tying = _tying_from_tag(tag)
        pos += 1
        rows = []
        for r in range(out_dim + 1):
            if pos >= len(lines):
                raise ModelTruncatedError(
                    f"file ended inside a layer block ({r} of {out_dim + 1} rows read)"
                )
            parts = lines[pos].split()
            expect = in_dim if r < out_dim else out_dim
            if len(parts) != expect:
                raise ModelDimensionError(
                    f"row {r} has {len(parts)} numbers, expected {expect}"
                )
            try:
                rows.append(np.array([float(p) for p in parts]))
            except ValueError:
                raise ModelDimensionError(f"non-numeric value in row {r}") from None
            pos += 1
        W = np.vstack(rows[:-1]) if out_dim else np.empty((0, in_dim))
        c = rows[-1]
        try:
            spec = LayerSpec(in_dim, out_dim, activation, tying)
        except ValueError as exc:
            raise ModelDimensionError(str(exc)) from None
        if tying is not None:
            if not tying.check_consistent(W):
                raise ModelDimensionError("weights violate the layer's tying pattern")
            if np.any(c != 0.0):
                raise ModelDimensionError("tied layers must have zero offsets")
        layers.append(Layer(spec, W, c))
    if not layers:
        raise ModelTruncatedError("file contains no layers")
    try:
        return Network(layers)
    except ValueError as exc:
        raise ModelDimensionError(str(exc)) from None
