"""Big-M encodings that pose network updates as LPs/MILPs.

Four builders cover the training subproblems:

* weight update of a ReLU neuron (MILP with one fire/off binary per sample),
  also available jointly over a layer, which is how tied layers must be
  built since shared kernel weights couple all their neurons;
* weight update of the last layer (an LP: ReLU is replaced by the identity
  there, and the deviation objective is asymmetric for zero targets);
* input proposal: with the weights frozen, find inputs near the previous
  ones that the layer maps closest to its targets (one problem per sample);
* post-processing of the last layer: deviations up to 0.49 are forgiven via
  slack variables, which pushes outputs to the correct side of 1/2.

A brute-force reference, :func:`enumerate_sign_patterns`, solves one LP per
fire/off pattern of the samples and is the ground truth the MILP route is
tested against.

Naming throughout: sample index ``k``, neuron index ``j``, input position
``i``.  Variables are ``w_<i>_<j>``, ``c_<j>``, ``a_<k>_<j>``, ``o_<k>_<j>``,
``b_<k>_<j>``, ``dp_<k>_<j>``, ``dm_<k>_<j>``, ``s_<k>_<j>`` and inputs
``x_<k>_<i>``; tied layers use one ``wc_<class>`` variable per shared weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .modeling import Model, VarKind
from .network import Layer, LayerSpec
from .simplex import SolverConfig, solve_lp, LpStatus

__all__ = [
    "EncodingError",
    "BigM",
    "WeightWindow",
    "InputWindow",
    "build_weight_milp",
    "build_lastlayer_lp",
    "build_input_milp",
    "build_postprocess_lp",
    "enumerate_sign_patterns",
    "SignPatternResult",
    "WEIGHT_BOUND",
    "SLACK_CAP",
]

# Weights and offsets of every layer live in this box.
WEIGHT_BOUND = 1.0

# Post-processing forgives absolute deviations up to this value.
SLACK_CAP = 0.49

_PATTERN_LIMIT = 16


class EncodingError(ValueError):
    """Raised when builder inputs are malformed or out of contract."""


@dataclass(frozen=True)
class BigM:
    """Activation bound used to switch the ReLU constraints on and off.

    ``value`` = d * (1.1 * m_tilde + 0.1) + 1 where ``m_tilde`` is the
    largest input component over the batch and d the input width.  Inputs
    proposed later stay below 1.1 * m_tilde + 0.1 per component and weights
    stay in [-1, 1], so |W x + c| can never exceed ``value``.
    """

    m_tilde: float
    value: float

    def __post_init__(self) -> None:
        if self.m_tilde < 0:
            raise EncodingError("m_tilde is a maximum over nonnegative inputs")

    @classmethod
    def from_inputs(cls, inputs: np.ndarray) -> "BigM":
        inputs = np.asarray(inputs, dtype=float)
        if inputs.ndim != 2 or inputs.size == 0:
            raise EncodingError("inputs must be a non-empty (samples, width) matrix")
        m_tilde = float(np.max(inputs))
        d = inputs.shape[1]
        return cls(m_tilde, d * (1.1 * m_tilde + 0.1) + 1.0)


@dataclass(frozen=True)
class WeightWindow:
    """Per-coefficient bounds around previously learned values.

    ``around`` builds the window lower = w - factor*|w| - margin, upper =
    w + factor*|w| + margin, clipped to the global weight box; it always
    contains w itself.
    """

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape:
            raise EncodingError("window bound arrays must share a shape")
        if np.any(lo > hi):
            raise EncodingError("window has lower > upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def around(
        cls,
        previous: np.ndarray,
        factor: float = 0.6,
        margin: float = 0.01,
        bound: float = WEIGHT_BOUND,
    ) -> "WeightWindow":
        prev = np.asarray(previous, dtype=float)
        reach = factor * np.abs(prev) + margin
        return cls(np.maximum(prev - reach, -bound), np.minimum(prev + reach, bound))


@dataclass(frozen=True)
class InputWindow:
    """Per-component bounds around a previous input vector: lower =
    max(0, 0.9*x - 0.1), upper = 1.1*x + 0.1."""

    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def around(
        cls,
        previous: np.ndarray,
        grow: float = 1.1,
        shrink: float = 0.9,
        margin: float = 0.1,
    ) -> "InputWindow":
        prev = np.asarray(previous, dtype=float)
        return cls(np.maximum(0.0, shrink * prev - margin), grow * prev + margin)


# -- shared validation helpers ---------------------------------------------


def _check_inputs(inputs: np.ndarray) -> np.ndarray:
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim != 2 or inputs.shape[0] == 0:
        raise EncodingError("inputs must be a non-empty (samples, width) matrix")
    if not np.all(np.isfinite(inputs)):
        raise EncodingError("inputs contain non-finite values")
    if np.any(inputs < 0):
        raise EncodingError("inputs must be nonnegative (they are ReLU outputs or pixels)")
    return inputs


def _check_binary_targets(targets: np.ndarray) -> None:
    if not np.all((targets == 0.0) | (targets == 1.0)):
        raise EncodingError("targets must be exactly 0 or 1 for identity-layer objectives")


def _window_bounds(
    window: WeightWindow | None, shape: tuple[int, ...]
) -> tuple[np.ndarray, np.ndarray]:
    if window is None:
        lo = np.full(shape, -WEIGHT_BOUND)
        hi = np.full(shape, WEIGHT_BOUND)
        return lo, hi
    if window.lower.shape != shape:
        raise EncodingError(
            f"weight window shape {window.lower.shape} does not match {shape}"
        )
    return window.lower, window.upper


# -- weight problems -------------------------------------------------------


def _add_neuron_weight_vars(
    model: Model,
    spec: LayerSpec,
    neurons: list[int],
    window: WeightWindow | None,
    single: bool = False,
):
    """Weight/offset variables for the given neurons.  Dense layers get
    w_<i>_<j> and c_<j>; tied layers get one wc_<class> per shared value and
    pinned-zero offsets.  Window shapes: (d+1,) for a single-neuron build
    (weights in input order, then the offset), (n, d+1) for a joint dense
    build, (num_classes,) for a tied build.  Returns functions mapping
    (j, i) -> handle-or-None and j -> offset handle."""
    if spec.tying is None:
        if single:
            lo, hi = _window_bounds(window, (spec.in_dim + 1,))
            lo, hi = lo[None, :], hi[None, :]
        else:
            lo, hi = _window_bounds(window, (len(neurons), spec.in_dim + 1))
        whandles = {}
        chandles = {}
        for row, j in enumerate(neurons):
            for i in range(spec.in_dim):
                whandles[(j, i)] = model.add_var(f"w_{i}_{j}", lo[row, i], hi[row, i])
            chandles[j] = model.add_var(f"c_{j}", lo[row, spec.in_dim], hi[row, spec.in_dim])
        return (lambda j, i: whandles[(j, i)]), (lambda j: chandles[j])

    tying = spec.tying
    lo, hi = _window_bounds(window, (tying.num_classes,))
    class_handles = [
        model.add_var(f"wc_{cls}", lo[cls], hi[cls]) for cls in range(tying.num_classes)
    ]
    chandles = {j: model.add_var(f"c_{j}", 0.0, 0.0) for j in neurons}

    def weight(j: int, i: int):
        cls = tying.class_map[j, i]
        return class_handles[cls] if cls >= 0 else None

    return weight, (lambda j: chandles[j])


def _add_relu_block(
    model: Model,
    k: int,
    j: int,
    a_expr,
    target: float,
    big_m: float,
):
    """Per-sample ReLU semantics: defining equality for a, the five
    activation inequalities, and the deviation link o - t = dp - dm."""
    a = model.add_var(f"a_{k}_{j}", -big_m, big_m)
    o = model.add_var(f"o_{k}_{j}", 0.0, big_m)
    b = model.add_var(f"b_{k}_{j}", 0.0, 1.0, VarKind.BINARY)
    dp = model.add_var(f"dp_{k}_{j}", 0.0, np.inf)
    dm = model.add_var(f"dm_{k}_{j}", 0.0, np.inf)
    model.add_constraint(a - a_expr, "=", 0.0, name=f"def_a_{k}_{j}")
    model.add_constraint(a - big_m * b, ">=", -big_m, name=f"fire_lb_{k}_{j}")
    model.add_constraint(a - big_m * b, "<=", 0.0, name=f"fire_ub_{k}_{j}")
    model.add_constraint(o - a - big_m * b, ">=", -big_m, name=f"match_lb_{k}_{j}")
    model.add_constraint(o - a + big_m * b, "<=", big_m, name=f"match_ub_{k}_{j}")
    model.add_constraint(o - big_m * b, "<=", 0.0, name=f"out_ub_{k}_{j}")
    model.add_constraint(o - dp + dm, "=", float(target), name=f"dev_{k}_{j}")
    return dp, dm


def build_weight_milp(
    layer: LayerSpec,
    neuron: int | None,
    inputs: np.ndarray,
    targets: np.ndarray,
    big_m: BigM,
    window: WeightWindow | None = None,
) -> Model:
    """Weight update for a ReLU layer as a MILP.

    With ``neuron`` an index, the problem covers that single neuron (targets
    is an m-vector) — the standard decomposition for dense layers.  With
    ``neuron=None`` the problem covers the whole layer jointly (targets is
    an (m, n) matrix); tied layers must be built this way because shared
    weights couple their neurons.  The objective is the summed absolute
    deviation of the ReLU outputs from the targets.
    """
    inputs = _check_inputs(inputs)
    m, d = inputs.shape
    if d != layer.in_dim:
        raise EncodingError(f"inputs have width {d}, layer expects {layer.in_dim}")
    targets = np.asarray(targets, dtype=float)
    if not np.all(np.isfinite(targets)):
        raise EncodingError("targets contain non-finite values")

    if neuron is not None:
        if layer.tying is not None:
            raise EncodingError(
                "tied layers couple all neurons through shared weights; "
                "build them jointly with neuron=None"
            )
        if not 0 <= neuron < layer.out_dim:
            raise EncodingError(f"neuron {neuron} out of range for width {layer.out_dim}")
        if targets.shape != (m,):
            raise EncodingError(f"targets must have shape ({m},) for one neuron")
        neurons = [neuron]
        tcol = {neuron: targets}
        name = f"weights_neuron_{neuron}"
    else:
        if targets.shape != (m, layer.out_dim):
            raise EncodingError(
                f"targets must have shape ({m}, {layer.out_dim}) for a joint build"
            )
        neurons = list(range(layer.out_dim))
        tcol = {j: targets[:, j] for j in neurons}
        name = "weights_layer"

    model = Model(name)
    weight, offset = _add_neuron_weight_vars(
        model, layer, neurons, window, single=neuron is not None
    )
    objective = None
    for j in neurons:
        for k in range(m):
            expr = 1.0 * offset(j)
            for i in range(d):
                wh = weight(j, i)
                if wh is not None and inputs[k, i] != 0.0:
                    expr = expr + inputs[k, i] * wh
            dp, dm = _add_relu_block(model, k, j, expr, tcol[j][k], big_m.value)
            objective = dp + dm if objective is None else objective + dp + dm
    model.set_objective(objective)
    return model


def build_lastlayer_lp(
    layer: LayerSpec,
    neuron: int,
    inputs: np.ndarray,
    targets: np.ndarray,
    window: WeightWindow | None = None,
) -> Model:
    """Weight update for one output neuron with the ReLU replaced by the
    identity.  No binaries: the pre-activation itself is the output.  For
    target 0 only the positive deviation is penalized (a network that drives
    the value negative is as good as one that hits zero); for target 1 both
    deviations count."""
    inputs = _check_inputs(inputs)
    m, d = inputs.shape
    if d != layer.in_dim:
        raise EncodingError(f"inputs have width {d}, layer expects {layer.in_dim}")
    if not 0 <= neuron < layer.out_dim:
        raise EncodingError(f"neuron {neuron} out of range for width {layer.out_dim}")
    targets = np.asarray(targets, dtype=float)
    if targets.shape != (m,):
        raise EncodingError(f"targets must have shape ({m},)")
    _check_binary_targets(targets)
    if layer.tying is not None:
        raise EncodingError("the identity output layer does not support weight tying")

    model = Model(f"lastlayer_neuron_{neuron}")
    weight, offset = _add_neuron_weight_vars(model, layer, [neuron], window, single=True)
    j = neuron
    objective = None
    for k in range(m):
        a = model.add_var(f"a_{k}_{j}", -np.inf, np.inf)
        dp = model.add_var(f"dp_{k}_{j}", 0.0, np.inf)
        dm = model.add_var(f"dm_{k}_{j}", 0.0, np.inf)
        expr = a - 1.0 * offset(j)
        for i in range(d):
            if inputs[k, i] != 0.0:
                expr = expr - inputs[k, i] * weight(j, i)
        model.add_constraint(expr, "=", 0.0, name=f"def_a_{k}_{j}")
        model.add_constraint(a - dp + dm, "=", float(targets[k]), name=f"dev_{k}_{j}")
        term = dp + dm if targets[k] == 1.0 else 1.0 * dp
        objective = term if objective is None else objective + term
    model.set_objective(objective)
    return model


def build_input_milp(
    layer: Layer,
    targets: np.ndarray,
    prev_inputs: np.ndarray,
    big_m: BigM | None,
    last_layer: bool = False,
) -> list[Model]:
    """Input proposals: with the layer's weights frozen, one problem per
    sample looks for inputs inside the window around the previous ones that
    the layer maps as close to the targets as possible.  Hidden layers need
    the ReLU binaries (a MILP); the last layer is a plain LP with the
    asymmetric deviation objective."""
    prev_inputs = _check_inputs(prev_inputs)
    m, d = prev_inputs.shape
    spec = layer.spec
    if d != spec.in_dim:
        raise EncodingError(f"inputs have width {d}, layer expects {spec.in_dim}")
    targets = np.asarray(targets, dtype=float)
    if targets.shape != (m, spec.out_dim):
        raise EncodingError(f"targets must have shape ({m}, {spec.out_dim})")
    if not np.all(np.isfinite(targets)):
        raise EncodingError("targets contain non-finite values")
    if np.any(np.abs(layer.W) > WEIGHT_BOUND + 1e-9) or np.any(
        np.abs(layer.c) > WEIGHT_BOUND + 1e-9
    ):
        raise EncodingError("layer weights must lie within the global weight box")
    if last_layer:
        _check_binary_targets(targets)
    elif big_m is None:
        raise EncodingError("hidden-layer input proposals need a big-M value")

    models = []
    for k in range(m):
        win = InputWindow.around(prev_inputs[k])
        model = Model(f"inputs_sample_{k}")
        xs = [
            model.add_var(f"x_{k}_{i}", win.lower[i], win.upper[i]) for i in range(d)
        ]
        objective = None
        for j in range(spec.out_dim):
            expr = _row_expr(layer.W[j], xs, layer.c[j])
            if last_layer:
                a = model.add_var(f"a_{k}_{j}", -np.inf, np.inf)
                dp = model.add_var(f"dp_{k}_{j}", 0.0, np.inf)
                dm = model.add_var(f"dm_{k}_{j}", 0.0, np.inf)
                model.add_constraint(a - expr, "=", 0.0, name=f"def_a_{k}_{j}")
                model.add_constraint(
                    a - dp + dm, "=", float(targets[k, j]), name=f"dev_{k}_{j}"
                )
                term = dp + dm if targets[k, j] == 1.0 else 1.0 * dp
            else:
                dp, dm = _add_relu_block(
                    model, k, j, expr, targets[k, j], big_m.value
                )
                term = dp + dm
            objective = term if objective is None else objective + term
        model.set_objective(objective)
        models.append(model)
    return models


def _row_expr(row: np.ndarray, xs: list, constant: float):
    """Constant-weight row W[j] . x + c as an expression over input vars."""
    expr = None
    for coef, x in zip(row, xs):
        if coef != 0.0:
            term = float(coef) * x
            expr = term if expr is None else expr + term
    if expr is None:
        expr = 0.0 * xs[0]
    return expr + float(constant)


def build_postprocess_lp(
    layer: LayerSpec,
    inputs: np.ndarray,
    targets: np.ndarray,
    window: WeightWindow | None = None,
    neuron: int | None = None,
) -> Model:
    """Last-layer touch-up: like the identity-layer weight LP, but absolute
    deviations up to SLACK_CAP are free.  An objective of zero therefore
    certifies that target-1 outputs sit at or above 1 - SLACK_CAP and
    target-0 outputs at or below SLACK_CAP: the two classes stay separated
    around one half.

    The problem separates per output neuron; ``neuron`` restricts the build
    to one of them (window shape (d+1,)), otherwise the whole layer is built
    ((n, d+1))."""
    inputs = _check_inputs(inputs)
    m, d = inputs.shape
    if d != layer.in_dim:
        raise EncodingError(f"inputs have width {d}, layer expects {layer.in_dim}")
    if layer.tying is not None:
        raise EncodingError("the identity output layer does not support weight tying")
    targets = np.asarray(targets, dtype=float)
    if neuron is None:
        if targets.shape != (m, layer.out_dim):
            raise EncodingError(f"targets must have shape ({m}, {layer.out_dim})")
        _check_binary_targets(targets)
        if not np.all(np.sum(targets, axis=1) == 1.0):
            raise EncodingError("each target row must be one-hot")
        neurons = list(range(layer.out_dim))
        tcol = {j: targets[:, j] for j in neurons}
    else:
        if not 0 <= neuron < layer.out_dim:
            raise EncodingError(f"neuron {neuron} out of range for width {layer.out_dim}")
        if targets.shape != (m,):
            raise EncodingError(f"targets must have shape ({m},) for one neuron")
        _check_binary_targets(targets)
        neurons = [neuron]
        tcol = {neuron: targets}

    model = Model("postprocess" if neuron is None else f"postprocess_neuron_{neuron}")
    weight, offset = _add_neuron_weight_vars(
        model, layer, neurons, window, single=neuron is not None
    )
    objective = None
    for j in neurons:
        for k in range(m):
            a = model.add_var(f"a_{k}_{j}", -np.inf, np.inf)
            dp = model.add_var(f"dp_{k}_{j}", 0.0, np.inf)
            dm = model.add_var(f"dm_{k}_{j}", 0.0, np.inf)
            s = model.add_var(f"s_{k}_{j}", 0.0, SLACK_CAP)
            expr = a - 1.0 * offset(j)
            for i in range(d):
                if inputs[k, i] != 0.0:
                    expr = expr - inputs[k, i] * weight(j, i)
            model.add_constraint(expr, "=", 0.0, name=f"def_a_{k}_{j}")
            model.add_constraint(a - dp + dm, "=", float(tcol[j][k]), name=f"dev_{k}_{j}")
            if tcol[j][k] == 1.0:
                model.add_constraint(s - dp - dm, "<=", 0.0, name=f"cap_{k}_{j}")
                term = dp + dm - s
            else:
                model.add_constraint(s - dp, "<=", 0.0, name=f"cap_{k}_{j}")
                term = dp - s
            objective = term if objective is None else objective + term
    model.set_objective(objective)
    return model


# -- brute-force reference -------------------------------------------------


@dataclass(frozen=True)
class SignPatternResult:
    """Best objective over all fire/off patterns, with a witness."""

    objective: float
    weights: np.ndarray
    offset: float
    pattern: tuple[int, ...]


def enumerate_sign_patterns(
    layer: LayerSpec,
    neuron: int,
    inputs: np.ndarray,
    targets: np.ndarray,
    config: SolverConfig | None = None,
) -> SignPatternResult:
    """Solve the single-neuron weight problem by brute force: for each of
    the 2^m on/off patterns, fix which samples fire and solve the resulting
    LP (a >= 0 with the deviation measured on a, or a <= 0 with the output
    pinned to zero).  Patterns are scanned in ascending binary order and
    ties keep the first, so results are deterministic."""
    inputs = _check_inputs(inputs)
    m, d = inputs.shape
    if d != layer.in_dim:
        raise EncodingError(f"inputs have width {d}, layer expects {layer.in_dim}")
    if layer.tying is not None:
        raise EncodingError("pattern enumeration covers untied neurons only")
    if not 0 <= neuron < layer.out_dim:
        raise EncodingError(f"neuron {neuron} out of range for width {layer.out_dim}")
    targets = np.asarray(targets, dtype=float)
    if targets.shape != (m,):
        raise EncodingError(f"targets must have shape ({m},)")
    if m > _PATTERN_LIMIT:
        raise EncodingError(
            f"{m} samples means 2^{m} pattern LPs; refusing beyond 2^{_PATTERN_LIMIT}"
        )
    if config is None:
        config = SolverConfig()

    j = neuron
    best: SignPatternResult | None = None
    for pattern in range(1 << m):
        fires = tuple((pattern >> k) & 1 for k in range(m))
        model = Model(f"pattern_{pattern}")
        weight, offset = _add_neuron_weight_vars(model, layer, [j], None, single=True)
        objective = None
        for k in range(m):
            a = model.add_var(f"a_{k}_{j}", -np.inf, np.inf)
            dp = model.add_var(f"dp_{k}_{j}", 0.0, np.inf)
            dm = model.add_var(f"dm_{k}_{j}", 0.0, np.inf)
            expr = a - 1.0 * offset(j)
            for i in range(d):
                if inputs[k, i] != 0.0:
                    expr = expr - inputs[k, i] * weight(j, i)
            model.add_constraint(expr, "=", 0.0, name=f"def_a_{k}_{j}")
            if fires[k]:
                model.add_constraint(1.0 * a, ">=", 0.0, name=f"sign_{k}_{j}")
                model.add_constraint(
                    a - dp + dm, "=", float(targets[k]), name=f"dev_{k}_{j}"
                )
            else:
                model.add_constraint(1.0 * a, "<=", 0.0, name=f"sign_{k}_{j}")
                model.add_constraint(
                    dp - dm, "=", -float(targets[k]), name=f"dev_{k}_{j}"
                )
            objective = dp + dm if objective is None else objective + dp + dm
        model.set_objective(objective)
        sol = solve_lp(model.compile(), config)
        if sol.status != LpStatus.OPTIMAL:
            continue
        if best is None or sol.objective < best.objective - 0.0:
            w = np.array([model.value_of(sol.values, f"w_{i}_{j}") for i in range(d)])
            c = model.value_of(sol.values, f"c_{j}")
            best = SignPatternResult(sol.objective, w, float(c), fires)
    assert best is not None, "the all-off pattern is always feasible"
    return best
