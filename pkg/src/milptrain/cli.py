"""Command-line front end: train on IDX image data, evaluate saved models
(optionally as a three-member committee), and export weight subproblems in
LP text format for inspection by external solvers.

Exit codes: 0 on success, 1 on runtime or data errors, 2 on usage errors
(the argument parser's own convention).
"""

from __future__ import annotations

import argparse
import re
import sys

import numpy as np

from .dataset import (
    IdxError,
    ImageSet,
    downsample_set,
    load_split,
    make_batches,
)
from .encodings import BigM, EncodingError, build_weight_milp
from .modeling import ModelError
from .network import (
    LayerSpec,
    ModelIOError,
    Network,
    accuracy,
    conv_tying,
    forward_batch,
    load_network,
    save_network,
)
from .simplex import ProblemError, SolverError
from .trainer import (
    TrainConfig,
    committee_accuracy,
    metrics_to_csv,
    train_batched_stream,
)

__all__ = ["main", "parse_arch"]

_CONV_SEGMENT = re.compile(r"conv(\d+)x(\d+)k(\d+)\Z")


def parse_arch(text: str) -> list[LayerSpec]:
    """Parse an architecture descriptor into a layer chain.

    Segments are joined by '+'.  A 'dense:49-8-8-10' segment lists
    consecutive widths; a 'conv7x7k3' segment is a stride-1 convolution
    over an HxW input with a KxK kernel, producing (H-K+1)*(W-K+1)
    outputs.  Adjacent segments must agree on width, so the example above
    continues as 'conv7x7k3+dense:25-10'.
    """
    specs: list[LayerSpec] = []
    prev_width: int | None = None
    for segment in text.split("+"):
        conv = _CONV_SEGMENT.match(segment)
        if conv:
            height, width, kernel = (int(g) for g in conv.groups())
            if kernel < 1 or kernel > min(height, width):
                raise ValueError(f"kernel {kernel} does not fit a {height}x{width} input")
            in_dim = height * width
            if prev_width is not None and prev_width != in_dim:
                raise ValueError(
                    f"segment {segment!r} expects width {in_dim}, got {prev_width}"
                )
            tying = conv_tying(height, width, kernel)
            out_dim = (height - kernel + 1) * (width - kernel + 1)
            specs.append(LayerSpec(in_dim, out_dim, "relu", tying))
            prev_width = out_dim
        elif segment.startswith("dense:"):
            body = segment[len("dense:"):]
            try:
                widths = [int(part) for part in body.split("-")]
            except ValueError:
                raise ValueError(f"bad dense segment {segment!r}")
            if len(widths) < 2 or any(w < 1 for w in widths):
                raise ValueError(f"dense segment {segment!r} needs >= 2 positive widths")
            if prev_width is not None and widths[0] != prev_width:
                raise ValueError(
                    f"segment {segment!r} starts at width {widths[0]}, "
                    f"previous segment ends at {prev_width}"
                )
            for a, b in zip(widths, widths[1:]):
                specs.append(LayerSpec(a, b, "relu"))
            prev_width = widths[-1]
        else:
            raise ValueError(
                f"bad architecture segment {segment!r}; expected 'dense:...' or 'convHxWkK'"
            )
    if not specs:
        raise ValueError("empty architecture")
    return specs


def _fit_images(data: ImageSet, input_dim: int, what: str) -> ImageSet:
    """Match the image resolution to the network input width, mean-pooling
    4x4 when the architecture asks for the reduced size."""
    h, w = data.images.shape[1], data.images.shape[2]
    if input_dim == h * w:
        return data
    if h % 4 == 0 and w % 4 == 0 and input_dim == (h // 4) * (w // 4):
        return downsample_set(data)
    raise ValueError(
        f"{what}: input width {input_dim} matches neither full {h}x{w} images "
        f"({h * w}) nor 4x4 mean-pooled ones ({(h // 4) * (w // 4)})"
    )


def _flat(data: ImageSet) -> tuple[np.ndarray, np.ndarray]:
    return data.images.reshape(data.count, -1), data.labels


def cmd_train(args: argparse.Namespace) -> int:
    specs = parse_arch(args.arch)
    data = _fit_images(load_split(args.data_dir, "train"), specs[0].in_dim, "train data")
    batches = make_batches(data, args.batch_size)
    if args.batches is not None:
        if args.batches < 1:
            raise ValueError("--batches must be >= 1")
        batches = batches[: args.batches]
    test_data = None
    try:
        test_set = load_split(args.data_dir, "test")
    except IdxError:
        test_set = None
    if test_set is not None:
        test_data = _flat(_fit_images(test_set, specs[0].in_dim, "test data"))
    config = TrainConfig(
        batch_size=args.batch_size,
        seed=args.seed,
        init_low=-args.init_range,
        init_high=args.init_range,
        postprocess_every=args.postprocess_every,
        node_limit=args.node_limit,
        time_limit=args.time_limit if args.time_limit > 0 else None,
        jobs=args.jobs,
    )
    result = train_batched_stream(specs, batches, config, test_data)
    if args.model_out:
        save_network(result.network, args.model_out)
    if args.metrics_out:
        with open(args.metrics_out, "w", encoding="ascii") as handle:
            handle.write(metrics_to_csv(result.metrics))
    last = result.metrics[-1]
    print(f"final batch accuracy {last.batch_accuracy:.4f}")
    print(f"cumulative accuracy {last.cumulative_accuracy:.4f}")
    if last.test_accuracy is not None:
        print(f"test accuracy {last.test_accuracy:.4f}")
    for report in result.reports:
        for note in report.diagnostics:
            print(f"note: {note}", file=sys.stderr)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    if args.committee:
        nets = [load_network(path) for path in args.committee]
        widths = {net.input_dim for net in nets}
        if len(widths) != 1:
            raise ValueError("committee models disagree on input width")
        input_dim = widths.pop()
    else:
        nets = [load_network(args.model)]
        input_dim = nets[0].input_dim
    data = _fit_images(load_split(args.data_dir, args.split), input_dim, f"{args.split} data")
    X, labels = _flat(data)
    if args.committee:
        acc = committee_accuracy(nets, X, labels)
    else:
        acc = accuracy(nets[0], X, labels)
    print(f"accuracy {acc:.4f}")
    return 0


def cmd_export_lp(args: argparse.Namespace) -> int:
    net = load_network(args.model)
    if not 0 <= args.layer < len(net.layers):
        raise ValueError(
            f"layer {args.layer} out of range for a {len(net.layers)}-layer model"
        )
    if args.samples < 1:
        raise ValueError("--samples must be >= 1")
    spec = net.layers[args.layer].spec
    if args.neuron is not None and not 0 <= args.neuron < spec.out_dim:
        raise ValueError(f"neuron {args.neuron} out of range for width {spec.out_dim}")
    # Deterministic probe batch: inputs drawn on the data cube and pushed
    # through the saved weights up to the chosen layer, targets drawn on
    # [0, 2].  The exported problem depends only on the model file.
    rng = np.random.default_rng(0)
    probe = rng.uniform(0.0, 1.0, size=(args.samples, net.input_dim))
    if args.layer == 0:
        inputs = probe
    else:
        inputs = forward_batch(net, probe)[args.layer - 1][1]
    if args.neuron is None:
        targets = rng.uniform(0.0, 2.0, size=(args.samples, spec.out_dim))
    else:
        targets = rng.uniform(0.0, 2.0, size=args.samples)
    model = build_weight_milp(spec, args.neuron, inputs, targets, BigM.from_inputs(inputs))
    model.export_lp_format(args.out)
    problem = model.compile()
    print(
        f"wrote {args.out}: {problem.base.objective.size} variables, "
        f"{len(problem.binary_vars)} binaries"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="milptrain",
        description="Train and evaluate small ReLU networks with an exact LP/MILP engine.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train a network on IDX image data")
    train.add_argument("--data-dir", required=True, help="directory with IDX train/test files")
    train.add_argument("--arch", default="dense:49-8-8-10", help="architecture descriptor")
    train.add_argument("--batch-size", type=int, default=100)
    train.add_argument("--batches", type=int, default=None, help="limit number of batches")
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--time-limit", type=float, default=30.0,
                       help="per-subproblem wall clock cap in seconds (<= 0 disables)")
    train.add_argument("--node-limit", type=int, default=50_000,
                       help="per-subproblem branch-and-bound node cap")
    train.add_argument("--postprocess-every", type=int, default=10)
    train.add_argument("--model-out", default=None, help="where to write the trained model")
    train.add_argument("--metrics-out", default=None, help="where to write the metrics table")
    train.add_argument("--init-range", type=float, default=1.0,
                       help="initial weights drawn uniformly from [-r, r]")
    train.add_argument("--jobs", type=int, default=1, help="parallel subproblem workers")
    train.set_defaults(func=cmd_train)

    evaluate = sub.add_parser("eval", help="evaluate a saved model or committee")
    evaluate.add_argument("--data-dir", required=True)
    evaluate.add_argument("--split", choices=("train", "test"), default="test")
    which = evaluate.add_mutually_exclusive_group(required=True)
    which.add_argument("--model", help="single model file")
    which.add_argument("--committee", nargs=3, metavar="MODEL",
                       help="three model files for majority voting")
    evaluate.set_defaults(func=cmd_eval)

    export = sub.add_parser("export-lp", help="write a weight subproblem as an LP file")
    export.add_argument("--model", required=True)
    export.add_argument("--layer", type=int, required=True)
    export.add_argument("--neuron", type=int, default=None,
                        help="neuron index; omit to export the whole layer jointly")
    export.add_argument("--samples", type=int, required=True)
    export.add_argument("--out", required=True)
    export.set_defaults(func=cmd_export_lp)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (
        OSError,
        ValueError,
        IdxError,
        ModelIOError,
        ModelError,
        ProblemError,
        EncodingError,
        SolverError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
