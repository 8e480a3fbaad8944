"""Batch training of ReLU networks by LP/MILP subproblems.

``train_batch`` runs the iterative scheme on one batch: sweep the layers
from the output back to the first, updating each layer's weights by MILP
(or by LP for the identity-treated output layer) against per-layer targets,
and proposing new inputs for each updated layer, which become the targets
of the layer below.  Accuracy is re-measured after every sweep; the loop
continues while it strictly improves.  The best snapshot seen is restored
at the end, and while accuracy is below one the output layer gets a
post-processing touch-up that only asks outputs to land on the correct
side of one half.

``train_batched_stream`` feeds consecutive batches through ``train_batch``.
From the second batch on, every weight problem is constrained to a window
around the previous batch's weights, which is what keeps earlier batches
from being forgotten, and a cumulative post-processing pass runs every few
batches.

Subproblems within one layer update (per neuron) and within one proposal
step (per sample) are independent; with ``jobs > 1`` they are solved by a
process pool.  Results are installed in task order, so the outcome does not
depend on the worker count.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .branch_bound import MilpProblem, MilpSolution, MilpStatus, solve_milp
from .dataset import Batch
from .encodings import (
    BigM,
    WeightWindow,
    build_input_milp,
    build_lastlayer_lp,
    build_postprocess_lp,
    build_weight_milp,
)
from .modeling import Model
from .network import (
    LayerSpec,
    Network,
    accuracy,
    forward_batch,
    predict,
    random_network,
)
from .simplex import LpProblem, LpStatus, SolverConfig, SolverError, solve_lp

__all__ = [
    "TrainConfig",
    "TrainState",
    "TrainReport",
    "MetricRow",
    "StreamResult",
    "SubproblemError",
    "train_batch",
    "train_batched_stream",
    "committee_predict",
    "committee_accuracy",
    "metrics_to_csv",
]


class SubproblemError(RuntimeError):
    """A weight/input/post-processing subproblem could not deliver a usable
    solution (solver failure, infeasibility, or a limit with no incumbent)."""


@dataclass(frozen=True)
class TrainConfig:
    """Knobs of the training scheme; defaults follow the reference setup."""

    max_while_iterations: int = 25
    batch_size: int = 100
    seed: int = 0
    init_low: float = -1.0
    init_high: float = 1.0
    weight_window_factor: float = 0.6
    weight_window_margin: float = 0.01
    input_window_grow: float = 1.1
    input_window_shrink: float = 0.9
    input_window_margin: float = 0.1
    postprocess_every: int = 10
    postprocess_scope: str = "seen"
    postprocess_per_batch: bool = True
    node_limit: int | None = 50_000
    time_limit: float | None = 30.0
    lp_max_iterations: int = 50_000
    jobs: int = 1

    def __post_init__(self) -> None:
        if self.max_while_iterations < 1:
            raise ValueError("need at least one while iteration")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.init_low > self.init_high:
            raise ValueError("empty init range")
        for name in (
            "weight_window_factor",
            "weight_window_margin",
            "input_window_grow",
            "input_window_shrink",
            "input_window_margin",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.postprocess_every < 1:
            raise ValueError("postprocess_every must be >= 1")
        if self.postprocess_scope not in ("seen", "all"):
            raise ValueError("postprocess_scope must be 'seen' or 'all'")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            max_iterations=self.lp_max_iterations,
            node_limit=self.node_limit,
            time_limit=self.time_limit,
        )


@dataclass
class TrainState:
    """Mutable training state threaded through batches."""

    net: Network
    best_net: Network
    best_accuracy: float
    last_accuracy: float
    prev_batch_net: Network | None = None
    target_values: dict[int, np.ndarray] = field(default_factory=dict)

    @classmethod
    def fresh(cls, specs: list[LayerSpec], config: TrainConfig) -> "TrainState":
        rng = np.random.default_rng(config.seed)
        net = random_network(specs, rng, config.init_low, config.init_high)
        return cls(net=net, best_net=net.copy(), best_accuracy=-1.0, last_accuracy=-1.0)


@dataclass
class TrainReport:
    """Outcome of one train_batch call."""

    accuracy_trace: list[float]
    final_accuracy: float
    best_accuracy: float
    iterations: int
    postprocessed: bool
    diagnostics: list[str]
    wall_time: float


@dataclass
class MetricRow:
    batch_index: int
    batch_accuracy: float
    cumulative_accuracy: float
    test_accuracy: float | None
    wall_time: float


@dataclass
class StreamResult:
    network: Network
    metrics: list[MetricRow]
    reports: list[TrainReport]
    batch_end_nets: list[Network]


def metrics_to_csv(rows: list[MetricRow]) -> str:
    lines = ["batch,batch_accuracy,cumulative_accuracy,test_accuracy,wall_time"]
    for r in rows:
        test = "" if r.test_accuracy is None else f"{r.test_accuracy:.6f}"
        lines.append(
            f"{r.batch_index},{r.batch_accuracy:.6f},{r.cumulative_accuracy:.6f},"
            f"{test},{r.wall_time:.3f}"
        )
    return "\n".join(lines) + "\n"


# -- worker-side task functions (top level so they pickle) ------------------


def _solve_milp_task(args) -> MilpSolution:
    problem, config, warm = args
    return solve_milp(problem, config, warm_start=warm)


def _solve_lp_task(args):
    problem, config = args
    return solve_lp(problem, config)


def _map_tasks(executor, fn, tasks):
    if executor is None or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    return list(executor.map(fn, tasks, chunksize=1))


# -- windows ----------------------------------------------------------------


def _layer_windows(
    anchor: Network | None, config: TrainConfig
) -> list[object] | None:
    """Per-layer window data around the anchor network's weights, or None for
    the first batch.  Dense layers get an (n, d+1) window (weights then
    offset per row); tied layers get a window over their class values."""
    if anchor is None:
        return None
    windows = []
    for layer in anchor.layers:
        if layer.spec.tying is not None:
            prev = layer.spec.tying.class_values(layer.W)
        else:
            prev = np.hstack([layer.W, layer.c[:, None]])
        windows.append(
            WeightWindow.around(
                prev, config.weight_window_factor, config.weight_window_margin
            )
        )
    return windows


def _window_row(window: WeightWindow | None, j: int) -> WeightWindow | None:
    """Slice a dense layer's (n, d+1) window down to neuron j."""
    if window is None:
        return None
    return WeightWindow(window.lower[j], window.upper[j])


# -- solution intake --------------------------------------------------------


def _usable_milp(sol: MilpSolution, what: str) -> np.ndarray:
    if sol.status in (MilpStatus.OPTIMAL, MilpStatus.FEASIBLE_AT_LIMIT):
        return sol.values
    raise SubproblemError(f"{what}: solver returned {sol.status.value}")


def _usable_lp(sol, what: str) -> np.ndarray:
    if sol.status == LpStatus.OPTIMAL:
        return sol.values
    raise SubproblemError(f"{what}: solver returned {sol.status.value}")


def _clipped(model: Model, problem, values: np.ndarray, name: str) -> float:
    """Read a variable and snap solver-tolerance drift back into its bounds."""
    base = problem.base if isinstance(problem, MilpProblem) else problem
    idx = model.var_index(name)
    return float(np.clip(values[idx], base.lower[idx], base.upper[idx]))


# -- warm starts ------------------------------------------------------------


def _warm_weight_start(
    model: Model,
    layer,
    neurons: list[int],
    inputs: np.ndarray,
    targets_by_neuron: dict[int, np.ndarray],
) -> np.ndarray:
    """Assignment matching the current weights: exact forward-pass values for
    a/o/b and the deviation split.  Always feasible for the weight MILP."""
    vec = np.zeros(model.num_vars)
    spec = layer.spec
    if spec.tying is not None:
        for cls, val in enumerate(spec.tying.class_values(layer.W)):
            vec[model.var_index(f"wc_{cls}")] = val
    else:
        for j in neurons:
            for i in range(spec.in_dim):
                vec[model.var_index(f"w_{i}_{j}")] = layer.W[j, i]
            vec[model.var_index(f"c_{j}")] = layer.c[j]
    for j in neurons:
        a_row = inputs @ layer.W[j] + layer.c[j]
        t_row = targets_by_neuron[j]
        for k in range(inputs.shape[0]):
            a = float(a_row[k])
            o = max(a, 0.0)
            vec[model.var_index(f"a_{k}_{j}")] = a
            vec[model.var_index(f"o_{k}_{j}")] = o
            vec[model.var_index(f"b_{k}_{j}")] = 1.0 if a > 0 else 0.0
            dev = o - float(t_row[k])
            vec[model.var_index(f"dp_{k}_{j}")] = max(dev, 0.0)
            vec[model.var_index(f"dm_{k}_{j}")] = max(-dev, 0.0)
    return vec


def _warm_input_start(
    model: Model, layer, k: int, prev_input: np.ndarray, targets_row: np.ndarray
) -> np.ndarray:
    """Assignment matching the unchanged input vector."""
    vec = np.zeros(model.num_vars)
    spec = layer.spec
    for i in range(spec.in_dim):
        vec[model.var_index(f"x_{k}_{i}")] = prev_input[i]
    a_row = layer.W @ prev_input + layer.c
    for j in range(spec.out_dim):
        a = float(a_row[j])
        o = max(a, 0.0)
        vec[model.var_index(f"a_{k}_{j}")] = a
        vec[model.var_index(f"o_{k}_{j}")] = o
        vec[model.var_index(f"b_{k}_{j}")] = 1.0 if a > 0 else 0.0
        dev = o - float(targets_row[j])
        vec[model.var_index(f"dp_{k}_{j}")] = max(dev, 0.0)
        vec[model.var_index(f"dm_{k}_{j}")] = max(-dev, 0.0)
    return vec


# -- layer updates ----------------------------------------------------------


def _update_last_layer(
    net: Network,
    li: int,
    inputs: np.ndarray,
    targets: np.ndarray,
    scfg: SolverConfig,
    window: WeightWindow | None,
    executor,
) -> None:
    layer = net.layers[li]
    spec = layer.spec
    models = [
        build_lastlayer_lp(spec, j, inputs, targets[:, j], _window_row(window, j))
        for j in range(spec.out_dim)
    ]
    problems = [m.compile() for m in models]
    sols = _map_tasks(executor, _solve_lp_task, [(p, scfg) for p in problems])
    W_new = layer.W.copy()
    c_new = layer.c.copy()
    for j, (model, problem, sol) in enumerate(zip(models, problems, sols)):
        values = _usable_lp(sol, f"output layer weight LP, neuron {j}")
        for i in range(spec.in_dim):
            W_new[j, i] = _clipped(model, problem, values, f"w_{i}_{j}")
        c_new[j] = _clipped(model, problem, values, f"c_{j}")
    layer.W[:, :] = W_new
    layer.c[:] = c_new


def _update_hidden_layer(
    net: Network,
    li: int,
    inputs: np.ndarray,
    targets: np.ndarray,
    scfg: SolverConfig,
    window: WeightWindow | None,
    executor,
) -> None:
    layer = net.layers[li]
    spec = layer.spec
    big_m = BigM.from_inputs(inputs)
    if spec.tying is not None:
        model = build_weight_milp(spec, None, inputs, targets, big_m, window)
        problem = model.compile()
        warm = _warm_weight_start(
            model, layer, list(range(spec.out_dim)), inputs,
            {j: targets[:, j] for j in range(spec.out_dim)},
        )
        sol = _map_tasks(executor, _solve_milp_task, [(problem, scfg, warm)])[0]
        values = _usable_milp(sol, f"tied weight MILP, layer {li}")
        classes = np.array(
            [_clipped(model, problem, values, f"wc_{cls}") for cls in range(spec.tying.num_classes)]
        )
        layer.W[:, :] = spec.tying.materialize(classes)
        layer.c[:] = 0.0
        return

    models = []
    tasks = []
    for j in range(spec.out_dim):
        model = build_weight_milp(
            spec, j, inputs, targets[:, j], big_m, _window_row(window, j)
        )
        problem = model.compile()
        warm = _warm_weight_start(model, layer, [j], inputs, {j: targets[:, j]})
        models.append((model, problem))
        tasks.append((problem, scfg, warm))
    sols = _map_tasks(executor, _solve_milp_task, tasks)
    W_new = layer.W.copy()
    c_new = layer.c.copy()
    for j, ((model, problem), sol) in enumerate(zip(models, sols)):
        values = _usable_milp(sol, f"weight MILP, layer {li}, neuron {j}")
        for i in range(spec.in_dim):
            W_new[j, i] = _clipped(model, problem, values, f"w_{i}_{j}")
        c_new[j] = _clipped(model, problem, values, f"c_{j}")
    layer.W[:, :] = W_new
    layer.c[:] = c_new


def _propose_inputs(
    layer,
    targets: np.ndarray,
    prev_inputs: np.ndarray,
    is_last: bool,
    scfg: SolverConfig,
    executor,
) -> np.ndarray:
    m, d = prev_inputs.shape
    big_m = None if is_last else BigM.from_inputs(prev_inputs)
    models = build_input_milp(layer, targets, prev_inputs, big_m, last_layer=is_last)
    problems = [mo.compile() for mo in models]
    if is_last:
        sols = _map_tasks(executor, _solve_lp_task, [(p, scfg) for p in problems])
    else:
        tasks = []
        for k, (mo, p) in enumerate(zip(models, problems)):
            warm = _warm_input_start(mo, layer, k, prev_inputs[k], targets[k])
            tasks.append((p, scfg, warm))
        sols = _map_tasks(executor, _solve_milp_task, tasks)
    out = np.empty_like(prev_inputs)
    for k, (mo, p, sol) in enumerate(zip(models, problems, sols)):
        if is_last:
            values = _usable_lp(sol, f"input proposal LP, sample {k}")
        else:
            values = _usable_milp(sol, f"input proposal MILP, sample {k}")
        for i in range(d):
            out[k, i] = _clipped(mo, p, values, f"x_{k}_{i}")
    return out


def _postprocess_last_layer(
    net: Network,
    X: np.ndarray,
    targets: np.ndarray,
    scfg: SolverConfig,
    windows: list | None,
    executor,
) -> None:
    li = len(net.layers) - 1
    layer = net.layers[li]
    spec = layer.spec
    inputs = X if li == 0 else forward_batch(net, X)[li - 1][1]
    window = windows[li] if windows is not None else None
    models = []
    tasks = []
    for j in range(spec.out_dim):
        model = build_postprocess_lp(
            spec, inputs, targets[:, j], window=_window_row(window, j), neuron=j
        )
        problem = model.compile()
        models.append((model, problem))
        tasks.append((problem, scfg))
    sols = _map_tasks(executor, _solve_lp_task, tasks)
    W_new = layer.W.copy()
    c_new = layer.c.copy()
    for j, ((model, problem), sol) in enumerate(zip(models, sols)):
        values = _usable_lp(sol, f"post-processing LP, neuron {j}")
        for i in range(spec.in_dim):
            W_new[j, i] = _clipped(model, problem, values, f"w_{i}_{j}")
        c_new[j] = _clipped(model, problem, values, f"c_{j}")
    layer.W[:, :] = W_new
    layer.c[:] = c_new


def _sweep(
    state: TrainState,
    X: np.ndarray,
    T: np.ndarray,
    scfg: SolverConfig,
    windows: list | None,
    executor,
) -> None:
    """One backward pass: update weights layer by layer from the output down,
    deriving each hidden layer's targets from the layer above's input
    proposals.  The output layer always trains against the ground truth."""
    net = state.net
    L = len(net.layers)
    targets: dict[int, np.ndarray] = {L - 1: T}
    for li in range(L - 1, -1, -1):
        inputs = X if li == 0 else forward_batch(net, X)[li - 1][1]
        is_last = li == L - 1
        window = windows[li] if windows is not None else None
        try:
            if is_last:
                _update_last_layer(net, li, inputs, targets[li], scfg, window, executor)
            else:
                _update_hidden_layer(net, li, inputs, targets[li], scfg, window, executor)
            if li > 0:
                targets[li - 1] = _propose_inputs(
                    net.layers[li], targets[li], inputs, is_last, scfg, executor
                )
        except SolverError as exc:
            raise SubproblemError(f"layer {li}: {exc}") from exc
    state.target_values = targets


def train_batch(
    state: TrainState,
    batch: Batch,
    config: TrainConfig,
    executor=None,
) -> TrainReport:
    """Train on one batch until accuracy stops improving.  Mutates
    ``state.net``; windows from ``state.prev_batch_net`` apply when set.  On
    subproblem failure the loop aborts, the best snapshot is kept, and the
    failure is reported in the diagnostics."""
    t0 = time.monotonic()
    X = np.asarray(batch.inputs, dtype=float)
    T = np.asarray(batch.targets, dtype=float)
    labels = np.asarray(batch.labels)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("batch must be non-empty with flat inputs")
    if X.shape[1] != state.net.input_dim:
        raise ValueError(
            f"batch width {X.shape[1]} does not match network input {state.net.input_dim}"
        )
    if T.shape != (X.shape[0], state.net.output_dim):
        raise ValueError("targets must be one row per sample over the output width")

    scfg = config.solver_config()
    windows = _layer_windows(state.prev_batch_net, config)
    own_pool = executor is None and config.jobs > 1
    if own_pool:
        executor = ProcessPoolExecutor(max_workers=config.jobs)
    diagnostics: list[str] = []
    postprocessed = False
    try:
        acc = accuracy(state.net, X, labels)
        trace = [acc]
        state.best_net = state.net.copy()
        state.best_accuracy = acc
        state.last_accuracy = -1.0
        iterations = 0
        while acc > state.last_accuracy and iterations < config.max_while_iterations:
            state.last_accuracy = acc
            try:
                _sweep(state, X, T, scfg, windows, executor)
            except SubproblemError as exc:
                diagnostics.append(str(exc))
                # A sweep can fail after some layers were already updated;
                # fall back to the best whole-network snapshot.
                state.net = state.best_net.copy()
                break
            iterations += 1
            acc = accuracy(state.net, X, labels)
            trace.append(acc)
            if acc > state.best_accuracy:
                state.best_accuracy = acc
                state.best_net = state.net.copy()

        if state.best_accuracy > acc:
            state.net = state.best_net.copy()
            acc = state.best_accuracy
        if acc < 1.0 and config.postprocess_per_batch:
            try:
                _postprocess_last_layer(state.net, X, T, scfg, windows, executor)
                postprocessed = True
            except (SubproblemError, SolverError) as exc:
                diagnostics.append(f"post-processing: {exc}")
        final = accuracy(state.net, X, labels)
    finally:
        if own_pool:
            executor.shutdown()
    return TrainReport(
        accuracy_trace=trace,
        final_accuracy=final,
        best_accuracy=state.best_accuracy,
        iterations=iterations,
        postprocessed=postprocessed,
        diagnostics=diagnostics,
        wall_time=time.monotonic() - t0,
    )


def train_batched_stream(
    specs: list[LayerSpec],
    batches: list[Batch],
    config: TrainConfig,
    test_data: tuple[np.ndarray, np.ndarray] | None = None,
    initial_net: Network | None = None,
) -> StreamResult:
    """Train over consecutive batches.  From the second batch on, weight
    problems are windowed around the previous batch's weights.  Every
    ``postprocess_every`` batches, the output layer is post-processed over
    the configured scope ('seen': all samples so far, 'all': every batch in
    the stream).  ``test_data`` is an optional (inputs, labels) pair scored
    after every batch."""
    if not batches:
        raise ValueError("need at least one batch")
    if initial_net is not None:
        state = TrainState(
            net=initial_net.copy(),
            best_net=initial_net.copy(),
            best_accuracy=-1.0,
            last_accuracy=-1.0,
        )
    else:
        state = TrainState.fresh(specs, config)
    scfg = config.solver_config()
    executor = ProcessPoolExecutor(max_workers=config.jobs) if config.jobs > 1 else None
    metrics: list[MetricRow] = []
    reports: list[TrainReport] = []
    batch_end_nets: list[Network] = []
    try:
        seen_X: list[np.ndarray] = []
        seen_T: list[np.ndarray] = []
        seen_labels: list[np.ndarray] = []
        for t, batch in enumerate(batches):
            t_start = time.monotonic()
            report = train_batch(state, batch, config, executor)
            reports.append(report)
            seen_X.append(np.asarray(batch.inputs, dtype=float))
            seen_T.append(np.asarray(batch.targets, dtype=float))
            seen_labels.append(np.asarray(batch.labels))

            if (t + 1) % config.postprocess_every == 0:
                if config.postprocess_scope == "seen":
                    px = np.vstack(seen_X)
                    pt = np.vstack(seen_T)
                else:
                    px = np.vstack([np.asarray(b.inputs, dtype=float) for b in batches])
                    pt = np.vstack([np.asarray(b.targets, dtype=float) for b in batches])
                windows = _layer_windows(state.prev_batch_net, config)
                try:
                    _postprocess_last_layer(state.net, px, pt, scfg, windows, executor)
                except (SubproblemError, SolverError) as exc:
                    report.diagnostics.append(f"stream post-processing: {exc}")

            batch_acc = accuracy(state.net, batch.inputs, batch.labels)
            cum_acc = accuracy(state.net, np.vstack(seen_X), np.concatenate(seen_labels))
            test_acc = None
            if test_data is not None:
                test_acc = accuracy(state.net, test_data[0], test_data[1])
            metrics.append(
                MetricRow(t, batch_acc, cum_acc, test_acc, time.monotonic() - t_start)
            )
            batch_end_nets.append(state.net.copy())
            state.prev_batch_net = state.net.copy()
    finally:
        if executor is not None:
            executor.shutdown()
    return StreamResult(state.net, metrics, reports, batch_end_nets)


def _check_committee(nets: list[Network]) -> None:
    if len(nets) != 3:
        raise ValueError("a committee is exactly three networks")
    width = nets[0].input_dim
    if any(net.input_dim != width for net in nets):
        raise ValueError("committee networks disagree on input width")


def _vote(labs: list[int], closeness: list[float]) -> int:
    """Majority wins; a three-way disagreement falls back to the vote whose
    winning output lies closest to one (first such network on a tie)."""
    for lab in labs:
        if labs.count(lab) >= 2:
            return lab
    return labs[int(np.argmin(closeness))]


def committee_predict(nets: list[Network], x: np.ndarray) -> int:
    _check_committee(nets)
    preds = [predict(net, x) for net in nets]
    labs = [p.label for p in preds]
    closeness = [abs(p.outputs[p.label] - 1.0) for p in preds]
    return _vote(labs, closeness)


def committee_accuracy(nets: list[Network], X: np.ndarray, labels: np.ndarray) -> float:
    """Vote accuracy over a batch.  Every member evaluates the batch with the
    same batched forward pass used by single-network accuracy, so a committee
    of identical networks scores exactly like one of its members."""
    _check_committee(nets)
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("accuracy of an empty sample set is undefined")
    outs = [forward_batch(net, X)[-1][1] for net in nets]
    votes = [np.argmin(np.abs(O - 1.0), axis=1) for O in outs]
    hits = 0
    for k in range(X.shape[0]):
        labs = [int(v[k]) for v in votes]
        closeness = [abs(outs[i][k, labs[i]] - 1.0) for i in range(3)]
        hits += _vote(labs, closeness) == labels[k]
    return hits / X.shape[0]
