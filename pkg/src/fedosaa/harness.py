"""Experiment configuration, reference-minimizer oracle, metric tracing,
and trace emission.

An experiment fixes one problem (a LIBSVM file, a synthetic logistic
fixture, or a synthetic quadratic fixture), one partition, and a list of
algorithm configurations that all see identical data and seeds.  Each
algorithm produces a trace of per-round records; traces can be written as
CSV or as JSON with the fully resolved configuration echoed for
reproducibility.
"""

from __future__ import annotations

import dataclasses
import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from fedosaa import algorithms
from fedosaa.algorithms import AlgoConfig, init_state, run_round
from fedosaa.dataset import (
    Dataset,
    parse_libsvm,
    partition_iid,
    partition_imbalanced,
    partition_label_skew,
)
from fedosaa.linalg import cg_solve
from fedosaa.objective import (
    LogisticModel,
    QuadraticModel,
    generate_quadratic,
    generate_synthetic_logistic,
)

__all__ = [
    "ProblemConfig",
    "ExperimentConfig",
    "TraceRecord",
    "reference_minimizer",
    "build_problem",
    "run_experiment",
    "emit_traces",
    "parse_trace_csv",
]

CSV_HEADER = (
    "algo,t,rel_err,loss_gap,grad_norm,comm_rounds,comm_floats,"
    "wall_s,theta_med,delta_med"
)


@dataclass
class ProblemConfig:
    """What to optimize.

    ``kind`` is one of "synthetic-logistic" (n, d), "synthetic-quadratic"
    (d, kappa, heterogeneity), or "libsvm" (path, optional label_map /
    subsample / dimension override).
    """

    kind: str = "synthetic-logistic"
    n: int = 2000
    d: int = 20
    kappa: float = 100.0
    heterogeneity: float = 1.0
    path: str | None = None
    label_map: dict[int, int] | None = None
    subsample: int | None = None
    dim_override: int | None = None

    def __post_init__(self):
        if self.kind not in ("synthetic-logistic", "synthetic-quadratic", "libsvm"):
            raise ValueError(f"unknown problem kind {self.kind!r}")
        if self.kind == "libsvm":
            if self.path is None:
                raise ValueError("libsvm problem needs a dataset path")
            if not Path(self.path).exists():
                raise FileNotFoundError(self.path)


@dataclass
class ExperimentConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    gamma: float = 1e-3
    partition: str = "iid"
    proportions: list[float] | None = None
    n_clients: int = 10
    algos: list[AlgoConfig] = field(default_factory=list)
    rounds: int = 100
    tolerance: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.partition not in ("iid", "imbalance", "label-skew"):
            raise ValueError(f"unknown partition scheme {self.partition!r}")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        problem = raw.pop("problem", {})
        if isinstance(problem, dict):
            if problem.get("label_map") is not None:
                problem["label_map"] = {
                    int(k): int(v) for k, v in problem["label_map"].items()
                }
            problem = ProblemConfig(**problem)
        algos = [
            a if isinstance(a, AlgoConfig) else AlgoConfig(**a)
            for a in raw.pop("algos", [])
        ]
        return cls(problem=problem, algos=algos, **raw)


@dataclass
class TraceRecord:
    """Per-round convergence and accounting metrics."""

    t: int
    relative_error: float
    loss_gap: float
    grad_norm: float
    comm_rounds: int
    comm_floats: int
    wall_seconds: float
    theta_median: float | None = None
    delta_median: float | None = None
    diverged: bool = False


def reference_minimizer(model, tol: float | None = None) -> tuple[np.ndarray, float]:
    """Global minimizer and optimal value.

    Quadratics are solved directly; logistic models run centralized damped
    Newton (Hessian-vector CG inner solves, backtracking step lengths)
    from zero until the gradient norm falls below ``tol`` (default
    1e-12 * max(1, initial gradient norm)).
    """
    if isinstance(model, QuadraticModel):
        w_star = np.linalg.solve(model.global_matrix(), model.global_rhs())
        return w_star, model.value(w_star)
    w = np.zeros(model.d)
    g0 = model.gradient(w)
    if tol is None:
        tol = 1e-12 * max(1.0, float(np.linalg.norm(g0)))
    def global_hvp(u, v):
        out = np.zeros(model.d)
        for k in range(model.n_clients):
            out += model.client_weight(k) * model.hessian_vec(k, u, v)
        return out
    g = g0
    for _ in range(500):
        if np.linalg.norm(g) <= tol:
            return w, model.value(w)
        p = cg_solve(lambda v: global_hvp(w, v), g, q=2 * model.d, tol=1e-14)
        f0 = model.value(w)
        slope = float(g @ p)
        a = 1.0
        for _ in range(60):
            if model.value(w - a * p) <= f0 - 1e-4 * a * slope:
                break
            a *= 0.5
        w = w - a * p
        g = model.gradient(w)
    raise RuntimeError("reference Newton failed to converge")


def build_problem(config: ExperimentConfig):
    """Materialize (model, w_star, f_star) from an experiment config."""
    prob = config.problem
    if prob.kind == "synthetic-quadratic":
        model, w_star = generate_quadratic(
            prob.d, config.n_clients, prob.kappa, prob.heterogeneity, config.seed
        )
        return model, w_star, model.value(w_star)
    if prob.kind == "synthetic-logistic":
        dataset = generate_synthetic_logistic(prob.n, prob.d, config.seed)
    else:
        text = Path(prob.path).read_text()
        dataset = parse_libsvm(text, label_map=prob.label_map, d=prob.dim_override)
        if prob.subsample is not None and prob.subsample < dataset.n:
            rng = np.random.default_rng(config.seed)
            keep = rng.choice(dataset.n, size=prob.subsample, replace=False)
            dataset = Dataset(
                tuple(dataset.examples[int(i)] for i in sorted(keep)), dataset.d
            )
    if config.partition == "iid":
        part = partition_iid(dataset, config.n_clients, config.seed)
    elif config.partition == "imbalance":
        props = config.proportions
        if props is None:
            raise ValueError("imbalance partition needs proportions")
        part = partition_imbalanced(dataset, props, config.seed)
    else:
        part = partition_label_skew(dataset, config.n_clients, config.seed)
    model = LogisticModel(dataset, part, config.gamma)
    w_star, f_star = reference_minimizer(model)
    return model, w_star, f_star


def _median(values: list[float]) -> float | None:
    vals = [v for v in values if v is not None]
    return float(np.median(vals)) if vals else None


def _record(state, model, w_star, f_star, wall: float) -> TraceRecord:
    w = state.w
    rel = float(np.linalg.norm(w - w_star) / np.linalg.norm(w_star))
    thetas = deltas = None
    if state.last_diagnostics:
        thetas = _median([dg.theta for dg in state.last_diagnostics])
        deltas = _median([dg.delta for dg in state.last_diagnostics])
    finite = bool(np.all(np.isfinite(w)))
    return TraceRecord(
        t=state.t,
        relative_error=rel if finite else float("inf"),
        loss_gap=float(model.value(w) - f_star) if finite else float("inf"),
        grad_norm=float(np.linalg.norm(model.gradient(w))) if finite else float("inf"),
        comm_rounds=state.ledger.rounds,
        comm_floats=state.ledger.floats_down,
        wall_seconds=wall,
        theta_median=thetas,
        delta_median=deltas,
        diverged=state.diverged_at is not None,
    )


def run_experiment(config: ExperimentConfig, model=None, w_star=None, f_star=None):
    """Run every configured algorithm on the shared problem.

    Returns {algorithm label: [TraceRecord, ...]}.  Record 0 is the
    initial state (w = 0, relative error 1); each subsequent record
    follows one aggregation round.  A run stops early at the tolerance or
    on divergence; divergence is recorded in the trace, not raised.
    """
    if not config.algos:
        raise ValueError("no algorithms configured")
    if model is None:
        model, w_star, f_star = build_problem(config)
    traces: dict[str, list[TraceRecord]] = {}
    for cfg in config.algos:
        if cfg.label in traces:
            raise ValueError(f"duplicate algorithm label {cfg.label!r}")
        state = init_state(model.d, model.n_clients, config.seed)
        trace = [_record(state, model, w_star, f_star, 0.0)]
        for _ in range(config.rounds):
            start = time.perf_counter()
            try:
                run_round(state, cfg, model)
            except algorithms.DivergenceError:
                state.diverged_at = state.t + 1
                state.t += 1
            wall = time.perf_counter() - start
            rec = _record(state, model, w_star, f_star, wall)
            trace.append(rec)
            if rec.diverged or rec.relative_error <= config.tolerance:
                break
        traces[cfg.label] = trace
    return traces


def _fmt(x) -> str:
    if x is None:
        return ""
    return format(float(x), ".17g")


def emit_traces(
    traces: dict[str, list[TraceRecord]],
    path: str | Path,
    fmt: str = "csv",
    config: ExperimentConfig | None = None,
):
    """Write traces to ``path`` as CSV or JSON (config echoed in JSON)."""
    if not traces or all(len(t) == 0 for t in traces.values()):
        raise ValueError("nothing to emit")
    path = Path(path)
    if fmt == "csv":
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        for algo, records in traces.items():
            for r in records:
                buf.write(
                    ",".join(
                        [
                            algo,
                            str(r.t),
                            _fmt(r.relative_error),
                            _fmt(r.loss_gap),
                            _fmt(r.grad_norm),
                            str(r.comm_rounds),
                            str(r.comm_floats),
                            _fmt(r.wall_seconds),
                            _fmt(r.theta_median),
                            _fmt(r.delta_median),
                        ]
                    )
                    + "\n"
                )
        path.write_text(buf.getvalue())
    elif fmt == "json":
        payload = {
            "config": config.to_dict() if config is not None else None,
            "traces": {
                algo: [dataclasses.asdict(r) for r in records]
                for algo, records in traces.items()
            },
        }
        path.write_text(json.dumps(payload, indent=2))
    else:
        raise ValueError(f"unknown format {fmt!r}")


def parse_trace_csv(text: str) -> dict[str, list[TraceRecord]]:
    """Inverse of the CSV emitter (used for round-trip checks)."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError("bad trace header")
    out: dict[str, list[TraceRecord]] = {}
    for ln in lines[1:]:
        parts = ln.split(",")
        algo = parts[0]
        rec = TraceRecord(
            t=int(parts[1]),
            relative_error=float(parts[2]),
            loss_gap=float(parts[3]),
            grad_norm=float(parts[4]),
            comm_rounds=int(parts[5]),
            comm_floats=int(parts[6]),
            wall_seconds=float(parts[7]),
            theta_median=float(parts[8]) if parts[8] else None,
            delta_median=float(parts[9]) if parts[9] else None,
        )
        out.setdefault(algo, []).append(rec)
    return out
