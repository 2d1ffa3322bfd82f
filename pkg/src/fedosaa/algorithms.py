"""One aggregation round of each federated algorithm, simulated
server-side, with exact communication accounting.

Every variant follows the same skeleton: the server broadcasts what the
variant needs (model, global gradient, or control variate), the K clients
update independently, and the server averages the local updates weighted
by client size.  Communication counters are charged per aggregation
round according to the variant's fixed cost.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from fedosaa.anderson import (
    AADiagnostics,
    AAHistory,
    DegenerateHistoryError,
    aa_step,
    build_history,
    filter_history,
)
from fedosaa.linalg import SolverBreakdownError, cg_solve, gmres_solve
from fedosaa.objective import GradientCorrection, corrected_gradient, corrected_value

__all__ = [
    "VARIANTS",
    "COMM_COST",
    "AlgoConfig",
    "CommLedger",
    "RoundState",
    "DivergenceError",
    "init_state",
    "aggregate",
    "run_round",
    "local_update_first_order",
    "local_update_fedosaa",
    "local_update_newton_krylov",
    "local_update_lbfgs",
    "local_update_dane",
]

VARIANTS = (
    "fedavg",
    "fedsvrg",
    "scaffold",
    "fedosaa-svrg",
    "fedosaa-scaffold",
    "fedosaa-avg",
    "giant",
    "newton-gmres",
    "lbfgs",
    "dane",
)

# (communication rounds, floats per direction) charged per aggregation round.
COMM_COST = {
    "fedavg": (1, 1),
    "fedsvrg": (2, 2),
    "scaffold": (1, 2),
    "fedosaa-svrg": (2, 2),
    "fedosaa-scaffold": (1, 2),
    "fedosaa-avg": (1, 1),
    "giant": (2, 2),
    "newton-gmres": (2, 2),
    "lbfgs": (2, 2),
    "dane": (2, 2),
}

_SCAFFOLD_FAMILY = ("scaffold", "fedosaa-scaffold")
_NEEDS_GLOBAL_GRAD = ("fedsvrg", "fedosaa-svrg", "giant", "newton-gmres", "lbfgs", "dane")

DIVERGENCE_NORM = 1e12


class DivergenceError(RuntimeError):
    """Local update produced a non-finite or runaway iterate."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


@dataclass
class AlgoConfig:
    """Hyperparameters for one algorithm run."""

    variant: str
    eta: float = 1.0
    local_epochs: int = 10
    batch_size: int = 0  # 0 means full batch
    q: int = 10
    line_search: bool = False
    damping: float = 1.0
    filter_tol: float = 1e-10
    aa_regularization: float = 0.0
    carry_history: bool = False
    label: str | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.local_epochs < 1:
            raise ValueError("need at least one local epoch")
        if self.q < 1:
            raise ValueError("need at least one Krylov iteration")
        if self.label is None:
            self.label = self.variant


@dataclass
class CommLedger:
    """Cumulative communication counters; increments fixed per variant."""

    rounds: int = 0
    floats_down: int = 0
    floats_up: int = 0

    def charge(self, variant: str, d: int):
        r, c = COMM_COST[variant]
        self.rounds += r
        self.floats_down += c * d
        self.floats_up += c * d


@dataclass
class RoundState:
    """Mutable server-side state threaded through aggregation rounds."""

    t: int
    w: np.ndarray
    c: np.ndarray
    c_k: list[np.ndarray]
    rngs: list[np.random.Generator]
    ledger: CommLedger = field(default_factory=CommLedger)
    carried: list[AAHistory | None] = field(default_factory=list)
    last_diagnostics: list[AADiagnostics] | None = None
    diverged_at: int | None = None


def init_state(d: int, n_clients: int, seed: int) -> RoundState:
    """Fresh state at w = 0 with zero control variates and per-client RNGs."""
    return RoundState(
        t=0,
        w=np.zeros(d),
        c=np.zeros(d),
        c_k=[np.zeros(d) for _ in range(n_clients)],
        rngs=[np.random.default_rng([seed, k]) for k in range(n_clients)],
        carried=[None] * n_clients,
    )


def _sample_batch(model, k: int, cfg: AlgoConfig, rng: np.random.Generator):
    n_k = model.client_sizes[k]
    if cfg.batch_size <= 0 or cfg.batch_size >= n_k:
        return None
    return rng.choice(n_k, size=cfg.batch_size, replace=False)


def local_update_first_order(
    model,
    k: int,
    w_t: np.ndarray,
    correction: GradientCorrection,
    cfg: AlgoConfig,
    rng: np.random.Generator,
    final_residual: bool = False,
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """L corrected gradient-descent steps from w_t.

    Returns the iterate list w_0..w_L and the residual list; the residual
    at the final iterate is evaluated only when ``final_residual`` is set
    (it costs one extra gradient).
    """
    iterates = [w_t]
    residuals: list[np.ndarray] = []
    w = w_t
    for ell in range(cfg.local_epochs):
        batch = _sample_batch(model, k, cfg, rng)
        r = corrected_gradient(model, k, w, correction, batch)
        w = w - cfg.eta * r
        if not np.all(np.isfinite(w)):
            raise DivergenceError(f"client {k} diverged at local step {ell}", step=ell)
        residuals.append(r)
        iterates.append(w)
    if final_residual:
        batch = _sample_batch(model, k, cfg, rng)
        residuals.append(corrected_gradient(model, k, w, correction, batch))
    return iterates, residuals


def local_update_fedosaa(
    model,
    k: int,
    w_t: np.ndarray,
    anchor_residual: np.ndarray,
    correction: GradientCorrection,
    cfg: AlgoConfig,
    rng: np.random.Generator,
    carried: AAHistory | None = None,
) -> tuple[np.ndarray, AADiagnostics, AAHistory]:
    """First-order window plus one Anderson extrapolation step.

    Falls back to the plain descent endpoint when the filtered history is
    degenerate.  Returns the update, diagnostics, and the history used
    (for optional carry-over into the next round).
    """
    iterates, residuals = local_update_first_order(
        model, k, w_t, correction, cfg, rng, final_residual=True
    )
    history = build_history(iterates, residuals)
    if carried is not None and cfg.carry_history:
        history = AAHistory(
            S=np.hstack([carried.S, history.S]),
            Y=np.hstack([carried.Y, history.Y]),
        )
    history = filter_history(history, drop_tol=cfg.filter_tol)
    try:
        w_new, diag = aa_step(
            w_t,
            anchor_residual,
            history,
            cfg.eta,
            damping=cfg.damping,
            regularization=cfg.aa_regularization,
        )
    except DegenerateHistoryError:
        w_new = iterates[-1]
        diag = AADiagnostics(theta=1.0, effective_rank=0, cond_S=float("inf"))
    anchor_norm = np.linalg.norm(anchor_residual)
    if anchor_norm > 0:
        post = corrected_gradient(model, k, w_new, correction, None)
        diag.delta = float(np.linalg.norm(post) / anchor_norm)
    else:
        diag.delta = 0.0
    return w_new, diag, history


def _armijo(value_fn, w: np.ndarray, direction: np.ndarray, g: np.ndarray,
            c1: float = 1e-4, max_backtracks: int = 30) -> float:
    """Backtracking step length for the descent step w - a * direction."""
    f0 = value_fn(w)
    slope = float(g @ direction)
    a = 1.0
    for _ in range(max_backtracks):
        if value_fn(w - a * direction) <= f0 - c1 * a * slope:
            return a
        a *= 0.5
    return a


def local_update_newton_krylov(
    model,
    k: int,
    w_t: np.ndarray,
    global_grad: np.ndarray,
    cfg: AlgoConfig,
    solver: str,
) -> np.ndarray:
    """Inexact local Newton step against the global gradient.

    ``solver`` is "cg" (local-Hessian CG) or "gmres"; q iterations each.
    With line search enabled the step length is backtracked on the global
    objective.
    """
    hvp = lambda v: model.hessian_vec(k, w_t, v)
    if solver == "cg":
        p = cg_solve(hvp, global_grad, cfg.q, tol=1e-12)
    elif solver == "gmres":
        p = gmres_solve(hvp, global_grad, cfg.q, tol=1e-12)
    else:
        raise ValueError(f"unknown solver {solver!r}")
    if cfg.line_search:
        a = _armijo(lambda w: model.value(w), w_t, p, global_grad)
        return w_t - a * p
    return w_t - p


def _two_loop(S: np.ndarray, Y: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Standard limited-memory two-loop recursion, columns oldest first."""
    m = S.shape[1]
    rho = np.array([1.0 / (Y[:, i] @ S[:, i]) for i in range(m)])
    alpha = np.zeros(m)
    q = g.copy()
    for i in range(m - 1, -1, -1):
        alpha[i] = rho[i] * (S[:, i] @ q)
        q -= alpha[i] * Y[:, i]
    scale = (S[:, -1] @ Y[:, -1]) / (Y[:, -1] @ Y[:, -1])
    r = scale * q
    for i in range(m):
        beta = rho[i] * (Y[:, i] @ r)
        r += (alpha[i] - beta) * S[:, i]
    return r


def local_update_lbfgs(
    model,
    k: int,
    w_t: np.ndarray,
    global_grad: np.ndarray,
    correction: GradientCorrection,
    cfg: AlgoConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """One-shot L-BFGS: collect (S, Y) from the corrected-gradient window,
    then apply the two-loop recursion to the global gradient."""
    iterates, residuals = local_update_first_order(
        model, k, w_t, correction, cfg, rng, final_residual=True
    )
    history = build_history(iterates, residuals)
    keep = [
        i
        for i in range(history.m)
        if history.S[:, i] @ history.Y[:, i]
        > 1e-12 * np.linalg.norm(history.S[:, i]) * np.linalg.norm(history.Y[:, i])
    ]
    if not keep:
        return iterates[-1]
    direction = _two_loop(history.S[:, keep], history.Y[:, keep], global_grad)
    return w_t - direction


def local_update_dane(
    model,
    k: int,
    w_t: np.ndarray,
    global_grad: np.ndarray,
    cfg: AlgoConfig,
    max_newton: int = 200,
) -> np.ndarray:
    """Exact surrogate minimization: damped Newton on the corrected local
    objective until its gradient is negligible."""
    correction = GradientCorrection.svrg(w_t, global_grad)
    tol = 1e-12 * max(1.0, float(np.linalg.norm(global_grad)))
    w = w_t.copy()
    for _ in range(max_newton):
        grad = corrected_gradient(model, k, w, correction, None)
        if np.linalg.norm(grad) <= tol:
            return w
        hvp = lambda v: model.hessian_vec(k, w, v)
        p = cg_solve(hvp, grad, q=2 * model.d, tol=1e-14)
        a = _armijo(lambda u: corrected_value(model, k, u, correction), w, p, grad)
        w = w - a * p
    raise RuntimeError(f"surrogate Newton failed to converge on client {k}")


def aggregate(local_updates: list[np.ndarray], weights: list[float]) -> np.ndarray:
    """Size-weighted average of the K local updates."""
    d = local_updates[0].shape[0]
    out = np.zeros(d)
    for w_k, wt in zip(local_updates, weights, strict=True):
        if w_k.shape != (d,):
            raise ValueError("local update dimension mismatch")
        out += wt * w_k
    return out


def run_round(state: RoundState, cfg: AlgoConfig, model) -> RoundState:
    """Advance the global iterate by one aggregation round.

    Dispatches on the variant, runs the K client updates in canonical
    client order, aggregates, updates control variates for the SCAFFOLD
    family, and charges the communication ledger.
    """
    if state.diverged_at is not None:
        raise DivergenceError(f"run already diverged at round {state.diverged_at}")
    w_t = state.w
    K = model.n_clients
    weights = [model.client_weight(k) for k in range(K)]
    global_grad = (
        model.gradient(w_t) if cfg.variant in _NEEDS_GLOBAL_GRAD else None
    )
    updates: list[np.ndarray] = []
    diagnostics: list[AADiagnostics] | None = (
        [] if cfg.variant.startswith("fedosaa") else None
    )

    for k in range(K):
        rng = state.rngs[k]
        if cfg.variant == "fedavg":
            iterates, _ = local_update_first_order(
                model, k, w_t, GradientCorrection.none(model.d), cfg, rng
            )
            w_k = iterates[-1]
        elif cfg.variant == "fedsvrg":
            corr = GradientCorrection.svrg(w_t, global_grad)
            iterates, _ = local_update_first_order(model, k, w_t, corr, cfg, rng)
            w_k = iterates[-1]
        elif cfg.variant == "scaffold":
            corr = GradientCorrection.scaffold(state.c, state.c_k[k])
            iterates, _ = local_update_first_order(model, k, w_t, corr, cfg, rng)
            w_k = iterates[-1]
        elif cfg.variant == "fedosaa-svrg":
            corr = GradientCorrection.svrg(w_t, global_grad)
            w_k, diag, hist = local_update_fedosaa(
                model, k, w_t, global_grad, corr, cfg, rng, state.carried[k]
            )
            state.carried[k] = hist
            diagnostics.append(diag)
        elif cfg.variant == "fedosaa-scaffold":
            corr = GradientCorrection.scaffold(state.c, state.c_k[k])
            w_k, diag, hist = local_update_fedosaa(
                model, k, w_t, state.c, corr, cfg, rng, state.carried[k]
            )
            state.carried[k] = hist
            diagnostics.append(diag)
        elif cfg.variant == "fedosaa-avg":
            corr = GradientCorrection.none(model.d)
            local_grad = model.gradient(w_t, k)
            w_k, diag, hist = local_update_fedosaa(
                model, k, w_t, local_grad, corr, cfg, rng, state.carried[k]
            )
            state.carried[k] = hist
            diagnostics.append(diag)
        elif cfg.variant == "giant":
            try:
                w_k = local_update_newton_krylov(model, k, w_t, global_grad, cfg, "cg")
            except SolverBreakdownError as exc:
                raise DivergenceError(f"CG breakdown on client {k}: {exc}") from exc
        elif cfg.variant == "newton-gmres":
            w_k = local_update_newton_krylov(model, k, w_t, global_grad, cfg, "gmres")
        elif cfg.variant == "lbfgs":
            corr = GradientCorrection.svrg(w_t, global_grad)
            w_k = local_update_lbfgs(model, k, w_t, global_grad, corr, cfg, rng)
        elif cfg.variant == "dane":
            w_k = local_update_dane(model, k, w_t, global_grad, cfg)
        else:  # pragma: no cover - guarded by AlgoConfig
            raise ValueError(cfg.variant)
        updates.append(w_k)

    if cfg.variant in _SCAFFOLD_FAMILY:
        state.c_k = [model.gradient(w_t, k) for k in range(K)]
        state.c = aggregate(state.c_k, weights)

    state.w = aggregate(updates, weights)
    state.ledger.charge(cfg.variant, model.d)
    state.t += 1
    state.last_diagnostics = diagnostics
    if not np.all(np.isfinite(state.w)) or np.linalg.norm(state.w) > DIVERGENCE_NORM:
        state.diverged_at = state.t
    return state
