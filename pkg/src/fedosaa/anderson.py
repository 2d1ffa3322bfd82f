"""One-step Anderson extrapolation over a window of local iterates.

The history holds iterate differences S and residual differences Y from
one local round.  The step applies the multisecant approximate inverse
eta*I + (S - eta*Y)(Y'Y)^+ Y' to an anchor residual; the pseudo-inverse
is realized by rank-truncated least squares so near-dependent residual
differences are dropped implicitly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fedosaa.linalg import condition_estimate, least_squares

__all__ = [
    "AAHistory",
    "AADiagnostics",
    "DegenerateHistoryError",
    "build_history",
    "filter_history",
    "aa_step",
    "optimization_gain",
]


class DegenerateHistoryError(RuntimeError):
    """Residual-difference matrix has rank zero; no extrapolation possible."""


@dataclass(frozen=True)
class AAHistory:
    """Iterate differences S and residual differences Y, columns oldest first."""

    S: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        if self.S.shape != self.Y.shape:
            raise ValueError("S and Y must have the same shape")

    @property
    def m(self) -> int:
        return self.S.shape[1]


@dataclass
class AADiagnostics:
    """Per-step diagnostics: gain theta, post-step ratio delta (filled by
    the caller once the post-step gradient exists), rank and conditioning."""

    theta: float
    effective_rank: int
    cond_S: float
    delta: float | None = None


def build_history(iterates: list[np.ndarray], residuals: list[np.ndarray]) -> AAHistory:
    """Column differences of L+1 iterates and their L+1 residuals.

    The final residual (at the last iterate) is required, so a window of
    L descent steps costs L+1 residual evaluations.
    """
    if len(iterates) != len(residuals):
        raise ValueError("iterates and residuals must have equal length")
    if len(iterates) < 2:
        raise ValueError("need at least two iterates")
    W = np.column_stack(iterates)
    R = np.column_stack(residuals)
    return AAHistory(S=np.diff(W, axis=1), Y=np.diff(R, axis=1))


def filter_history(history: AAHistory, drop_tol: float = 1e-10) -> AAHistory:
    """Drop column pairs whose Y column is nearly dependent on earlier ones.

    A Gram-Schmidt sweep retains columns oldest-first; a column is dropped
    when its component orthogonal to the retained ones has norm at most
    drop_tol times its own norm.  May return an empty history.
    """
    keep: list[int] = []
    basis: list[np.ndarray] = []
    for j in range(history.m):
        y = history.Y[:, j].astype(np.float64, copy=True)
        norm = np.linalg.norm(y)
        if norm == 0.0:
            continue
        for b in basis:
            y -= (b @ y) * b
        if np.linalg.norm(y) <= drop_tol * norm:
            continue
        basis.append(y / np.linalg.norm(y))
        keep.append(j)
    return AAHistory(S=history.S[:, keep], Y=history.Y[:, keep])


def _solve_mixing(history: AAHistory, g_t: np.ndarray, rcond: float,
                  regularization: float) -> tuple[np.ndarray, np.ndarray, int]:
    """Least-squares coefficients z for Y z ~ g_t; returns (z, residual, rank)."""
    Y = history.Y
    if regularization > 0.0:
        # Tikhonov via row augmentation: min ||Yz - g||^2 + lam ||z||^2
        aug = np.vstack([Y, np.sqrt(regularization) * np.eye(Y.shape[1])])
        rhs = np.concatenate([g_t, np.zeros(Y.shape[1])])
        z, rank = least_squares(aug, rhs, rcond=rcond)
    else:
        z, rank = least_squares(Y, g_t, rcond=rcond)
    return z, g_t - Y @ z, rank


def aa_step(
    w_t: np.ndarray,
    g_t: np.ndarray,
    history: AAHistory,
    eta: float,
    rcond: float = 1e-12,
    damping: float = 1.0,
    regularization: float = 0.0,
) -> tuple[np.ndarray, AADiagnostics]:
    """Extrapolated update w_t - [eta*I + (S - eta*Y)(Y'Y)^+ Y'] g_t.

    ``damping`` scales the whole step (1.0 reproduces the undamped update)
    and ``regularization`` adds a Tikhonov term to the mixing least
    squares; both default to off.  Raises DegenerateHistoryError when Y
    has rank zero so the caller can fall back to the plain descent
    endpoint.
    """
    if history.m == 0:
        raise DegenerateHistoryError("empty history")
    z, ls_residual, rank = _solve_mixing(history, g_t, rcond, regularization)
    if rank == 0:
        raise DegenerateHistoryError("residual differences have rank zero")
    gnorm = np.linalg.norm(g_t)
    theta = float(np.linalg.norm(ls_residual) / gnorm) if gnorm > 0 else 0.0
    step = eta * g_t + (history.S - eta * history.Y) @ z
    w_new = w_t - damping * step
    diag = AADiagnostics(
        theta=theta,
        effective_rank=rank,
        cond_S=condition_estimate(history.S),
    )
    return w_new, diag


def optimization_gain(history: AAHistory, g_t: np.ndarray,
                      rcond: float = 1e-12) -> float:
    """Relative residual of g_t after projection onto span(Y).

    Equals the norm ratio achieved by the sum-to-one residual mixing; 1.0
    for a rank-zero history, 0.0 for a zero anchor residual.
    """
    gnorm = np.linalg.norm(g_t)
    if gnorm == 0.0:
        return 0.0
    if history.m == 0:
        return 1.0
    z, ls_residual, rank = _solve_mixing(history, g_t, rcond, 0.0)
    if rank == 0:
        return 1.0
    return float(np.linalg.norm(ls_residual) / gnorm)
