"""Dense small-matrix kernels: rank-truncated least squares, the
sum-to-one residual-mixing coefficients, and CG / GMRES Krylov solvers.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

__all__ = [
    "SolverBreakdownError",
    "least_squares",
    "aa_coefficients",
    "cg_solve",
    "gmres_solve",
    "condition_estimate",
]


class SolverBreakdownError(RuntimeError):
    """Krylov solver hit non-finite values or indefinite curvature."""

    def __init__(self, message: str, last_iterate: np.ndarray):
        super().__init__(message)
        self.last_iterate = last_iterate


def least_squares(
    A: np.ndarray, b: np.ndarray, rcond: float = 1e-12
) -> tuple[np.ndarray, int]:
    """Minimize ||Ax - b|| by column-pivoted QR with rank truncation.

    Columns whose pivoted R-diagonal falls below ``rcond`` times the
    leading diagonal are treated as dependent: their coefficients are set
    to zero.  Returns (x, effective_rank).  Requires rows >= cols.
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError("A must be a matrix")
    rows, cols = A.shape
    if cols > rows:
        raise ValueError(f"need rows >= cols, got {rows}x{cols}")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise ValueError("non-finite input")
    if cols == 0:
        return np.zeros(0), 0
    Q, R, perm = scipy.linalg.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag[0] == 0.0:
        return np.zeros(cols), 0
    rank = int(np.sum(diag > rcond * diag[0]))
    x = np.zeros(cols)
    if rank > 0:
        qtb = Q.T[:rank] @ b
        xr = scipy.linalg.solve_triangular(R[:rank, :rank], qtb)
        x[perm[:rank]] = xr
    return x, rank


def aa_coefficients(R: np.ndarray, rcond: float = 1e-12) -> np.ndarray:
    """Sum-to-one coefficients minimizing ||sum_i alpha_i r_i||.

    ``R`` holds the residual columns [r_0, ..., r_m] with r_0 the current
    residual.  Solved by the unconstrained difference reformulation
    min_g ||r_0 - [r_0-r_1, ..., r_{m-1}-r_m] g||, so the constraint
    holds exactly by construction.
    """
    R = np.asarray(R, dtype=np.float64)
    if not np.all(np.isfinite(R)):
        raise ValueError("non-finite input")
    m = R.shape[1] - 1
    if m < 0:
        raise ValueError("need at least one residual column")
    if m == 0:
        return np.ones(1)
    D = R[:, :-1] - R[:, 1:]
    g, _ = least_squares(D, R[:, 0], rcond=rcond)
    alpha = np.empty(m + 1)
    alpha[0] = 1.0 - g[0]
    alpha[1:m] = g[:-1] - g[1:]
    alpha[m] = g[m - 1]
    return alpha


def cg_solve(hvp, g: np.ndarray, q: int, tol: float = 1e-10) -> np.ndarray:
    """Conjugate gradient on H x = g from x = 0, capped at q iterations.

    ``hvp`` maps v to H v for an SPD operator H.  Stops early once the
    relative residual drops below ``tol``.  Non-finite values or
    non-positive curvature raise SolverBreakdownError carrying the last
    iterate.
    """
    if q < 1:
        raise ValueError("need at least one iteration")
    g = np.asarray(g, dtype=np.float64)
    x = np.zeros_like(g)
    r = g.copy()
    p = r.copy()
    gnorm = np.linalg.norm(g)
    if gnorm == 0.0:
        return x
    rs = float(r @ r)
    for _ in range(q):
        Hp = np.asarray(hvp(p), dtype=np.float64)
        if not np.all(np.isfinite(Hp)):
            raise SolverBreakdownError("non-finite operator output", x)
        curv = float(p @ Hp)
        if curv <= 0.0:
            raise SolverBreakdownError("non-positive curvature", x)
        a = rs / curv
        x = x + a * p
        r = r - a * Hp
        if not np.all(np.isfinite(x)):
            raise SolverBreakdownError("non-finite iterate", x)
        rs_new = float(r @ r)
        if np.sqrt(rs_new) <= tol * gnorm:
            break
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x


def gmres_solve(op, g: np.ndarray, q: int, tol: float = 1e-10) -> np.ndarray:
    """GMRES on B x = g from x = 0: Arnoldi with modified Gram-Schmidt and
    Givens-rotation least squares, unrestarted.

    Returns the Krylov-subspace minimizer of ||B x - g|| after at most q
    iterations, stopping early at relative residual <= tol or on happy
    breakdown.
    """
    if q < 1:
        raise ValueError("need at least one iteration")
    g = np.asarray(g, dtype=np.float64)
    d = g.shape[0]
    gnorm = np.linalg.norm(g)
    if gnorm == 0.0:
        return np.zeros(d)
    q = min(q, d)
    V = np.zeros((d, q + 1))
    H = np.zeros((q + 1, q))
    cs = np.zeros(q)
    sn = np.zeros(q)
    rhs = np.zeros(q + 1)
    rhs[0] = gnorm
    V[:, 0] = g / gnorm
    steps = 0
    for j in range(q):
        w = np.asarray(op(V[:, j]), dtype=np.float64)
        if not np.all(np.isfinite(w)):
            raise SolverBreakdownError("non-finite operator output", np.zeros(d))
        for i in range(j + 1):
            H[i, j] = V[:, i] @ w
            w = w - H[i, j] * V[:, i]
        H[j + 1, j] = np.linalg.norm(w)
        happy = H[j + 1, j] <= 1e-14 * gnorm
        if not happy:
            V[:, j + 1] = w / H[j + 1, j]
        # apply accumulated rotations, then a new one to zero H[j+1, j]
        for i in range(j):
            t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
            H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
            H[i, j] = t
        denom = np.hypot(H[j, j], H[j + 1, j])
        if denom == 0.0:
            cs[j], sn[j] = 1.0, 0.0
        else:
            cs[j], sn[j] = H[j, j] / denom, H[j + 1, j] / denom
        H[j, j] = cs[j] * H[j, j] + sn[j] * H[j + 1, j]
        H[j + 1, j] = 0.0
        rhs[j + 1] = -sn[j] * rhs[j]
        rhs[j] = cs[j] * rhs[j]
        steps = j + 1
        if happy or abs(rhs[j + 1]) <= tol * gnorm:
            break
    y = scipy.linalg.solve_triangular(H[:steps, :steps], rhs[:steps])
    x = V[:, :steps] @ y
    if not np.all(np.isfinite(x)):
        raise SolverBreakdownError("non-finite solution", x)
    return x


def condition_estimate(M: np.ndarray) -> float:
    """2-norm condition number of a small dense matrix (inf if singular)."""
    s = np.linalg.svd(np.asarray(M, dtype=np.float64), compute_uv=False)
    if s.size == 0 or s[-1] == 0.0:
        return float("inf")
    return float(s[0] / s[-1])
