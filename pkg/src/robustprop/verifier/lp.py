"""Phase-1 simplex feasibility solver (dense tableau, Bland's rule)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TOL = 1e-7


class LPIterationLimit(RuntimeError):
    """Pivoting did not terminate within the iteration guard."""


@dataclass
class LinearProgram:
    """Feasibility problem ``A_ub x <= b_ub, A_eq x = b_eq, lo <= x <= hi``.

    Bounds may be infinite. There is no objective.
    """

    n_vars: int
    A_ub: np.ndarray = None
    b_ub: np.ndarray = None
    A_eq: np.ndarray = None
    b_eq: np.ndarray = None
    lo: np.ndarray = None
    hi: np.ndarray = None

    def __post_init__(self):
        n = self.n_vars
        self.A_ub = np.zeros((0, n)) if self.A_ub is None else np.atleast_2d(np.asarray(self.A_ub, float)).reshape(-1, n)
        self.b_ub = np.zeros(0) if self.b_ub is None else np.asarray(self.b_ub, float).reshape(-1)
        self.A_eq = np.zeros((0, n)) if self.A_eq is None else np.atleast_2d(np.asarray(self.A_eq, float)).reshape(-1, n)
        self.b_eq = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, float).reshape(-1)
        self.lo = np.full(n, -np.inf) if self.lo is None else np.asarray(self.lo, float).copy()
        self.hi = np.full(n, np.inf) if self.hi is None else np.asarray(self.hi, float).copy()
        if self.A_ub.shape[0] != self.b_ub.shape[0] or self.A_eq.shape[0] != self.b_eq.shape[0]:
            raise ValueError("constraint matrix and right-hand side disagree in row count")
        if self.lo.shape != (n,) or self.hi.shape != (n,):
            raise ValueError("bounds must have one entry per variable")
        for arr in (self.A_ub, self.b_ub, self.A_eq, self.b_eq):
            if not np.all(np.isfinite(arr)):
                raise ValueError("LP coefficients must be finite")


@dataclass
class LPResult:
    feasible: bool
    point: np.ndarray | None = None
    iterations: int = 0


@dataclass
class _Substitution:
    """x = T u + t0 with u >= 0."""

    T: np.ndarray
    t0: np.ndarray
    bound_rows: list = field(default_factory=list)


def _substitute(lp: LinearProgram) -> _Substitution:
    n = lp.n_vars
    cols, t0, bound_rows = [], np.zeros(n), []
    for j in range(n):
        lo, hi = lp.lo[j], lp.hi[j]
        if np.isfinite(lo):
            t0[j] = lo
            cols.append((j, 1.0))
            if np.isfinite(hi):
                bound_rows.append((len(cols) - 1, hi - lo))
        elif np.isfinite(hi):
            t0[j] = hi
            cols.append((j, -1.0))
        else:
            cols.append((j, 1.0))
            cols.append((j, -1.0))
    T = np.zeros((n, len(cols)))
    for k, (j, s) in enumerate(cols):
        T[j, k] = s
    return _Substitution(T, t0, bound_rows)


def lp_feasible(lp: LinearProgram, tol: float = TOL, max_iter: int | None = None) -> LPResult:
    """Decide feasibility of ``lp``; on success return a vertex point."""
    if np.any(lp.lo > lp.hi + tol):
        return LPResult(False)
    sub = _substitute(lp)
    k = sub.T.shape[1]

    ub_A = lp.A_ub @ sub.T
    ub_b = lp.b_ub - lp.A_ub @ sub.t0
    if sub.bound_rows:
        extra = np.zeros((len(sub.bound_rows), k))
        for r, (col, width) in enumerate(sub.bound_rows):
            extra[r, col] = 1.0
        ub_A = np.vstack([ub_A, extra])
        ub_b = np.concatenate([ub_b, [w for _, w in sub.bound_rows]])
    eq_A = lp.A_eq @ sub.T
    eq_b = lp.b_eq - lp.A_eq @ sub.t0

    # row scaling keeps the tolerance meaningful across magnitudes
    def _scale(A, b):
        s = np.maximum(np.abs(A).max(axis=1, initial=0.0), np.abs(b))
        s[s == 0] = 1.0
        return A / s[:, None], b / s
    ub_A, ub_b = _scale(ub_A, ub_b)
    eq_A, eq_b = _scale(eq_A, eq_b)

    m_ub, m_eq = ub_A.shape[0], eq_A.shape[0]
    m = m_ub + m_eq
    if m == 0:
        return LPResult(True, sub.t0 + sub.T @ np.zeros(k))

    need_art = [i for i in range(m_ub) if ub_b[i] < 0] + list(range(m_ub, m))
    n_art = len(need_art)
    n_cols = k + m_ub + n_art
    tab = np.zeros((m, n_cols + 1))
    tab[:m_ub, :k] = ub_A
    tab[:m_ub, k:k + m_ub] = np.eye(m_ub)
    tab[:m_ub, -1] = ub_b
    tab[m_ub:, :k] = eq_A
    tab[m_ub:, -1] = eq_b
    basis = np.empty(m, dtype=np.int64)
    art_of_row = {}
    for a, i in enumerate(need_art):
        if tab[i, -1] < 0:
            tab[i, :] *= -1.0
        tab[i, k + m_ub + a] = 1.0
        art_of_row[i] = k + m_ub + a
    for i in range(m):
        basis[i] = art_of_row.get(i, k + i)

    # phase-1 objective: minimise the sum of artificials
    cost = np.zeros(n_cols + 1)
    cost[k + m_ub:n_cols] = 1.0
    obj = cost.copy()
    for i in range(m):
        if basis[i] >= k + m_ub:
            obj -= tab[i]

    if max_iter is None:
        max_iter = 50 * (m + n_cols) + 100
    it = 0
    while True:
        entering = np.flatnonzero(obj[:n_cols] < -tol)
        if entering.size == 0:
            break
        if it >= max_iter:
            raise LPIterationLimit(f"no convergence after {it} pivots")
        j = int(entering[0])
        col = tab[:, j]
        rows = np.flatnonzero(col > tol)
        if rows.size == 0:
            # phase-1 objective is bounded below by 0, so this cannot persist
            obj[j] = 0.0
            continue
        ratios = tab[rows, -1] / col[rows]
        best = ratios.min()
        ties = rows[ratios <= best + 1e-12 * max(1.0, abs(best))]
        r = int(ties[np.argmin(basis[ties])])
        tab[r] /= tab[r, j]
        others = np.flatnonzero(tab[:, j] != 0)
        for i in others:
            if i != r:
                tab[i] -= tab[i, j] * tab[r]
        obj -= obj[j] * tab[r]
        basis[r] = j
        it += 1

    infeas = -obj[-1]
    if infeas > tol:
        return LPResult(False, iterations=it)
    u = np.zeros(n_cols)
    u[basis] = np.maximum(tab[:, -1], 0.0)
    x = sub.t0 + sub.T @ u[:k]
    x = np.clip(x, lp.lo, lp.hi)
    return LPResult(True, x, it)
