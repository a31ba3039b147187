"""Dense two-phase simplex (Bland's rule), matrix-game minimax and the CCE subroutine.

Problems here are tiny (tens of variables), so a dense tableau with exact pivot
bookkeeping is both fast enough and easy to audit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PIVOT_TOL = 1e-11
REL_PIVOT_TOL = 1e-9
MAX_PIVOTS = 50_000


class LPError(RuntimeError):
    pass


@dataclass
class LinearProgram:
    """minimize (or maximize) c @ x  s.t.  A_ub x <= b_ub,  A_eq x = b_eq,  x >= lb.

    ``lb`` entries may be -inf for free variables.
    """

    c: np.ndarray
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    lb: np.ndarray | None = None
    maximize: bool = False

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        self.A_ub, self.b_ub = _rows(self.A_ub, self.b_ub, n, "ub")
        self.A_eq, self.b_eq = _rows(self.A_eq, self.b_eq, n, "eq")
        self.lb = np.zeros(n) if self.lb is None else np.asarray(self.lb, dtype=float).ravel()
        if self.lb.size != n:
            raise ValueError("lb has wrong length")
        for arr in (self.c, self.A_ub, self.b_ub, self.A_eq, self.b_eq):
            if not np.all(np.isfinite(arr)):
                raise ValueError("coefficients must be finite")
        if np.any(np.isnan(self.lb)) or np.any(self.lb == np.inf):
            raise ValueError("invalid lower bound")

    @property
    def n(self) -> int:
        return self.c.size


def _rows(A, b, n, tag):
    if A is None:
        return np.zeros((0, n)), np.zeros(0)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    if A.shape != (b.size, n):
        raise ValueError(f"A_{tag} has shape {A.shape}, expected {(b.size, n)}")
    return A, b


@dataclass
class LPResult:
    status: str                     # "optimal" | "infeasible" | "unbounded"
    x: np.ndarray | None = None
    fun: float | None = None
    pivots: int = 0


def _pivot(T, r, j):
    T[r] /= T[r, j]
    col = T[:, j].copy()
    col[r] = 0.0
    nz = np.nonzero(col)[0]
    if nz.size:
        T[nz] -= np.outer(col[nz], T[r])


def _run_simplex(T, basis, allowed, counter):
    """Minimize the objective held in the last tableau row; Bland's rule throughout."""
    while True:
        d = T[-1, :-1]
        cand = np.nonzero((d < -PIVOT_TOL) & allowed)[0]
        if cand.size == 0:
            return "optimal"
        j = cand[0]
        col = T[:-1, j]
        # pivots far below the column's scale amplify rounding error without bound
        pos = np.nonzero(col > max(PIVOT_TOL, REL_PIVOT_TOL * np.abs(col).max()))[0]
        if pos.size == 0:
            return "unbounded"
        ratios = T[pos, -1] / col[pos]
        rmin = ratios.min()
        ties = pos[ratios <= rmin + PIVOT_TOL * (1.0 + abs(rmin))]
        r = ties[np.argmin(basis[ties])]
        _pivot(T, r, j)
        basis[r] = j
        counter[0] += 1
        if counter[0] > MAX_PIVOTS:
            raise LPError("cycling safeguard exceeded")


def _equilibrate(A, b):
    scale = np.abs(A).max(axis=1, initial=0.0)
    scale[scale == 0.0] = 1.0
    return A / scale[:, None], b / scale


def _basic_solution(T0, basis, fallback):
    """Values of the basic variables solved afresh from the original rows.

    Long pivot sequences accumulate rounding error in the tableau's right-hand side;
    refactoring the final basis removes it. The tableau values are kept if the basis
    matrix is numerically singular.
    """
    B = T0[:, basis]
    try:
        xb = np.linalg.solve(B, T0[:, -1])
    except np.linalg.LinAlgError:
        return fallback
    if not np.all(np.isfinite(xb)) or np.abs(B @ xb - T0[:, -1]).max() > 1e-9:
        return fallback
    return xb


def _set_objective(T, basis, cost):
    T[-1, :] = 0.0
    T[-1, : cost.size] = cost
    for r, b in enumerate(basis):
        if T[-1, b] != 0.0:
            T[-1] -= T[-1, b] * T[r]


def solve_lp(lp: LinearProgram, tiebreak: str | None = None) -> LPResult:
    """Solve ``lp`` by two-phase simplex with Bland's anti-cycling rule.

    ``tiebreak="lex"`` returns, among all optimal solutions, the lexicographically
    smallest one in the original variables (successive minimization of x_0, x_1, ...
    restricted to the optimal face).
    """
    n = lp.n
    free = np.isneginf(lp.lb)
    shift = np.where(free, 0.0, lp.lb)
    # column map: y_i >= 0 for each var, plus y_i^- for free vars (x_i = y_i - y_i^-)
    free_idx = np.nonzero(free)[0]
    nv = n + free_idx.size

    def expand(A):
        return np.hstack([A, -A[:, free_idx]]) if free_idx.size else A

    A_ub = expand(lp.A_ub)
    A_eq = expand(lp.A_eq)
    b_ub = lp.b_ub - lp.A_ub @ shift
    b_eq = lp.b_eq - lp.A_eq @ shift
    # equilibrate rows so that tiny-but-meaningful coefficients are not mistaken for
    # pivot noise
    A_ub, b_ub = _equilibrate(A_ub, b_ub)
    A_eq, b_eq = _equilibrate(A_eq, b_eq)
    sign = -1.0 if lp.maximize else 1.0
    cost = expand((sign * lp.c)[None, :])[0]

    m_ub, m_eq = A_ub.shape[0], A_eq.shape[0]
    m = m_ub + m_eq
    n_slack = m_ub
    neg_ub = b_ub < 0
    n_art = int(neg_ub.sum()) + m_eq
    ncol = nv + n_slack + n_art
    T = np.zeros((m + 1, ncol + 1))
    basis = np.zeros(m, dtype=int)
    art = nv + n_slack
    for r in range(m_ub):
        s = 1.0 if not neg_ub[r] else -1.0
        T[r, :nv] = s * A_ub[r]
        T[r, nv + r] = s
        T[r, -1] = s * b_ub[r]
        if neg_ub[r]:
            T[r, art] = 1.0
            basis[r] = art
            art += 1
        else:
            basis[r] = nv + r
    for q in range(m_eq):
        r = m_ub + q
        s = -1.0 if b_eq[q] < 0 else 1.0
        T[r, :nv] = s * A_eq[q]
        T[r, -1] = s * b_eq[q]
        T[r, art] = 1.0
        basis[r] = art
        art += 1

    # the untouched constraint rows, for recomputing the final basic solution
    T0 = T[:-1].copy()
    counter = [0]
    allowed = np.ones(ncol, dtype=bool)
    if n_art:
        phase1 = np.zeros(ncol)
        phase1[nv + n_slack:] = 1.0
        _set_objective(T, basis, phase1)
        _run_simplex(T, basis, allowed, counter)
        if -T[-1, -1] > 1e-9 * max(1.0, np.abs(T[:-1, -1]).max(initial=0.0)):
            return LPResult("infeasible", pivots=counter[0])
        # drive zero-level artificials out of the basis, dropping redundant rows
        keep = np.ones(m + 1, dtype=bool)
        for r in range(m):
            if basis[r] >= nv + n_slack:
                row = T[r, : nv + n_slack]
                nz = np.nonzero(np.abs(row) > PIVOT_TOL)[0]
                if nz.size:
                    _pivot(T, r, nz[0])
                    basis[r] = nz[0]
                else:
                    keep[r] = False
        T = np.delete(T[keep], np.s_[nv + n_slack: ncol], axis=1)
        T0 = np.delete(T0[keep[:-1]], np.s_[nv + n_slack: ncol], axis=1)
        basis = basis[keep[:-1]]
        ncol = nv + n_slack
        allowed = np.ones(ncol, dtype=bool)

    full_cost = np.zeros(ncol)
    full_cost[:nv] = cost
    _set_objective(T, basis, full_cost)
    status = _run_simplex(T, basis, allowed, counter)
    if status == "unbounded":
        return LPResult("unbounded", pivots=counter[0])

    if tiebreak == "lex":
        for i in range(n):
            # columns with positive reduced cost are pinned at zero on the optimal face
            d = T[-1, :-1]
            allowed &= d <= PIVOT_TOL
            nonbasic = allowed.copy()
            nonbasic[basis] = False
            if not nonbasic.any():
                break
            obj = np.zeros(ncol)
            obj[i] = 1.0
            if free[i]:
                obj[n + int(np.searchsorted(free_idx, i))] = -1.0
            _set_objective(T, basis, obj)
            _run_simplex(T, basis, allowed, counter)
    elif tiebreak is not None:
        raise ValueError(f"unknown tiebreak {tiebreak!r}")

    y = np.zeros(ncol)
    y[basis] = _basic_solution(T0, basis, T[:-1, -1])
    y = np.maximum(y, 0.0)
    x = y[:n].copy()
    if free_idx.size:
        x[free_idx] -= y[n: nv]
    x += shift
    return LPResult("optimal", x, float(lp.c @ x), counter[0])


# --- matrix games ------------------------------------------------------------

@dataclass
class MatrixGameSolution:
    value: float
    x: np.ndarray
    y: np.ndarray
    duality_gap: float
    lower: float = field(default=0.0)
    upper: float = field(default=0.0)


def _maximin(M):
    n, m = M.shape
    # variables (x_0..x_{n-1}, v); v >= min(M) - 1 keeps it effectively free
    c = np.zeros(n + 1)
    c[-1] = 1.0
    A_ub = np.hstack([-M.T, np.ones((m, 1))])
    A_eq = np.zeros((1, n + 1))
    A_eq[0, :n] = 1.0
    lb = np.zeros(n + 1)
    lb[-1] = M.min() - 1.0
    res = solve_lp(LinearProgram(c, A_ub, np.zeros(m), A_eq, [1.0], lb, maximize=True))
    if res.status != "optimal":
        raise LPError(f"matrix game LP returned {res.status}")
    x = np.maximum(res.x[:n], 0.0)
    return x / x.sum()


def solve_matrix_game(M) -> MatrixGameSolution:
    """Minimax solution of the zero-sum game where the row player receives ``M``."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2 or M.size == 0:
        raise ValueError("payoff matrix must be a non-empty 2-D array")
    if not np.all(np.isfinite(M)):
        raise ValueError("payoff matrix must be finite")
    x = _maximin(M)
    y = _maximin(-M.T)
    lower = float((x @ M).min())
    upper = float((M @ y).max())
    return MatrixGameSolution(0.5 * (lower + upper), x, y, upper - lower, lower, upper)


def solve_cce(P, Q) -> np.ndarray:
    """Joint distribution over (row, column) actions that is a CCE for (P, Q).

    The row player maximizes P, the column player minimizes Q. Among all CCEs the
    one maximizing E[P] + 1 - E[Q] is returned, ties broken by the lexicographically
    smallest vertex, so the output is a deterministic function of the inputs.
    Returns an (n, m) array.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if P.shape != Q.shape or P.ndim != 2:
        raise ValueError("P and Q must be matrices of the same shape")
    n, m = P.shape
    # row a*: sum_{a,b} pi(a,b) (P(a*,b) - P(a,b)) <= 0
    rows = [(np.broadcast_to(P[a_star][None, :], (n, m)) - P).ravel() for a_star in range(n)]
    # col b*: sum_{a,b} pi(a,b) (Q(a,b) - Q(a,b*)) <= 0
    rows += [(Q - Q[:, b_star][:, None]).ravel() for b_star in range(m)]
    A_ub = np.array(rows)
    lp = LinearProgram((P - Q).ravel(), A_ub, np.zeros(n + m), np.ones((1, n * m)), [1.0],
                       maximize=True)
    res = solve_lp(lp, tiebreak="lex")
    if res.status != "optimal":
        raise LPError(f"CCE LP returned {res.status}")
    pi = np.maximum(res.x, 0.0)
    return (pi / pi.sum()).reshape(n, m)


def cce_violation(pi, P, Q) -> tuple[float, float]:
    """(row-player gain from best fixed deviation, column-player gain) under ``pi``."""
    pi = np.asarray(pi)
    nu = pi.sum(0)
    mu = pi.sum(1)
    row = float((P @ nu).max() - (pi * P).sum())
    col = float((pi * Q).sum() - (mu @ Q).min())
    return row, col
