"""Revised primal simplex for ``min c x  s.t.  A x = b, x >= 0``.

The basis inverse is kept explicitly and refreshed from scratch every
``reinvert`` pivots.  Entering columns follow Bland's rule by default
(smallest index with negative reduced cost; smallest basic index on ratio
ties), which rules out cycling on the heavily degenerate closed-measure
polytope.  ``rule="dantzig"`` prices by most negative reduced cost and falls
back to Bland's rule after a run of degenerate pivots.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp


class LPError(RuntimeError):
    pass


class UnboundedLPError(LPError):
    pass


class IterationLimitError(LPError):
    pass


@dataclass
class SimplexState:
    """A feasible basis of ``A x = b`` together with its explicit inverse."""

    A: sp.csc_matrix
    b: np.ndarray
    basis: np.ndarray
    binv: np.ndarray
    x_basic: np.ndarray
    rows_dropped: list = field(default_factory=list)
    pivots: int = 0

    @property
    def n_cols(self) -> int:
        return self.A.shape[1]

    def primal(self) -> np.ndarray:
        x = np.zeros(self.n_cols)
        x[self.basis] = self.x_basic
        return x

    def refresh(self) -> None:
        bmat = self.A[:, self.basis].toarray()
        self.binv = np.linalg.inv(bmat)
        self.x_basic = np.linalg.solve(bmat, self.b)

    def copy(self) -> "SimplexState":
        return SimplexState(self.A, self.b.copy(), self.basis.copy(), self.binv.copy(), self.x_basic.copy(),
                            list(self.rows_dropped), self.pivots)


def _pivot(state: SimplexState, r: int, j: int, alpha: np.ndarray) -> None:
    theta = state.x_basic[r] / alpha[r]
    state.x_basic -= theta * alpha
    state.x_basic[r] = theta
    pr = state.binv[r] / alpha[r]
    state.binv -= np.outer(alpha, pr)
    state.binv[r] = pr
    state.basis[r] = j
    state.pivots += 1


def start_with_artificials(A, b, basic_col: int, basic_row: int = 0, pivot_tol: float = 1e-9) -> SimplexState:
    """Feasible start from one real column covering ``basic_row`` plus artificial unit columns.

    ``b`` must vanish outside ``basic_row`` and column ``basic_col`` must be
    the unit vector on ``basic_row`` scaled so that its value is
    nonnegative.  Artificials sit at zero and are pivoted out degenerately;
    rows where no real column can replace them are linearly dependent and
    get dropped.
    """
    A = sp.csc_matrix(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    col = A[:, basic_col].toarray().ravel()
    if np.any(np.delete(b, basic_row) != 0) or np.any(np.delete(col, basic_row) != 0) or col[basic_row] == 0:
        raise LPError("start column is not a unit column on the basic row")
    if b[basic_row] / col[basic_row] < 0:
        raise LPError("start column gives a negative value")
    # artificials get indices n.. n+m-1 in an augmented matrix
    aug = sp.hstack([A, sp.identity(m, format="csc")], format="csc")
    basis = np.arange(n, n + m)
    basis[basic_row] = basic_col
    state = SimplexState(aug, b.copy(), basis, np.eye(m), np.zeros(m))
    state.refresh()
    A_rows = A.tocsr()
    row_ids = list(range(m))
    r = 0
    while r < len(state.basis):
        if state.basis[r] < n:
            r += 1
            continue
        row = np.asarray(A_rows.T @ state.binv[r]).ravel()
        row[state.basis[state.basis < n]] = 0.0
        j = int(np.argmax(np.abs(row)))
        if abs(row[j]) > pivot_tol:
            alpha = state.binv @ state.A[:, j].toarray().ravel()
            _pivot(state, r, j, alpha)
            r += 1
            continue
        # dependent row (artificial r covers row r): drop both
        state.rows_dropped.append(row_ids.pop(r))
        keep = np.ones(len(state.basis), dtype=bool)
        keep[r] = False
        row_of = np.cumsum(keep) - 1
        A_rows = A_rows[keep]
        aug = sp.hstack([A_rows.tocsc(), sp.identity(A_rows.shape[0], format="csc")], format="csc")
        new_basis = np.array([bj if bj < n else n + row_of[bj - n] for bj in state.basis[keep]], dtype=np.int64)
        state = SimplexState(aug, state.b[keep], new_basis, np.eye(len(new_basis)), np.zeros(len(new_basis)),
                             state.rows_dropped, state.pivots)
        state.refresh()
    final = SimplexState(sp.csc_matrix(A_rows), state.b, state.basis.copy(), state.binv, state.x_basic,
                         state.rows_dropped, state.pivots)
    final.refresh()
    return final


@dataclass
class SimplexResult:
    x: np.ndarray
    value: float
    state: SimplexState
    pivots: int
    optimal: bool = True


def simplex(state: SimplexState, c: Sequence[float], rule: str = "bland", opt_tol: float = 1e-10,
            pivot_tol: float = 1e-9, max_pivots: int = 200_000, reinvert: int = 100,
            degenerate_limit: int = 50, fixed: Optional[np.ndarray] = None,
            perturb: float = 0.0, seed: int = 0) -> SimplexResult:
    """Phase-2 simplex from the feasible basis in ``state`` (modified in place).

    ``fixed`` marks columns that may not enter the basis.  With
    ``perturb > 0`` the basic values are shifted up by random amounts of that
    size (deterministic in ``seed``) before pricing, which breaks the ties
    that make degenerate vertices stall; the original right-hand side is
    restored at the end and any small infeasibility removed by dual pivots.
    """
    if rule not in ("bland", "dantzig"):
        raise ValueError(f"unknown pricing rule {rule!r}")
    c = np.asarray(c, dtype=float)
    if c.shape != (state.n_cols,):
        raise ValueError("objective length does not match the constraint matrix")
    A = state.A
    AT = A.T.tocsr()
    blocked = np.zeros(state.n_cols, dtype=bool) if fixed is None else np.asarray(fixed, dtype=bool).copy()
    scale = max(1.0, float(np.max(np.abs(c)))) if c.size else 1.0
    tol = opt_tol * scale
    b_orig = state.b
    if perturb > 0:
        rng = np.random.default_rng(seed)
        state.x_basic = np.maximum(state.x_basic, 0.0) + perturb * (1.0 + rng.random(state.x_basic.size))
        state.b = A[:, state.basis] @ state.x_basic
    since = 0
    use_bland = rule == "bland"
    degenerate_run = 0
    for _ in range(max_pivots):
        y = c[state.basis] @ state.binv
        d = c - AT @ y
        d[state.basis] = 0.0
        d[blocked] = 0.0
        cand = np.flatnonzero(d < -tol)
        if cand.size == 0:
            break
        j = int(cand[0]) if use_bland else int(cand[np.argmin(d[cand])])
        alpha = state.binv @ A[:, j].toarray().ravel()
        pos = np.flatnonzero(alpha > pivot_tol)
        if pos.size == 0:
            raise UnboundedLPError(f"column {j} has no positive entry; LP is unbounded")
        ratios = np.maximum(state.x_basic[pos], 0.0) / alpha[pos]
        best = ratios.min()
        ties = pos[ratios <= best + 1e-15 * max(1.0, best)]
        r = int(ties[np.argmin(state.basis[ties])])
        if best <= 1e-15:
            degenerate_run += 1
            if degenerate_run >= degenerate_limit:
                use_bland = True
        else:
            degenerate_run = 0
        _pivot(state, r, j, alpha)
        since += 1
        if since >= reinvert:
            state.refresh()
            since = 0
    else:
        raise IterationLimitError(f"simplex did not finish within {max_pivots} pivots")
    if perturb > 0:
        state.b = b_orig
        state.refresh()
        _dual_cleanup(state, c, AT, blocked, pivot_tol, max_pivots)
    state.refresh()
    neg = state.x_basic < 0
    if np.any(state.x_basic < -1e-9):
        raise LPError(f"basis lost feasibility (min basic value {state.x_basic.min():.3g})")
    state.x_basic[neg] = 0.0
    x = state.primal()
    return SimplexResult(x, float(c @ x), state, state.pivots)


def _dual_cleanup(state: SimplexState, c, AT, blocked, pivot_tol, max_pivots, feas_tol=1e-12) -> None:
    """Dual simplex pivots from a dual-feasible basis until the basic values are nonnegative."""
    allowed = ~blocked
    for _ in range(max_pivots):
        neg = np.flatnonzero(state.x_basic < -feas_tol)
        if neg.size == 0:
            return
        r = int(neg[np.argmin(state.x_basic[neg])])
        y = c[state.basis] @ state.binv
        d = np.maximum(c - AT @ y, 0.0)
        row = AT @ state.binv[r]
        row[state.basis] = 0.0
        cand = np.flatnonzero((row < -pivot_tol) & allowed)
        if cand.size == 0:
            raise LPError("dual cleanup found no entering column; the restored system is infeasible")
        ratios = d[cand] / -row[cand]
        j = int(cand[np.argmin(ratios)])
        alpha = state.binv @ state.A[:, j].toarray().ravel()
        _pivot(state, r, j, alpha)
    raise IterationLimitError("dual cleanup did not finish")


def add_slack_row(state: SimplexState, row: np.ndarray, rhs: float) -> SimplexState:
    """New state for the system with ``row . x + s = rhs`` appended; ``s`` enters the basis.

    The slack gets the last column index.  Its value is ``rhs - row . x``,
    which must be nonnegative for the basis to stay feasible.
    """
    row = np.asarray(row, dtype=float)
    m, n = state.A.shape
    A = sp.vstack([sp.hstack([state.A, sp.csc_matrix((m, 1))]), sp.csc_matrix(np.append(row, 1.0)[None, :])], format="csc")
    b = np.append(state.b, rhs)
    basis = np.append(state.basis, n)
    binv = np.zeros((m + 1, m + 1))
    binv[:m, :m] = state.binv
    binv[m, :m] = -row[state.basis] @ state.binv
    binv[m, m] = 1.0
    x_basic = np.append(state.x_basic, rhs - row[state.basis] @ state.x_basic)
    return SimplexState(A, b, basis, binv, x_basic, list(state.rows_dropped), 0)
