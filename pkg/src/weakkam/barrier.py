"""Min-plus action kernels, the action function h^t and the Peierls barrier.

A kernel entry ``K(i, j)`` is the action of the straight lattice move from
node ``i`` to node ``j`` in time ``delta``, with the Lagrangian averaged over
both ends of the move.  Averaging makes the kernel of the reflected
Lagrangian the exact transpose of this one.

Unreachable moves carry the finite sentinel :data:`CAP`; every reduction
treats entries at or above it as ``+inf``.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from . import kernels
from .kernels import CAP
from .model import LagrangianTable, TorusGrid, symmetric_dual


class DisconnectedKernelError(ValueError):
    pass


class NonIntegralPowerError(ValueError):
    pass


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MinPlusKernel:
    entries: np.ndarray
    step: float
    c_used: float
    grid: TorusGrid

    def __post_init__(self):
        n = self.grid.n_nodes
        if self.entries.shape != (n, n):
            raise ValueError(f"kernel shape {self.entries.shape} does not match {n} nodes")

    @property
    def finite_mask(self) -> np.ndarray:
        return self.entries < CAP

    def transpose(self) -> "MinPlusKernel":
        return MinPlusKernel(np.ascontiguousarray(self.entries.T), self.step, self.c_used, self.grid)

    def shifted(self, amount: float) -> "MinPlusKernel":
        """Subtract ``amount`` from every reachable entry."""
        out = np.where(self.finite_mask, self.entries - amount, CAP)
        return MinPlusKernel(out, self.step, self.c_used, self.grid)

    @classmethod
    def identity(cls, grid: TorusGrid, step: float = 0.0, c_used: float = 0.0) -> "MinPlusKernel":
        e = np.full((grid.n_nodes, grid.n_nodes), CAP)
        np.fill_diagonal(e, 0.0)
        return cls(e, step, c_used, grid)

    def to_csv(self, path) -> None:
        write_matrix_csv(self.entries, path)


def write_matrix_csv(matrix: np.ndarray, path) -> None:
    """Dense matrix with a header row of column node indices and a leading row index."""
    n = matrix.shape[1]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["row"] + [str(j) for j in range(n)])
        for i, row in enumerate(matrix):
            wr.writerow([i] + [repr(float(a)) for a in row])


# --- kernels -----------------------------------------------------------


def build_action_kernel(table: LagrangianTable, c: float, delta: float, substeps: int = 1) -> MinPlusKernel:
    """One-step action kernel of duration ``delta``.

    With ``substeps = s > 1`` the kernel is the ``s``-fold min-plus power of
    the ``delta / s`` kernel.  Moves whose velocity leaves the velocity box
    are unreachable.
    """
    if substeps < 1 or int(substeps) != substeps:
        raise ValueError("substeps must be a positive integer")
    if not delta > 0:
        raise ValueError("delta must be positive")
    tau = delta / substeps
    if tau > 0.1 + 1e-12:
        raise ValueError(f"substep {tau:g} exceeds 0.1; use more substeps")
    g, vg = table.xgrid, table.vgrid
    n = g.n
    kmax = int(math.floor(vg.vmax * tau * n + 1e-9))
    if kmax < 1:
        raise DisconnectedKernelError(
            f"delta/substeps={tau:g} too small: no neighbouring node reachable with |v| <= {vg.vmax:g} on n={n}"
        )
    entries = np.full((g.n_nodes, g.n_nodes), CAP)
    rows = np.arange(g.n_nodes)
    for k in itertools.product(range(-kmax, kmax + 1), repeat=g.dim):
        k = np.asarray(k, dtype=np.int64)
        w = k / (n * tau)
        lw = table.value_at(w)
        dest = g.shift(k)
        cost = tau * (0.5 * (lw + lw[dest]) + c)
        np.minimum.at(entries, (rows, dest), cost)
    kernel = MinPlusKernel(entries, tau, c, g)
    if substeps > 1:
        kernel = kernel_power(kernel, substeps)
    return kernel


def minplus_product(a: MinPlusKernel, b: MinPlusKernel) -> MinPlusKernel:
    if a.grid != b.grid:
        raise GridMismatchError("kernels live on different grids")
    return MinPlusKernel(kernels.minplus(a.entries, b.entries), a.step + b.step, a.c_used, a.grid)


def kernel_power(kernel: MinPlusKernel, m: int) -> MinPlusKernel:
    """``m``-fold min-plus power by binary powering (``m = 0`` is the identity)."""
    if m < 0:
        raise ValueError("power must be nonnegative")
    result = None
    base = kernel
    while m:
        if m & 1:
            result = base if result is None else minplus_product(result, base)
        m >>= 1
        if m:
            base = minplus_product(base, base)
    if result is None:
        return MinPlusKernel.identity(kernel.grid, 0.0, kernel.c_used)
    return result


def compute_ht(kernel: MinPlusKernel, t: float) -> np.ndarray:
    """``h^t`` on the node lattice; ``t`` must be a positive multiple of the kernel step."""
    r = t / kernel.step
    m = int(round(r))
    if m < 1 or abs(r - m) > 1e-9 * max(1.0, r):
        raise NonIntegralPowerError(f"t={t:g} is not a positive integer multiple of step {kernel.step:g}")
    return kernel_power(kernel, m).entries


def discounted_powers(kernel: MinPlusKernel, lam: float, horizon: int,
                      wanted: Optional[Iterable[int]] = None) -> Iterator[tuple[int, np.ndarray]]:
    """Yield ``(k, H_k)`` for ``k = 1..horizon`` with ``H_{k+1} = K (x) exp(-lambda step) H_k``.

    ``H_k(x, y)`` is the least discounted action over ``k``-step lattice
    paths from ``x`` to ``y``, the first step undiscounted.
    """
    wanted = None if wanted is None else set(wanted)
    beta = math.exp(-lam * kernel.step)
    h = kernel.entries
    for k in range(1, horizon + 1):
        if k > 1:
            scaled = np.where(h < CAP, beta * h, CAP) if lam > 0 else h
            h = kernels.minplus(kernel.entries, scaled)
        if wanted is None or k in wanted:
            yield k, h


# --- drift -------------------------------------------------------------


def _components(entries: np.ndarray) -> tuple[int, np.ndarray]:
    return connected_components(csr_matrix(entries < CAP), directed=True, connection="strong")


def _check_connected(entries: np.ndarray) -> None:
    ncomp, _ = _components(entries)
    if ncomp != 1:
        raise DisconnectedKernelError(f"kernel graph has {ncomp} strongly connected components")


def _karp(a: np.ndarray) -> float:
    """Karp's recurrence on one strongly connected block (``inf`` marks missing edges)."""
    n = a.shape[0]
    d = np.full((n + 1, n), np.inf)
    d[0, 0] = 0.0
    for k in range(n):
        d[k + 1] = np.min(d[k][:, None] + a, axis=0)
    best = np.inf
    dn = d[n]
    ks = np.arange(n)
    with np.errstate(invalid="ignore"):
        for v in range(n):
            if not np.isfinite(dn[v]):
                continue
            col = d[:n, v]
            ok = np.isfinite(col)
            best = min(best, np.max((dn[v] - col[ok]) / (n - ks[ok])))
    return float(best)


def minplus_eigenvalue(kernel: MinPlusKernel, require_connected: bool = False) -> float:
    """Minimum cycle mean of the kernel graph (Karp).

    Divided by ``kernel.step`` this is ``c_used - c`` for the critical
    value ``c`` of the discrete action.  Every cycle lies inside one
    strongly connected component, so the recurrence runs per component and
    the smallest mean wins; ``require_connected`` rejects graphs with more
    than one component instead.
    """
    if require_connected:
        _check_connected(kernel.entries)
    a = np.where(kernel.finite_mask, kernel.entries, np.inf)
    ncomp, labels = _components(kernel.entries)
    best = np.inf
    for comp in range(ncomp):
        idx = np.flatnonzero(labels == comp)
        block = a[np.ix_(idx, idx)]
        if idx.size == 1 and not np.isfinite(block[0, 0]):
            continue  # a lone node without a self-loop carries no cycle
        best = min(best, _karp(block))
    if not np.isfinite(best):
        raise DisconnectedKernelError("kernel graph has no cycle")
    return float(best)


# --- Peierls barrier ---------------------------------------------------


@dataclass(eq=False)
class BarrierResult:
    h_inf: np.ndarray
    step: float
    c_used: float
    drift: float
    t_checked: list
    converged: bool
    tol: float
    change: float
    oscillation: float
    tail_gap: float
    grid: TorusGrid
    info: dict = field(default_factory=dict)

    @property
    def c_estimate(self) -> float:
        return self.c_used - self.drift / self.step

    @property
    def diagonal(self) -> np.ndarray:
        return np.diag(self.h_inf).copy()

    def triangle_violation(self) -> float:
        comp = kernels.minplus(self.h_inf, self.h_inf)
        return float(np.max(self.h_inf - comp))

    def to_csv(self, path) -> None:
        write_matrix_csv(self.h_inf, path)

    def metadata(self) -> dict:
        return {
            "step": self.step,
            "c_used": self.c_used,
            "drift": self.drift,
            "c_estimate": self.c_estimate,
            "t_checked": [float(t) for t in self.t_checked],
            "converged": bool(self.converged),
            "tol": self.tol,
            "last_change": self.change,
            "tail_oscillation": self.oscillation,
            "tail_gap": self.tail_gap,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.metadata(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def compute_peierls(kernel: MinPlusKernel, horizon_T: Optional[float] = None, tol: float = 1e-10,
                    tail: int = 16, drift: Optional[float] = None) -> BarrierResult:
    """Peierls barrier as the stabilised windowed minimum of drift-free kernel powers.

    With ``K0 = K - rho`` (``rho`` the minimum cycle mean of ``K`` and of its
    transpose, which agree up to rounding), the window
    ``W_M = min_{M <= m < 2M} K0^m`` is tracked along doublings of ``M``.
    Once two consecutive windows agree within ``tol`` the earlier one is
    returned, which satisfies the triangle inequality within ``tol``.
    Then ``tail`` single steps past the window record how much the powers
    still move (``oscillation``) and how far below the result they reach
    (``tail_gap``).
    """
    step = kernel.step
    if horizon_T is None:
        horizon_T = 2.0 ** 20 * step
    if horizon_T < 100 * step * (1 - 1e-12):
        raise ValueError(f"horizon_T={horizon_T:g} must be at least 100 steps ({100 * step:g})")
    max_power = int(math.floor(horizon_T / step + 1e-9))
    if drift is None:
        drift = min(minplus_eigenvalue(kernel), minplus_eigenvalue(kernel.transpose()))
    k0 = kernel.shifted(drift).entries
    mp = kernels.minplus
    power = k0                              # K0^M
    acc = MinPlusKernel.identity(kernel.grid).entries  # min_{m<M} K0^m
    window = np.minimum(mp(power, acc), mp(acc, power))
    m = 1
    t_checked = [step]
    prev = None
    change = np.inf
    converged = False
    while True:
        if prev is not None:
            change = float(np.max(np.abs(window - prev)))
            if change <= tol:
                converged = True
                break
        if 4 * m > max_power:
            break
        acc = np.minimum(acc, window)
        power = mp(power, power)
        m *= 2
        prev = window
        window = np.minimum(mp(power, acc), mp(acc, power))
        t_checked.append(m * step)
    h = prev if converged else window
    if np.any(h >= CAP):
        raise DisconnectedKernelError("unreachable pairs remain in the barrier; kernel is not connected")
    # single-step tail beyond the window
    osc, gap = 0.0, -np.inf
    cur = h
    for _ in range(tail):
        cur = np.minimum(mp(cur, k0), mp(k0, cur))
        osc = max(osc, float(np.max(np.abs(cur - h))))
        gap = max(gap, float(np.max(h - cur)))
    return BarrierResult(h, step, kernel.c_used, float(drift), t_checked, converged, tol,
                         change, osc, max(gap, 0.0), kernel.grid, {"powers": m})


# --- Aubry set ---------------------------------------------------------


@dataclass
class AubrySet:
    indices: np.ndarray
    tol: float
    grid: TorusGrid

    @property
    def points(self) -> np.ndarray:
        return self.grid.coords[self.indices]

    def clusters(self) -> list[np.ndarray]:
        return node_clusters(self.grid, self.indices)

    def __contains__(self, i) -> bool:
        return int(i) in set(self.indices.tolist())

    def __len__(self) -> int:
        return len(self.indices)


def node_clusters(grid: TorusGrid, indices) -> list[np.ndarray]:
    """Connected components of a node set under periodic axis adjacency."""
    indices = np.asarray(sorted(set(int(i) for i in indices)), dtype=np.int64)
    if indices.size == 0:
        return []
    member = np.full(grid.n_nodes, -1)
    member[indices] = np.arange(indices.size)
    rows, cols = [], []
    for a in range(grid.dim):
        k = np.zeros(grid.dim, dtype=np.int64)
        k[a] = 1
        nb = grid.shift(k)[indices]
        ok = member[nb] >= 0
        rows.extend(np.arange(indices.size)[ok])
        cols.extend(member[nb[ok]])
    adj = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(indices.size, indices.size))
    ncomp, labels = connected_components(adj, directed=False)
    groups = [indices[labels == c] for c in range(ncomp)]
    return sorted(groups, key=lambda g: int(g[0]))


def aubry_set(result: BarrierResult, tol: float = 1e-6) -> AubrySet:
    """Nodes whose barrier diagonal is at most ``tol``; always contains the diagonal argmin."""
    if not result.converged:
        raise ValueError("barrier did not converge; the Aubry set is not defined")
    diag = result.diagonal
    idx = np.flatnonzero(diag <= tol)
    if idx.size == 0:
        idx = np.array([int(np.argmin(diag))])
    return AubrySet(idx, tol, result.grid)


# --- symmetry ----------------------------------------------------------


@dataclass
class SymmetryReport:
    kernel_deviation: float
    barrier_deviation: float
    self_asymmetry: float
    kernel: MinPlusKernel
    kernel_hat: MinPlusKernel
    barrier: Optional[BarrierResult]
    barrier_hat: Optional[BarrierResult]

    @property
    def exact(self) -> bool:
        return self.kernel_deviation == 0.0 and self.barrier_deviation == 0.0


def barrier_symmetry_check(table: LagrangianTable, c: float, delta: float, substeps: int = 1,
                           with_barrier: bool = True, tol: float = 1e-10,
                           horizon_T: Optional[float] = None) -> SymmetryReport:
    """Compare the kernel and barrier of ``L^`` with the transposes of those of ``L``."""
    k = build_action_kernel(table, c, delta, substeps)
    kh = build_action_kernel(symmetric_dual(table), c, delta, substeps)
    kdev = float(np.max(np.abs(kh.entries - k.entries.T)))
    b = bh = None
    bdev = 0.0
    asym = 0.0
    if with_barrier:
        b = compute_peierls(k, horizon_T, tol)
        bh = compute_peierls(kh, horizon_T, tol)
        bdev = float(np.max(np.abs(bh.h_inf - b.h_inf.T)))
        asym = float(np.max(np.abs(b.h_inf - b.h_inf.T)))
    return SymmetryReport(kdev, bdev, asym, k, kh, b, bh)
