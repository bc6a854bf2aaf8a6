"""Semi-Lagrangian value iteration for the discounted equations.

The Bellman operator for the backward problem ``lambda u + H(x, du) = c`` is

    (T u)(x) = min_v  tau * (Lbar(x, v) + c) + exp(-lambda tau) * u(x - tau v)

with periodic linear interpolation of ``u``.  ``Lbar`` is ``L(x, v)`` for
the endpoint rule, or the average of ``L`` at both ends of the step for the
trapezoid rule (the default; first-order endpoint costs bias the limit by
about ``tau``).  Forward solutions are ``u_lambda^+ = -u^_lambda^-`` where the
hat solve uses the reflected Lagrangian.
"""

from __future__ import annotations

import csv
import math
import numbers
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .model import LagrangianTable, TorusGrid, VelocityGrid, symmetric_dual


class SolverNotConvergedError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class VelocityBoundaryWarning(UserWarning):
    pass


@dataclass
class SolverParams:
    tau: float = 0.05
    tol: Optional[float] = None
    max_iter: int = 2_000_000
    interpolation: str = "linear"
    quadrature: str = "trapezoid"

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.tol is not None and not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.interpolation != "linear":
            raise ValueError("only linear interpolation is supported")
        if self.quadrature not in ("trapezoid", "endpoint"):
            raise ValueError(f"quadrature must be 'trapezoid' or 'endpoint', got {self.quadrature!r}")

    def tolerance(self, lam: float) -> float:
        if self.tol is not None:
            return self.tol
        return 1e-9 * (1.0 + 1.0 / lam) if lam > 0 else 1e-9


@dataclass(eq=False)
class ValueField:
    values: np.ndarray
    grid: TorusGrid
    label: str = ""
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_nodes,):
            raise ValueError(f"field has shape {self.values.shape}, grid has {self.grid.n_nodes} nodes")
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"field {self.label!r} has non-finite values")

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def lipschitz(self) -> float:
        """Largest difference quotient between axis-adjacent nodes."""
        g = self.grid
        worst = 0.0
        for a in range(g.dim):
            k = np.zeros(g.dim, dtype=np.int64)
            k[a] = 1
            worst = max(worst, float(np.max(np.abs(self.values[g.shift(k)] - self.values))) / g.spacing)
        return worst

    def __neg__(self) -> "ValueField":
        return ValueField(0.0 - self.values, self.grid, self.label, dict(self.info))

    def to_csv(self, path) -> None:
        g = self.grid
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            if g.dim == 1:
                wr.writerow(["x_index", "x_coord", "value"])
                for i, x in enumerate(g.axis):
                    wr.writerow([i, repr(float(x)), repr(float(self.values[i]))])
            else:
                wr.writerow(["x_index", "x_coord_1", "x_coord_2", "value"])
                for i, x in enumerate(g.coords):
                    wr.writerow([i, repr(float(x[0])), repr(float(x[1])), repr(float(self.values[i]))])


@dataclass(eq=False)
class Policy:
    """Arg-min velocity node per x-node from the last Bellman update."""

    indices: np.ndarray
    vgrid: VelocityGrid

    @property
    def velocities(self) -> np.ndarray:
        return self.vgrid.nodes[self.indices]

    def on_boundary(self) -> np.ndarray:
        return self.vgrid.boundary_mask[self.indices]


# --- discretisation ----------------------------------------------------


def transport_stencil(xgrid: TorusGrid, vgrid: VelocityGrid, tau: float, sign: float = -1.0):
    """Interpolation stencil of ``x_i + sign * tau * v_l`` for all node/velocity pairs.

    Positions are formed in cell units from the integer node index, so a
    zero displacement lands exactly on the node.
    """
    disp = sign * tau * vgrid.nodes * xgrid.n  # (M, dim), in cells
    pos = xgrid.multi_indices[:, None, :].astype(float) + disp[None, :, :]
    return xgrid.interpolation(pos)


def step_cost(table: LagrangianTable, c: float, tau: float, quadrature: str, idx, wts) -> np.ndarray:
    values = table.values
    if quadrature == "endpoint":
        return tau * (values + c)
    cols = np.arange(values.shape[1])[None, :, None]
    other = np.sum(wts * values[idx, cols], axis=2)
    return tau * (0.5 * (values + other) + c)


def _prepare(table: LagrangianTable, c: float, params: SolverParams):
    idx, wts = transport_stencil(table.xgrid, table.vgrid, params.tau, -1.0)
    cost = step_cost(table, c, params.tau, params.quadrature, idx, wts)
    return np.ascontiguousarray(cost), np.ascontiguousarray(idx), np.ascontiguousarray(wts)


def bellman_update(u: ValueField, table: LagrangianTable, lam: float, c: float, params: SolverParams):
    """One Jacobi sweep of the backward Bellman operator; returns ``(Tu, policy)``."""
    if u.grid != table.xgrid:
        raise ValueError("value field and Lagrangian table live on different grids")
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    cost, idx, wts = _prepare(table, c, params)
    out, pol = kernels.bellman_sweep(cost, math.exp(-lam * params.tau), idx, wts, u.values)
    return ValueField(out, u.grid, u.label), Policy(pol, table.vgrid)


def contraction_ratios(residuals: Sequence[float], scale: float = 1.0) -> np.ndarray:
    """``r_{k+1} / r_k`` for ``k >= 2`` (1-based), skipping residuals at round-off level."""
    r = np.asarray(residuals, dtype=float)
    if r.size < 3:
        return np.empty(0)
    prev, nxt = r[1:-1], r[2:]
    floor = 64 * np.finfo(float).eps * max(scale, 1.0)
    keep = prev > floor
    return nxt[keep] / prev[keep]


def solve_discounted_backward(table: LagrangianTable, lam: float, c: float, params: Optional[SolverParams] = None,
                              initial: Optional[np.ndarray] = None, label: str = "u_lambda_minus"):
    """Fixed point of the backward Bellman operator from ``u = 0``; returns ``(field, policy)``.

    ``field.info`` records the residual history and the worst contraction
    ratio relative to ``exp(-lambda tau)``.
    """
    params = params or SolverParams()
    if not lam > 0:
        raise ValueError("lambda must be positive for the discounted solve")
    cost, idx, wts = _prepare(table, c, params)
    beta = math.exp(-lam * params.tau)
    tol = params.tolerance(lam)
    u0 = np.zeros(table.xgrid.n_nodes) if initial is None else np.asarray(initial, dtype=float)
    u, pol, residuals, converged = kernels.value_iteration(cost, beta, idx, wts, u0, tol, params.max_iter)
    if not converged:
        last = float(residuals[-1]) if len(residuals) else float("nan")
        raise SolverNotConvergedError(f"value iteration hit max_iter={params.max_iter} with residual {last:.3g} > {tol:.3g}", last)
    ratios = contraction_ratios(residuals, float(np.max(np.abs(u))) if u.size else 1.0)
    worst = float(np.max(ratios) / beta) if ratios.size else 0.0
    policy = Policy(pol, table.vgrid)
    if np.any(policy.on_boundary()):
        warnings.warn(f"arg-min velocity on the velocity-grid boundary (vmax={table.vgrid.vmax:g}); increase vmax",
                      VelocityBoundaryWarning, stacklevel=2)
    info = {
        "lambda": lam, "c": c, "tau": params.tau, "tol": tol, "iterations": int(len(residuals)),
        "residuals": np.asarray(residuals), "contraction_factor": beta,
        "worst_ratio_over_factor": worst, "contraction_ok": worst <= 1.05,
    }
    return ValueField(u + 0.0, table.xgrid, label, info), policy


def solve_forward(table: LagrangianTable, lam: float, c: float, params: Optional[SolverParams] = None) -> ValueField:
    """``u_lambda^+ = -u^_lambda^-``: the backward solve of the reflected Lagrangian, negated.

    The forward policy (velocity indices of the original grid) is kept in
    ``info['policy']``.
    """
    hat = symmetric_dual(table)
    field_hat, pol = solve_discounted_backward(hat, lam, c, params, label="u_hat_lambda_minus")
    info = dict(field_hat.info)
    info["policy"] = Policy(table.vgrid.reflection[pol.indices], table.vgrid)
    return ValueField(0.0 - field_hat.values, table.xgrid, "u_lambda_plus", info)


# --- calibrated curves -------------------------------------------------


@dataclass(eq=False)
class CalibratedCurve:
    points: np.ndarray      # (steps + 1, dim), wrapped into [0, 1)
    velocities: np.ndarray  # (steps, dim)
    defects: np.ndarray     # (steps,)
    tau: float
    lam: float

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.points)) * self.tau

    def defect_rate(self) -> float:
        """Accumulated calibration defect per unit time."""
        if len(self.defects) == 0:
            return 0.0
        return float(np.sum(self.defects) / (len(self.defects) * self.tau))

    def to_csv(self, path) -> None:
        dim = self.points.shape[1]
        xs = ["x"] if dim == 1 else [f"x{a + 1}" for a in range(dim)]
        vs = ["v"] if dim == 1 else [f"v{a + 1}" for a in range(dim)]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["k", "t"] + xs + vs + ["defect"])
            for k in range(len(self.points)):
                vel = self.velocities[k] if k < len(self.velocities) else np.full(dim, np.nan)
                dfc = self.defects[k] if k < len(self.defects) else float("nan")
                wr.writerow([k, repr(k * self.tau)] + [repr(float(a)) for a in self.points[k]]
                            + [repr(float(a)) for a in vel] + [repr(float(dfc))])


def _wrap(x):
    out = np.mod(x, 1.0)
    out[out >= 1.0] = 0.0
    return out


def extract_calibrated_curve(u: ValueField, table: LagrangianTable, lam: float, c: float, x0, steps: int,
                             params: Optional[SolverParams] = None) -> CalibratedCurve:
    """Greedy forward rollout of a forward solution ``u``.

    Each step picks the velocity maximising ``exp(-lambda tau) u(x + tau w) - cost(x, w)``
    (the forward Bellman relation) and records the defect
    ``|exp(-lambda tau) u(x_{k+1}) - u(x_k) - cost_k|``.  ``x0`` is a node
    index or a coordinate vector.
    """
    params = params or SolverParams()
    g, vg = table.xgrid, table.vgrid
    tau = params.tau
    beta = math.exp(-lam * tau)
    if isinstance(x0, numbers.Integral):
        x = g.node(int(x0))
    else:
        x = np.asarray(x0, dtype=float).reshape(g.dim)
    w = vg.nodes
    points = [_wrap(x)]
    vels, defects = [], []
    for _ in range(int(steps)):
        here = points[-1]
        dest = _wrap(here[None, :] + tau * w)
        l_here = table.at_points(here[None, :])[0]
        if params.quadrature == "trapezoid":
            rows = table.at_points(dest)
            l_dest = rows[np.arange(vg.size), np.arange(vg.size)]
            cost = tau * (0.5 * (l_here + l_dest) + c)
        else:
            cost = tau * (l_here + c)
        u_dest = g.interpolate(u.values, dest)
        choice = int(np.argmin(cost - beta * u_dest))
        u_here = float(g.interpolate(u.values, here[None, :])[0])
        defects.append(abs(beta * u_dest[choice] - u_here - cost[choice]))
        vels.append(w[choice])
        points.append(dest[choice])
    return CalibratedCurve(np.array(points), np.array(vels).reshape(-1, g.dim), np.array(defects), tau, lam)


# --- domination --------------------------------------------------------


@dataclass
class DominationReport:
    max_violation: float
    per_time: dict
    worst_pair: tuple
    lam: float

    def passed(self, tol: float) -> bool:
        return self.max_violation <= tol


def check_domination(u: ValueField, table: LagrangianTable, lam: float, c: float, horizon: int,
                     params: Optional[SolverParams] = None, times: Optional[Sequence[float]] = None) -> DominationReport:
    """Check ``exp(-lambda t) u(y) - u(x) <= h_lambda^t(x, y)`` at all node pairs.

    ``h_lambda^t`` is the discounted min-plus power of the one-step action
    kernel with step ``tau``; ``lambda = 0`` gives the subsolution test
    ``u(y) - u(x) <= h^t(x, y)``.  All ``t = k tau, k <= horizon`` are
    checked unless ``times`` selects a subset.
    """
    from .barrier import build_action_kernel, discounted_powers

    params = params or SolverParams()
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    kernel = build_action_kernel(table, c, params.tau)
    wanted = None
    if times is not None:
        wanted = {int(round(t / params.tau)) for t in times}
        if max(wanted) > horizon:
            raise ValueError("requested time beyond the horizon")
    per_time = {}
    worst, pair = -np.inf, (0, 0)
    vals = u.values
    for k, hk in discounted_powers(kernel, lam, horizon, wanted):
        disc = math.exp(-lam * k * params.tau)
        viol = disc * vals[None, :] - vals[:, None] - hk
        i, j = np.unravel_index(int(np.argmax(viol)), viol.shape)
        per_time[round(k * params.tau, 12)] = float(viol[i, j])
        if viol[i, j] > worst:
            worst, pair = float(viol[i, j]), (int(i), int(j))
    return DominationReport(max(worst, 0.0), per_time, pair, lam)
