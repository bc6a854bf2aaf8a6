"""Closed probability measures on the product grid and the Mather LP.

Variables are weights ``w(x_i, v_l)`` flattened as ``i * n_vel + l``.  A
measure is closed when, for every hat function ``phi_k`` of the periodic
linear interpolation,

    sum_{i,l} w(i, l) * (phi_k(x_i + tau v_l) - phi_k(x_i)) / tau = 0.

The LP stores these rows multiplied by ``tau`` (entries of order one); the
last node's row is implied by the others and is dropped.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import simplex as sx
from .discounted import transport_stencil
from .model import LagrangianTable, TorusGrid, VelocityGrid


class CFLWarning(UserWarning):
    pass


class FaceToleranceError(ValueError):
    def __init__(self, message: str, suggested: float):
        super().__init__(f"{message}; try face_tol >= {suggested:.3g}")
        self.suggested = suggested


SUPPORT_THRESHOLD = 1e-6


def transport_matrix(xgrid: TorusGrid, vgrid: VelocityGrid, tau: float) -> sp.csr_matrix:
    """``D[k, i*M + l] = phi_k(x_i + tau v_l) - phi_k(x_i)`` for every node ``k``."""
    idx, wts = transport_stencil(xgrid, vgrid, tau, +1.0)
    n, m, q = idx.shape
    cols = np.arange(n * m)
    rows = np.concatenate([idx.reshape(n * m, q).T.ravel(), np.repeat(np.arange(n), m)])
    vals = np.concatenate([wts.reshape(n * m, q).T.ravel(), -np.ones(n * m)])
    allcols = np.concatenate([np.tile(cols, q), cols])
    mat = sp.coo_matrix((vals, (rows, allcols)), shape=(n, n * m)).tocsr()
    mat.sum_duplicates()
    mat.data[np.abs(mat.data) < 1e-15] = 0.0
    mat.eliminate_zeros()
    return mat


@dataclass(eq=False)
class DiscreteClosedMeasure:
    weights: np.ndarray  # (n_nodes, n_vel)
    tau: float
    xgrid: TorusGrid
    vgrid: VelocityGrid

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (self.xgrid.n_nodes, self.vgrid.size):
            raise ValueError("weights do not match the product grid")

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    def closedness_residual(self) -> float:
        """Largest closedness defect over all nodes, in the un-scaled form."""
        d = transport_matrix(self.xgrid, self.vgrid, self.tau)
        return float(np.max(np.abs(d @ self.weights.ravel()))) / self.tau

    def projected(self) -> np.ndarray:
        return self.weights.sum(axis=1)

    def cost(self, table: LagrangianTable) -> float:
        return float(np.sum(self.weights * table.values))

    def support(self, threshold: float = SUPPORT_THRESHOLD) -> np.ndarray:
        """``(x_index, v_index)`` pairs carrying more than ``threshold`` mass."""
        return np.argwhere(self.weights > threshold)

    def is_valid(self, mass_tol: float = 1e-9, closed_tol: float = 1e-8) -> bool:
        return (bool(np.all(self.weights >= 0)) and abs(self.mass - 1.0) <= mass_tol
                and self.closedness_residual() <= closed_tol)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["x_index", "v_index", "weight"])
            for i, l in np.argwhere(self.weights != 0):
                wr.writerow([int(i), int(l), repr(float(self.weights[i, l]))])


def reflect_measure(measure: DiscreteClosedMeasure) -> DiscreteClosedMeasure:
    """``w'(x, v) = w(x, -v)``, an exact permutation of the velocity columns."""
    return DiscreteClosedMeasure(measure.weights[:, measure.vgrid.reflection], measure.tau, measure.xgrid, measure.vgrid)


def stationary_measure(xgrid: TorusGrid, vgrid: VelocityGrid, x_weights, tau: float) -> DiscreteClosedMeasure:
    """Measure resting on the ``v = 0`` fibre with the given (normalised) x-marginal; always closed."""
    xw = np.asarray(x_weights, dtype=float)
    if np.any(xw < 0) or xw.sum() <= 0:
        raise ValueError("x-weights must be nonnegative with positive total")
    w = np.zeros((xgrid.n_nodes, vgrid.size))
    w[:, vgrid.zero_index] = xw / xw.sum()
    return DiscreteClosedMeasure(w, tau, xgrid, vgrid)


# --- LP ----------------------------------------------------------------


@dataclass(eq=False)
class LPProblem:
    table: LagrangianTable
    tau: float
    A: sp.csc_matrix
    b: np.ndarray
    cost: np.ndarray
    state: Optional[sx.SimplexState] = None
    result: Optional["MatherResult"] = None
    rule: str = "bland"
    perturb: float = 1e-7

    @property
    def n_variables(self) -> int:
        return self.A.shape[1]

    @property
    def n_constraints(self) -> int:
        return self.A.shape[0]

    def measure(self, x: np.ndarray) -> DiscreteClosedMeasure:
        t = self.table
        return DiscreteClosedMeasure(np.asarray(x[: self.n_variables]).reshape(t.xgrid.n_nodes, t.vgrid.size),
                                     self.tau, t.xgrid, t.vgrid)


def build_lp(table: LagrangianTable, tau: Optional[float] = None, rule: str = "bland",
             perturb: float = 1e-7) -> LPProblem:
    """Mather LP: mass one, closedness on all but the last node, objective ``sum w L``.

    ``tau`` defaults to ``spacing / vmax`` so that every transported point
    stays within one cell; larger values warn.  ``perturb`` is the size of
    the anti-degeneracy shift handed to the simplex (0 disables it).
    """
    g, vg = table.xgrid, table.vgrid
    cfl = g.spacing / vg.vmax
    if tau is None:
        tau = cfl
    if not tau > 0:
        raise ValueError("lp tau must be positive")
    if tau > cfl * (1 + 1e-12):
        warnings.warn(f"lp tau={tau:g} exceeds spacing/vmax={cfl:g}", CFLWarning, stacklevel=2)
    d = transport_matrix(g, vg, tau)
    nvar = d.shape[1]
    mass = sp.csr_matrix(np.ones((1, nvar)))
    A = sp.vstack([mass, d[:-1]], format="csc")
    b = np.zeros(A.shape[0])
    b[0] = 1.0
    return LPProblem(table, tau, A, b, table.values.ravel().copy(), rule=rule, perturb=perturb)


@dataclass(eq=False)
class MatherResult:
    optimal_value: float
    measure: DiscreteClosedMeasure
    problem: LPProblem
    pivots: int
    info: dict = field(default_factory=dict)

    @property
    def c_estimate(self) -> float:
        return -self.optimal_value

    @property
    def projected(self) -> np.ndarray:
        return self.measure.projected()

    @property
    def support(self) -> np.ndarray:
        """x-nodes whose projected mass exceeds the support threshold."""
        return np.flatnonzero(self.projected > SUPPORT_THRESHOLD)

    @property
    def support_pairs(self) -> np.ndarray:
        return self.measure.support()

    def summary(self) -> dict:
        return {
            "optimal_value": self.optimal_value,
            "c_estimate": self.c_estimate,
            "support": [int(i) for i in self.support],
            "support_pairs": [[int(i), int(l)] for i, l in self.support_pairs],
            "support_velocities": [self.measure.vgrid.nodes[int(l)].tolist() for _, l in self.support_pairs],
            "mass_error": abs(self.measure.mass - 1.0),
            "closedness_residual": self.measure.closedness_residual(),
            "pivots": self.pivots,
            "lp_tau": self.measure.tau,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _start_column(table: LagrangianTable) -> int:
    vg = table.vgrid
    i = int(np.argmin(table.values[:, vg.zero_index]))
    return i * vg.size + vg.zero_index


def solve_lp(problem: LPProblem) -> MatherResult:
    """Optimal vertex from the Dirac at the cheapest resting point.

    Resting columns have no closedness coefficients, so that Dirac plus
    zero-valued artificials is a feasible basis for the primal simplex.
    """
    start = _start_column(problem.table)
    state = sx.start_with_artificials(problem.A, problem.b, start, 0)
    res = sx.simplex(state, problem.cost, rule=problem.rule, perturb=problem.perturb)
    measure = problem.measure(res.x)
    problem.state = res.state
    result = MatherResult(res.value, measure, problem, res.pivots, {"rows_dropped": list(res.state.rows_dropped)})
    problem.result = result
    return result


def critical_value_lp(table: LagrangianTable, tau: Optional[float] = None) -> float:
    return solve_lp(build_lp(table, tau)).c_estimate


def lift_objective(problem: LPProblem, objective) -> np.ndarray:
    """Accept per-(x, v) weights or per-x weights (constant along each fibre)."""
    t = problem.table
    obj = np.asarray(objective, dtype=float)
    if obj.shape == (t.xgrid.n_nodes,):
        obj = np.repeat(obj[:, None], t.vgrid.size, axis=1)
    if obj.shape != (t.xgrid.n_nodes, t.vgrid.size):
        if obj.shape != (problem.n_variables,):
            raise ValueError(f"objective shape {obj.shape} matches neither x-nodes nor the product grid")
    return obj.ravel()


def default_face_tol(value: float) -> float:
    return 1e-7 * (1.0 + abs(value))


def reduced_costs(problem: LPProblem) -> np.ndarray:
    """Reduced costs of the stored optimal basis for the Lagrangian objective."""
    st = problem.state
    y = problem.cost[st.basis] @ st.binv
    d = problem.cost - st.A.T @ y
    d[st.basis] = 0.0
    return d


def optimize_over_mather_face(problem: LPProblem, objective, face_tol: Optional[float] = None) -> MatherResult:
    """Minimise ``objective`` over the optimal face of the Mather LP.

    With ``d`` the reduced costs of the optimal basis, every feasible ``w``
    has ``sum w L = V* + sum d w``, and the optimal face is the set of
    feasible ``w`` vanishing where ``d > 0``.  The search runs over columns
    with ``d <= face_tol``, so each returned measure satisfies
    ``sum w L <= V* + face_tol``, warm-started from the optimal basis.
    """
    if problem.state is None:
        solve_lp(problem)
    vstar = problem.result.optimal_value
    tol = default_face_tol(vstar) if face_tol is None else float(face_tol)
    if not tol > 0:
        raise FaceToleranceError(f"face_tol must be positive, got {tol:g}", suggested=default_face_tol(vstar))
    d = reduced_costs(problem)
    if np.min(d) < -tol:
        raise FaceToleranceError(f"stored basis has reduced cost {np.min(d):.3g} below -face_tol",
                                 suggested=10.0 * abs(float(np.min(d))))
    allowed = d <= tol
    state = problem.state.copy()
    state.pivots = 0
    obj = lift_objective(problem, objective)
    res = sx.simplex(state, obj, rule=problem.rule, fixed=~allowed, perturb=problem.perturb)
    measure = problem.measure(res.x)
    cost = measure.cost(problem.table)
    return MatherResult(cost, measure, problem, res.pivots,
                        {"face_tol": tol, "face_objective": res.value, "face_columns": int(allowed.sum()),
                         "excess": cost - vstar})
