"""Vanishing-discount drivers, representation formulas and conjugate-pair reports."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ._accel import thread_count
from .barrier import BarrierResult, build_action_kernel, compute_ht
from .discounted import SolverParams, ValueField, solve_discounted_backward, solve_forward
from .mather import LPProblem, optimize_over_mather_face
from .model import LagrangianTable


def default_lambdas() -> list[float]:
    return [2.0 ** -k for k in range(7)]


@dataclass
class LambdaSchedule:
    lambda_values: list = field(default_factory=default_lambdas)
    params: Optional[dict] = None  # optional per-lambda SolverParams

    def __post_init__(self):
        lam = [float(v) for v in self.lambda_values]
        if not lam:
            raise ValueError("lambda schedule is empty")
        if any(not v > 0 for v in lam):
            raise ValueError("lambda values must be positive")
        if any(b >= a for a, b in zip(lam, lam[1:])):
            raise ValueError("lambda values must be strictly decreasing")
        self.lambda_values = lam

    def params_for(self, lam: float, default: SolverParams) -> SolverParams:
        if self.params and lam in self.params:
            return self.params[lam]
        return default

    def __len__(self) -> int:
        return len(self.lambda_values)


# --- critical value ----------------------------------------------------


@dataclass
class ErgodicEstimate:
    value: float
    spread: float
    lam: float

    def __float__(self) -> float:
        return self.value


def critical_value_ergodic(table: LagrangianTable, lam: float = 1.0 / 64, params: Optional[SolverParams] = None) -> ErgodicEstimate:
    """``c ~ -lambda * mean(v_lambda)`` for the backward solve with ``c = 0``.

    ``spread = lambda * (max - min)`` is reported as an error bar.
    """
    v, _ = solve_discounted_backward(table, lam, 0.0, params, label="v_lambda")
    vals = v.values
    return ErgodicEstimate(float(-lam * np.mean(vals)), float(lam * (vals.max() - vals.min())), lam)


# --- vanishing discount ------------------------------------------------


@dataclass(eq=False)
class LimitResult:
    direction: str
    lambdas: list
    per_lambda: dict
    successive_diffs: np.ndarray
    cauchy_tol: float
    gaps_factor: float = 1.05
    richardson: Optional[ValueField] = None
    diagnostics: list = field(default_factory=list)

    @property
    def u_limit(self) -> ValueField:
        return self.per_lambda[self.lambdas[-1]]

    @property
    def cauchy_ok(self) -> bool:
        return len(self.successive_diffs) > 0 and float(self.successive_diffs[-1]) <= self.cauchy_tol

    @property
    def gaps_decreasing(self) -> bool:
        d = self.successive_diffs
        if len(d) < 2:
            return False
        return bool(np.all(d[1:] <= d[:-1] * self.gaps_factor))

    def sup_norms(self) -> np.ndarray:
        return np.array([self.per_lambda[l].sup_norm() for l in self.lambdas])

    def lipschitz_constants(self) -> np.ndarray:
        return np.array([self.per_lambda[l].lipschitz() for l in self.lambdas])

    def uniform_bounds(self) -> dict:
        """Family-wide factor-two checks on sup norms and Lipschitz constants."""
        s, lip = self.sup_norms(), self.lipschitz_constants()
        return {
            "sup_max": float(s.max()), "sup_min": float(s.min()),
            "sup_ok": bool(s.max() <= 2 * s.min() + 1),
            "lip_max": float(lip.max()), "lip_min": float(lip.min()),
            "lip_ok": bool(lip.max() <= 2 * lip.min()),
        }

    def summary(self) -> dict:
        return {
            "direction": self.direction,
            "lambdas": self.lambdas,
            "successive_diffs": [float(d) for d in self.successive_diffs],
            "cauchy_tol": self.cauchy_tol,
            "cauchy_ok": self.cauchy_ok,
            "gaps_decreasing": self.gaps_decreasing,
            "uniform_bounds": self.uniform_bounds(),
            "iterations": [int(self.per_lambda[l].info.get("iterations", 0)) for l in self.lambdas],
            "diagnostics": list(self.diagnostics),
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _drive(direction: str, table: LagrangianTable, schedule: LambdaSchedule, c: float,
           params: Optional[SolverParams], cauchy_tol: float, richardson: bool,
           threads: Optional[int]) -> LimitResult:
    params = params or SolverParams()
    lams = schedule.lambda_values

    def one(lam):
        p = schedule.params_for(lam, params)
        if direction == "forward":
            f = solve_forward(table, lam, c, p)
        else:
            f, _ = solve_discounted_backward(table, lam, c, p)
        f.label = f"u_lambda_{'plus' if direction == 'forward' else 'minus'}[{lam:g}]"
        return f

    workers = max(1, min(threads or thread_count(), len(lams)))
    if workers == 1:
        fields = [one(l) for l in lams]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            fields = list(pool.map(one, lams))
    per = dict(zip(lams, fields))
    diffs = np.array([float(np.max(np.abs(b.values - a.values))) for a, b in zip(fields, fields[1:])])
    res = LimitResult(direction, list(lams), per, diffs, cauchy_tol)
    if len(lams) < 2:
        res.diagnostics.append("schedule has a single lambda; the Cauchy property cannot be assessed")
    elif not res.cauchy_ok:
        res.diagnostics.append(f"final successive gap {diffs[-1]:.3g} exceeds cauchy_tol {cauchy_tol:g}")
    if richardson and len(lams) >= 2:
        la, lb = lams[-1], lams[-2]
        ua, ub = fields[-1].values, fields[-2].values
        res.richardson = ValueField(ua + (ua - ub) * la / (lb - la), table.xgrid, f"{direction}_richardson")
    return res


def vanishing_discount_forward(table: LagrangianTable, schedule: Optional[LambdaSchedule] = None, c: float = 0.0,
                               params: Optional[SolverParams] = None, cauchy_tol: float = 5e-2,
                               richardson: bool = False, threads: Optional[int] = None) -> LimitResult:
    """The family ``u_lambda^+`` along the schedule; the limit is the last member."""
    return _drive("forward", table, schedule or LambdaSchedule(), c, params, cauchy_tol, richardson, threads)


def vanishing_discount_backward(table: LagrangianTable, schedule: Optional[LambdaSchedule] = None, c: float = 0.0,
                                params: Optional[SolverParams] = None, cauchy_tol: float = 5e-2,
                                richardson: bool = False, threads: Optional[int] = None) -> LimitResult:
    """The family ``u_lambda^-`` along the schedule; the limit is the last member."""
    return _drive("backward", table, schedule or LambdaSchedule(), c, params, cauchy_tol, richardson, threads)


# --- representation formulas -------------------------------------------


def _represent(matrix: np.ndarray, problem: LPProblem, nodes, face_tol, sign: float, label: str) -> ValueField:
    g = problem.table.xgrid
    nodes = range(g.n_nodes) if nodes is None else [int(i) for i in nodes]
    values = np.zeros(g.n_nodes)
    proj = []
    for i in nodes:
        res = optimize_over_mather_face(problem, matrix[i], face_tol)
        values[i] = sign * res.info["face_objective"]
        proj.append(res.projected)
    proj = np.array(proj)
    diameter = float(np.max(np.abs(proj - proj[0]).sum(axis=1))) if len(proj) else 0.0
    return ValueField(values, g, label, {"nodes": list(nodes), "face_diameter_l1": diameter,
                                         "measures": distinct_measures(proj)})


def distinct_measures(projected, tol: float = 1e-6) -> list:
    """Projected measures from a stack, dropping those within ``tol`` (l1) of an earlier one."""
    out = []
    for p in projected:
        if all(np.abs(p - q).sum() > tol for q in out):
            out.append(np.asarray(p))
    return out


def representation_forward(barrier: BarrierResult, problem: LPProblem, nodes=None,
                           face_tol: Optional[float] = None) -> ValueField:
    """``-min over the optimal face of sum_y h_inf(x, y) mu(y)`` at every node ``x``.

    ``info['face_diameter_l1']`` is the largest l1 distance between the
    projected minimisers found for different ``x``; ``info['measures']``
    lists the distinct ones.
    """
    return _represent(barrier.h_inf, problem, nodes, face_tol, -1.0, "u0_plus_representation")


def representation_backward(barrier: BarrierResult, problem: LPProblem, nodes=None,
                            face_tol: Optional[float] = None) -> ValueField:
    """``min over the optimal face of sum_y h_inf(y, x) mu(y)`` at every node ``x``."""
    return _represent(barrier.h_inf.T, problem, nodes, face_tol, 1.0, "u0_minus_representation")


# --- subsolutions ------------------------------------------------------


def action_matrices(table: LagrangianTable, c: float, tau: float, times: Sequence[float]) -> dict:
    """``{t: h^t}`` from the lattice kernel of step ``tau``."""
    kernel = build_action_kernel(table, c, tau)
    return {float(t): compute_ht(kernel, t) for t in times}


def subsolution_violation(w: np.ndarray, ht: dict) -> float:
    """Largest ``w(y) - w(x) - h^t(x, y)`` over node pairs and the supplied times."""
    worst = -np.inf
    for h in ht.values():
        worst = max(worst, float(np.max(w[None, :] - w[:, None] - h)))
    return worst


@dataclass
class SubsolutionReport:
    domination_violation: float
    measure_integrals: list
    candidates: list  # (name, member, min(w - u))
    tol: float

    @property
    def dominated(self) -> bool:
        return self.domination_violation <= self.tol

    @property
    def integrals_ok(self) -> bool:
        return all(v >= -self.tol for v in self.measure_integrals)

    @property
    def minimal(self) -> bool:
        return all(gap >= -self.tol for _, member, gap in self.candidates if member)

    @property
    def passed(self) -> bool:
        return self.dominated and self.integrals_ok and self.minimal

    def summary(self) -> dict:
        return {
            "domination_violation": self.domination_violation,
            "measure_integrals": self.measure_integrals,
            "candidates": [{"name": n, "member": m, "min_gap": g} for n, m, g in self.candidates],
            "members_checked": sum(1 for _, m, _ in self.candidates if m),
            "dominated": self.dominated, "integrals_ok": self.integrals_ok, "minimal": self.minimal,
            "tol": self.tol,
        }


def subsolution_family_check(u_plus: ValueField, ht: dict, measures: Sequence[np.ndarray], tol: float = 5e-2,
                             h_inf: Optional[np.ndarray] = None, shifts: Sequence[int] = (1, 2, 4, 8),
                             constants: Sequence[float] = (0.1, 0.3, 1.0), probes: int = 8) -> SubsolutionReport:
    """Domination, integral and minimality checks of ``u_plus`` within the family of
    dominated functions with nonnegative integral against every supplied measure.

    Candidates are ``u + a``, ``max(u, u shifted by k cells) + a_k`` and,
    when ``h_inf`` is given, ``h_inf(z, .) + a_z`` and ``-h_inf(., z) + a_z``
    for ``probes`` evenly spaced ``z``.  The constants ``a`` are the least
    ones making every integral nonnegative; candidates failing the domination
    test are recorded as non-members and skipped.
    """
    u = u_plus.values
    g = u_plus.grid
    mus = [np.asarray(m, dtype=float) for m in measures]

    def lift(w):
        lowest = min((float(mu @ w) for mu in mus), default=0.0)
        return w + max(0.0, -lowest)

    cands = [(f"u+{a:g}", u + a) for a in constants]
    for k in shifts:
        shift = np.zeros(g.dim, dtype=np.int64)
        shift[0] = k
        cands.append((f"max(u,u<<{k})", lift(np.maximum(u, u[g.shift(shift)]))))
    if h_inf is not None:
        for z in np.linspace(0, g.n_nodes, probes, endpoint=False).astype(int):
            cands.append((f"h(z={z},.)", lift(h_inf[z].copy())))
            cands.append((f"-h(.,z={z})", lift(-h_inf[:, z].copy())))
    rows = []
    for name, w in cands:
        member = subsolution_violation(w, ht) <= tol and all(float(mu @ w) >= -tol for mu in mus)
        rows.append((name, bool(member), float(np.min(w - u))))
    return SubsolutionReport(max(subsolution_violation(u, ht), 0.0), [float(mu @ u) for mu in mus], rows, tol)


# --- conjugate pairs ---------------------------------------------------


@dataclass
class ConjugacyReport:
    min_gap: float
    mather_gap: float
    d_c: np.ndarray
    d_c_min: float
    aubry_d_c_max: float
    tol: float

    @property
    def pair_ok(self) -> bool:
        return self.min_gap >= -self.tol and self.mather_gap <= self.tol

    def summary(self) -> dict:
        return {
            "min_gap": self.min_gap, "mather_gap": self.mather_gap, "d_c_min": self.d_c_min,
            "aubry_d_c_max": self.aubry_d_c_max, "pair_ok": self.pair_ok, "tol": self.tol,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def conjugacy_report(u_minus: ValueField, u_plus: ValueField, barrier: BarrierResult, mather_support,
                     tol: float = 5e-2, aubry=None) -> ConjugacyReport:
    if u_minus.grid != u_plus.grid or u_plus.grid != barrier.grid:
        raise ValueError("fields and barrier live on different grids")
    gap = u_minus.values - u_plus.values
    support = np.asarray(mather_support, dtype=np.int64)
    if support.size == 0:
        raise ValueError("empty Mather support")
    d_c = barrier.h_inf + barrier.h_inf.T
    if aubry is None:
        aubry = support
    aubry = np.asarray(aubry, dtype=np.int64)
    return ConjugacyReport(float(gap.min()), float(np.max(np.abs(gap[support]))), d_c, float(d_c.min()),
                           float(np.max(d_c[np.ix_(aubry, aubry)])), tol)
