"""End-to-end orchestration: stages, checks and artifacts.

Stages run in the order ``legendre, discounted, barrier, mather, limit,
report``.  Intermediate objects are computed lazily, so a stage pulls in
whatever it depends on (the discounted stage needs the LP critical value,
for instance) while only the requested stages emit artifacts and checks.
"""

from __future__ import annotations

import json
import math
import os
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from . import barrier as br
from . import discounted as ds
from . import limits as lm
from . import mather as mt
from .config import RunConfig
from .model import HamiltonianModel, TorusGrid, VelocityGrid, legendre_transform, symmetric_dual

STAGES = ("legendre", "discounted", "barrier", "mather", "limit", "report")


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    threshold: float
    slack: float
    stage: str
    detail: str = ""

    def as_dict(self) -> dict:
        return {"name": self.name, "passed": bool(self.passed), "value": _clean(self.value),
                "threshold": _clean(self.threshold), "slack": _clean(self.slack), "stage": self.stage,
                "detail": self.detail}


def _clean(x):
    x = float(x) + 0.0  # no negative zero in reports
    if math.isnan(x) or math.isinf(x):
        return repr(x)
    return x


@dataclass
class ReportBundle:
    stage: str
    config: RunConfig
    c_estimates: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    fields: dict = field(default_factory=dict)       # name -> ValueField (plots/CSV)
    families: dict = field(default_factory=dict)     # name -> LimitResult
    barrier: Optional[br.BarrierResult] = None
    mather: Optional[mt.MatherResult] = None
    conjugacy: Optional[lm.ConjugacyReport] = None
    summaries: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)

    @property
    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]

    @property
    def exit_code(self) -> int:
        return 0 if not self.failures else 1

    def check(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def as_dict(self) -> dict:
        return {
            "stage": self.stage,
            "c_estimates": {k: _clean(v) for k, v in self.c_estimates.items()},
            "checks": [c.as_dict() for c in self.checks],
            "failures": [c.name for c in self.failures],
            "summaries": self.summaries,
            "artifacts": sorted(self.artifacts),
        }


def _upper(name, value, threshold, stage, detail="") -> Check:
    """Check ``value <= threshold``; slack is ``threshold - value``."""
    value = float(value)
    return Check(name, bool(value <= threshold), value, threshold, threshold - value, stage, detail)


def _lower(name, value, threshold, stage, detail="") -> Check:
    """Check ``value >= threshold``."""
    value = float(value)
    return Check(name, bool(value >= threshold), value, threshold, value - threshold, stage, detail)


def _flag(name, ok, stage, detail="") -> Check:
    return Check(name, bool(ok), 1.0 if ok else 0.0, 1.0, 0.0 if ok else -1.0, stage, detail)


class Pipeline:
    """Lazily evaluated objects for one configuration."""

    def __init__(self, config: RunConfig, threads: Optional[int] = None):
        self.cfg = config
        self.threads = threads

    # problem
    @cached_property
    def xgrid(self) -> TorusGrid:
        return TorusGrid(self.cfg["problem.dim"], self.cfg["grid.n"])

    @cached_property
    def vgrid(self) -> VelocityGrid:
        return VelocityGrid(self.cfg["problem.dim"], self.cfg["grid.vmax"], self.cfg["grid.m"])

    @cached_property
    def model(self) -> HamiltonianModel:
        p = self.cfg.section("problem")
        if p["kind"] == "mechanical":
            m = HamiltonianModel.mechanical(p["potential"], p["dim"], name=p["name"])
        else:
            m = HamiltonianModel.from_expression(p["hamiltonian"], p["dim"], name=p["name"])
        pmax = self.cfg["grid.pmax"]
        if pmax is None:
            return m.with_pgrid(m.default_pgrid(self.xgrid, self.vgrid))
        return m.with_pgrid(VelocityGrid.from_step(m.dim, pmax, self.vgrid.step))

    @cached_property
    def table(self):
        return legendre_transform(self.model, self.xgrid, self.vgrid)

    @cached_property
    def table_hat(self):
        return symmetric_dual(self.table)

    @cached_property
    def params(self) -> ds.SolverParams:
        s = self.cfg.section("solver")
        return ds.SolverParams(tau=s["tau"], tol=s["tol"], max_iter=s["max_iter"], quadrature=s["quadrature"])

    @cached_property
    def even(self) -> bool:
        return bool(np.array_equal(self.table.values, self.table_hat.values))

    # LP
    @cached_property
    def lp(self) -> mt.LPProblem:
        return mt.build_lp(self.table, self.cfg["lp.tau"], rule=self.cfg["lp.rule"])

    @cached_property
    def mather(self) -> mt.MatherResult:
        return mt.solve_lp(self.lp)

    @cached_property
    def mather_hat(self) -> mt.MatherResult:
        return mt.solve_lp(mt.build_lp(self.table_hat, self.cfg["lp.tau"], rule=self.cfg["lp.rule"]))

    @cached_property
    def ergodic(self) -> lm.ErgodicEstimate:
        return lm.critical_value_ergodic(self.table, self.cfg["schedule.lambdas"][-1], self.params)

    @cached_property
    def c(self) -> float:
        c_lp = self.mather.c_estimate
        gap = abs(c_lp - self.ergodic.value)
        limit = self.cfg["checks.c_agreement"]
        if gap > limit:
            raise PipelineError("mather", f"LP critical value {c_lp:.6g} and ergodic estimate "
                                          f"{self.ergodic.value:.6g} differ by {gap:.3g} > {limit:g}")
        return c_lp

    # barrier
    @cached_property
    def kernel(self) -> br.MinPlusKernel:
        return br.build_action_kernel(self.table, self.c, self.cfg["barrier.delta"], self.cfg["barrier.substeps"])

    @cached_property
    def kernel_hat(self) -> br.MinPlusKernel:
        return br.build_action_kernel(self.table_hat, self.c, self.cfg["barrier.delta"], self.cfg["barrier.substeps"])

    @cached_property
    def barrier(self) -> br.BarrierResult:
        return br.compute_peierls(self.kernel, self.cfg["barrier.horizon"], self.cfg["barrier.tol"])

    @cached_property
    def barrier_hat(self) -> br.BarrierResult:
        return br.compute_peierls(self.kernel_hat, self.cfg["barrier.horizon"], self.cfg["barrier.tol"])

    @cached_property
    def aubry(self) -> br.AubrySet:
        return br.aubry_set(self.barrier, self.cfg["barrier.aubry_tol"])

    # limits
    @cached_property
    def schedule(self) -> lm.LambdaSchedule:
        return lm.LambdaSchedule(self.cfg["schedule.lambdas"])

    def _family(self, direction):
        fn = lm.vanishing_discount_forward if direction == "forward" else lm.vanishing_discount_backward
        return fn(self.table, self.schedule, self.c, self.params, self.cfg["schedule.cauchy_tol"],
                  self.cfg["schedule.richardson"], self.threads)

    @cached_property
    def forward(self) -> lm.LimitResult:
        return self._family("forward")

    @cached_property
    def backward(self) -> lm.LimitResult:
        return self._family("backward")

    @cached_property
    def representation_forward(self) -> ds.ValueField:
        return lm.representation_forward(self.barrier, self.lp, face_tol=self.cfg["lp.face_tol"])

    @cached_property
    def representation_backward(self) -> ds.ValueField:
        return lm.representation_backward(self.barrier, self.lp, face_tol=self.cfg["lp.face_tol"])

    @cached_property
    def mather_measures(self) -> list:
        found = [self.mather.projected]
        found += self.representation_forward.info["measures"]
        found += self.representation_backward.info["measures"]
        return lm.distinct_measures(found)

    @cached_property
    def action_matrices(self) -> dict:
        return lm.action_matrices(self.table, self.c, self.params.tau, self.cfg["checks.domination_times"])


# --- stages ------------------------------------------------------------


def _writer(out: Optional[str], formats, bundle: ReportBundle):
    def write(name, obj, kind):
        if out is None or kind not in formats:
            return
        path = os.path.join(out, name)
        getattr(obj, "to_csv" if kind == "csv" else "to_json")(path)
        bundle.artifacts.append(name)
    return write


def _write_json(out, formats, bundle, name, payload):
    if out is None or "json" not in formats:
        return
    with open(os.path.join(out, name), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    bundle.artifacts.append(name)


def _stage_legendre(p: Pipeline, b: ReportBundle, write):
    s = "legendre"
    t, th = p.table, p.table_hat
    pg = p.model.pgrid
    h = p.model.evaluate(p.xgrid.coords, pg.nodes)
    hh = p.model.hatted().evaluate(p.xgrid.coords, pg.nodes)
    b.checks.append(_flag("hat_hamiltonian_reflects_p", np.array_equal(hh, h[:, pg.reflection]), s))
    b.checks.append(_flag("dual_involution_bit_exact", np.array_equal(symmetric_dual(th).values, t.values), s))
    b.checks.append(_lower("fenchel_gap", t.fenchel_gap(), -1e-12, s))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        b.summaries["convexity_defect"] = p.model.check_convexity(p.xgrid, warn=False)
        b.summaries["coercivity_margin"] = p.model.check_coercivity(p.xgrid, warn=False)
    write("lagrangian.csv", t, "csv")


def _stage_discounted(p: Pipeline, b: ReportBundle, write):
    s = "discounted"
    tol = p.cfg["checks.tol"]
    lam_last = p.schedule.lambda_values[-1]
    fw = p.forward
    worst_ratio = max(f.info["worst_ratio_over_factor"] for f in fw.per_lambda.values())
    b.checks.append(_upper("contraction_rate", worst_ratio, 1.05, s, "max r_{k+1}/(factor r_k)"))
    if p.even:
        bw = p.backward
        dev = max(float(np.max(np.abs(fw.per_lambda[l].values + bw.per_lambda[l].values))) for l in fw.lambdas)
        bound = 2 * max(p.params.tolerance(l) for l in fw.lambdas)
        b.checks.append(_upper("even_forward_backward_symmetry", dev, bound, s))
        b.families["backward"] = bw
    bounds = fw.uniform_bounds()
    b.checks.append(_upper("uniform_sup_bound", bounds["sup_max"], 2 * bounds["sup_min"] + 1, s))
    b.checks.append(_upper("uniform_lipschitz_bound", bounds["lip_max"], 2 * bounds["lip_min"], s))
    horizon = int(round(max(p.cfg["checks.domination_times"]) / p.params.tau))
    dom = ds.check_domination(fw.u_limit, p.table, lam_last, p.c, horizon, p.params, p.cfg["checks.domination_times"])
    b.checks.append(_upper("discounted_domination", dom.max_violation, tol, s, f"lambda={lam_last:g}"))
    # calibrated curve from the forward solution, and under 2x refinement
    lam_c = p.cfg["checks.curve_lambda"]
    steps = int(round(p.cfg["checks.curve_time"] / p.params.tau))
    x0 = np.full(p.xgrid.dim, p.cfg["checks.curve_x0"])
    u_c = ds.solve_forward(p.table, lam_c, p.c, p.params)
    curve = ds.extract_calibrated_curve(u_c, p.table, lam_c, p.c, x0, steps, p.params)
    rate = curve.defect_rate()
    b.checks.append(_upper("calibration_defect_rate", rate, tol, s))
    fine_x = TorusGrid(p.xgrid.dim, 2 * p.xgrid.n)
    fine_v = VelocityGrid(p.vgrid.dim, p.vgrid.vmax, 2 * p.vgrid.m - 1)
    fine_table = legendre_transform(p.model.with_pgrid(p.model.default_pgrid(fine_x, fine_v)), fine_x, fine_v)
    fine_params = ds.SolverParams(tau=p.params.tau / 2, tol=p.params.tol, max_iter=p.params.max_iter,
                                  quadrature=p.params.quadrature)
    u_f = ds.solve_forward(fine_table, lam_c, p.c, fine_params)
    fine_rate = ds.extract_calibrated_curve(u_f, fine_table, lam_c, p.c, x0, 2 * steps, fine_params).defect_rate()
    if rate == 0.0 and fine_rate == 0.0:
        b.checks.append(_flag("calibration_refinement_halving", True, s, "exact calibration at both resolutions"))
    else:
        ratio = rate / fine_rate if fine_rate > 0 else math.inf
        b.checks.append(Check("calibration_refinement_halving", bool(1.5 <= ratio <= 2.5), ratio, 2.0,
                              0.5 - abs(ratio - 2.0), s, "coarse/fine defect-rate ratio, 2 +- 25%"))
    b.summaries["calibration"] = {"x0": x0.tolist(), "lambda": lam_c, "rate": rate, "fine_rate": fine_rate}
    for k, lam in enumerate(fw.lambdas):
        write(f"u_lambda_plus_{k}.csv", fw.per_lambda[lam], "csv")
    write("calibrated_curve.csv", curve, "csv")
    b.families["forward"] = fw
    b.fields["u_lambda_plus"] = fw.u_limit


def _stage_barrier(p: Pipeline, b: ReportBundle, write):
    s = "barrier"
    tol = p.cfg["checks.tol"]
    res = p.barrier
    b.barrier = res
    b.c_estimates["karp"] = res.c_estimate
    b.checks.append(_flag("barrier_converged", res.converged, s, f"last change {res.change:.3g}"))
    b.checks.append(_upper("triangle_inequality", res.triangle_violation(), p.cfg["checks.triangle_tol"], s))
    b.checks.append(_lower("barrier_nonnegative", float(res.h_inf.min()), -tol, s))
    b.checks.append(_lower("barrier_diagonal_nonnegative", float(res.diagonal.min()), -res.tol, s))
    kdev = float(np.max(np.abs(p.kernel_hat.entries - p.kernel.entries.T)))
    b.checks.append(_upper("kernel_transpose_bit_exact", kdev, 0.0, s))
    hdev = float(np.max(np.abs(p.barrier_hat.h_inf - res.h_inf.T)))
    b.checks.append(_upper("barrier_transpose_bit_exact", hdev, 0.0, s))
    b.checks.append(_upper("karp_vs_lp_c", abs(res.c_estimate - p.c), tol, s))
    b.summaries["barrier"] = res.metadata()
    b.summaries["aubry"] = {"indices": [int(i) for i in p.aubry.indices],
                            "clusters": [[int(i) for i in c] for c in p.aubry.clusters()]}
    write("h_inf.csv", res, "csv")
    write("barrier.json", res, "json")


def _stage_mather(p: Pipeline, b: ReportBundle, write):
    s = "mather"
    r = p.mather
    b.mather = r
    b.c_estimates["lp"] = r.c_estimate
    b.c_estimates["ergodic"] = p.ergodic.value
    b.summaries["ergodic_spread"] = p.ergodic.spread
    b.checks.append(_upper("closedness_residual", r.measure.closedness_residual(), 1e-8, s))
    b.checks.append(_upper("mass_error", abs(r.measure.mass - 1.0), 1e-9, s))
    b.checks.append(_upper("reflected_lp_value", abs(p.mather_hat.optimal_value - r.optimal_value), 1e-9, s))
    b.checks.append(_upper("lp_vs_ergodic_c", abs(r.c_estimate - p.ergodic.value), p.cfg["checks.tol"], s))
    # support inside the Aubry set up to one cell
    aub = set(int(i) for i in p.aubry.indices)
    near = set()
    for i in aub:
        for k in np.ndindex(*(3,) * p.xgrid.dim):
            near.add(int(p.xgrid.shift(np.array(k) - 1)[i]))
    outside = [int(i) for i in r.support if int(i) not in near]
    b.checks.append(_flag("mather_support_in_aubry", not outside, s, f"outside: {outside}" if outside else ""))
    b.summaries["mather"] = r.summary()
    write("mather_measure.csv", r.measure, "csv")
    write("mather.json", r, "json")


def _stage_limit(p: Pipeline, b: ReportBundle, write):
    s = "limit"
    tol = p.cfg["checks.tol"]
    fw, bw = p.forward, p.backward
    b.families["forward"], b.families["backward"] = fw, bw
    for name, fam in (("forward", fw), ("backward", bw)):
        d = fam.successive_diffs
        b.checks.append(Check(f"{name}_cauchy", fam.cauchy_ok, float(d[-1]) if len(d) else math.nan,
                              fam.cauchy_tol, fam.cauchy_tol - float(d[-1]) if len(d) else -math.inf, s,
                              "; ".join(fam.diagnostics)))
        b.checks.append(_flag(f"{name}_gaps_decreasing", fam.gaps_decreasing, s,
                              "successive gaps with factor 1.05"))
    b.summaries["limit_forward"] = fw.summary()
    b.summaries["limit_backward"] = bw.summary()
    u0p, u0m = fw.u_limit, bw.u_limit
    rep_f, rep_b = p.representation_forward, p.representation_backward
    b.checks.append(_upper("representation_forward", np.max(np.abs(u0p.values - rep_f.values)), tol, s))
    b.checks.append(_upper("representation_backward", np.max(np.abs(u0m.values - rep_b.values)), tol, s))
    viol = lm.subsolution_violation(u0p.values, p.action_matrices)
    b.checks.append(_upper("u0_plus_subsolution", max(viol, 0.0), tol, s))
    b.summaries["face_diameter_l1"] = {"forward": rep_f.info["face_diameter_l1"],
                                       "backward": rep_b.info["face_diameter_l1"]}
    u0p = ds.ValueField(u0p.values, u0p.grid, "u0_plus")
    u0m = ds.ValueField(u0m.values, u0m.grid, "u0_minus")
    b.fields.update({"u0_plus": u0p, "u0_minus": u0m, "u_lambda_plus": fw.u_limit, "u_lambda_minus": bw.u_limit})
    write("u0_plus.csv", u0p, "csv")
    write("u0_minus.csv", u0m, "csv")
    write("u0_plus_representation.csv", rep_f, "csv")
    write("u0_minus_representation.csv", rep_b, "csv")
    write("limit_forward.json", fw, "json")
    write("limit_backward.json", bw, "json")


def _stage_report(p: Pipeline, b: ReportBundle, write):
    s = "report"
    tol = p.cfg["checks.tol"]
    u0p, u0m = p.forward.u_limit, p.backward.u_limit
    conj = lm.conjugacy_report(u0m, u0p, p.barrier, p.mather.support, tol, aubry=p.aubry.indices)
    b.conjugacy = conj
    b.checks.append(_lower("pair_min_gap", conj.min_gap, -tol, s))
    b.checks.append(_upper("pair_mather_gap", conj.mather_gap, tol, s))
    b.checks.append(_lower("d_c_nonnegative", conj.d_c_min, -tol, s))
    sub = lm.subsolution_family_check(u0p, p.action_matrices, p.mather_measures, tol, h_inf=p.barrier.h_inf)
    b.checks.append(_upper("subsolution_domination", sub.domination_violation, tol, s))
    b.checks.append(_lower("subsolution_integrals", min(sub.measure_integrals), -tol, s))
    gaps = [g for _, m, g in sub.candidates if m]
    b.checks.append(_lower("subsolution_minimality", min(gaps) if gaps else 0.0, -tol, s,
                           f"{len(gaps)} member candidates"))
    b.summaries["conjugacy"] = conj.summary()
    b.summaries["subsolution_family"] = sub.summary()
    write("conjugacy.json", conj, "json")


_RUNNERS = {
    "legendre": _stage_legendre,
    "discounted": _stage_discounted,
    "barrier": _stage_barrier,
    "mather": _stage_mather,
    "limit": _stage_limit,
    "report": _stage_report,
}


def run_pipeline(config: RunConfig, stage: str = "report", out: Optional[str] = None,
                 threads: Optional[int] = None, plots: bool = True) -> ReportBundle:
    """Run every stage up to ``stage`` and return the bundle.

    Artifacts go to ``out`` in the configured formats (nothing is written
    when ``out`` is None).  Module errors are re-raised as
    :class:`PipelineError` naming the stage; files written so far stay.
    """
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}; expected one of {', '.join(STAGES)}")
    formats = set(config["output.formats"])
    if out is not None:
        os.makedirs(out, exist_ok=True)
    bundle = ReportBundle(stage, config)
    write = _writer(out, formats, bundle)
    pipe = Pipeline(config, threads)
    for name in STAGES[: STAGES.index(stage) + 1]:
        try:
            _RUNNERS[name](pipe, bundle, write)
        except PipelineError:
            raise
        except Exception as exc:
            raise PipelineError(name, f"{type(exc).__name__}: {exc}") from exc
    est = list(bundle.c_estimates.values())
    if len(est) > 1:
        bundle.checks.append(_upper("c_estimates_agree", max(est) - min(est), config["checks.tol"], stage))
    ref = config["checks.c_reference"]
    if ref is not None and est:
        worst = max(abs(v - ref) for v in est)
        bundle.checks.append(_upper("c_estimates_vs_reference", worst, config["checks.tol"], stage, f"reference {ref:g}"))
    if out is not None and plots and "svg" in formats and (bundle.fields or bundle.barrier or bundle.mather):
        from .plots import emit_plots
        bundle.artifacts.extend(os.path.basename(f) for f in emit_plots(bundle, out))
    _write_json(out, formats, bundle, "report.json", bundle.as_dict())
    return bundle
