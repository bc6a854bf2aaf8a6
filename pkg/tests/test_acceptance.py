"""Desk-scale acceptance suite: one test and one PASS/FAIL line per criterion.

Desk scale is the 1-D torus with N=128 x-nodes, vmax=4, m=129 velocities,
tau=0.05 and lambdas 1, 1/2, ..., 1/64 (the shipped ``mechanical`` config).
"""

import math

import numpy as np
import pytest

from weakkam.barrier import aubry_set, build_action_kernel, compute_peierls, minplus_eigenvalue, node_clusters
from weakkam import kernels
from weakkam.discounted import (SolverParams, ValueField, bellman_update, extract_calibrated_curve,
                                solve_discounted_backward, solve_forward)
from weakkam.limits import action_matrices, conjugacy_report, subsolution_violation
from weakkam.mather import build_lp, solve_lp
from weakkam.model import TorusGrid, legendre_transform, symmetric_dual

from conftest import make_table, record_criterion

TOL = 5e-2


def test_criterion_1_critical_value(mech_pipeline):
    p = mech_pipeline
    c_lp = p.mather.c_estimate
    c_erg = p.ergodic.value
    # Karp on a kernel built with c = 0, independent of the LP value
    k0 = build_action_kernel(p.table, 0.0, p.cfg["barrier.delta"])
    c_karp = -minplus_eigenvalue(k0) / k0.step
    est = {"lp": c_lp, "ergodic": c_erg, "karp": c_karp}
    parts = {f"{k}_near_1": abs(v - 1.0) <= TOL for k, v in est.items()}
    parts["pairwise"] = max(est.values()) - min(est.values()) <= TOL
    parts["pipeline_karp"] = abs(p.barrier.c_estimate - 1.0) <= TOL
    assert record_criterion(1, "critical value of the mechanical fixture", parts), est


def test_criterion_2_symmetry(mech_pipeline, constant_pipeline):
    parts = {}
    for label, p in (("mech", mech_pipeline), ("odd", constant_pipeline)):
        t, hat = p.table, p.table_hat
        model, hmodel = t.source, hat.source
        pts = model.pgrid.nodes
        parts[f"{label}_hat_H"] = np.array_equal(hmodel.evaluate(t.xgrid.coords, pts),
                                                 model.evaluate(t.xgrid.coords, -pts))
        parts[f"{label}_hat_L_from_hat_H"] = np.array_equal(legendre_transform(hmodel, t.xgrid, t.vgrid).values,
                                                            hat.values)
        parts[f"{label}_involution"] = np.array_equal(symmetric_dual(hat).values, t.values)
        parts[f"{label}_kernel_transpose"] = np.array_equal(p.kernel_hat.entries, p.kernel.entries.T)
        parts[f"{label}_lp_value"] = abs(p.mather_hat.optimal_value - p.mather.optimal_value) <= 1e-9
    assert record_criterion(2, "symmetric dual and barrier transpose identities", parts)


def test_criterion_3_vanishing_discount(mech_pipeline, free_pipeline):
    parts = {}
    for label, p in (("free", free_pipeline), ("mech", mech_pipeline)):
        fam = p.forward
        d = fam.successive_diffs
        parts[f"{label}_gaps_decreasing"] = bool(len(d) >= 2 and np.all(d[1:] <= d[:-1] * 1.05))
        parts[f"{label}_final_gap"] = float(d[-1]) <= TOL
    parts["free_limit_zero"] = float(np.max(np.abs(free_pipeline.forward.u_limit.values))) <= 1e-9
    assert record_criterion(3, "vanishing discount limits", parts)


def test_criterion_4_representation(mech_pipeline):
    p = mech_pipeline
    fwd = np.max(np.abs(p.forward.u_limit.values - p.representation_forward.values))
    bwd = np.max(np.abs(p.backward.u_limit.values - p.representation_backward.values))
    parts = {"forward": fwd <= TOL, "backward": bwd <= TOL}
    assert record_criterion(4, "representation formulas on the mechanical fixture", parts), (fwd, bwd)


def test_criterion_5_conjugate_pair(mech_pipeline, constant_pipeline):
    parts = {}
    for label, p in (("mech", mech_pipeline), ("const", constant_pipeline)):
        um, up = p.backward.u_limit, p.forward.u_limit
        rep = conjugacy_report(um, up, p.barrier, p.mather.support, TOL)
        gap = um.values - up.values
        parts[f"{label}_min_gap"] = float(gap.min()) >= -TOL
        parts[f"{label}_mather_gap"] = float(np.max(np.abs(gap[p.mather.support]))) <= TOL
        parts[f"{label}_d_c"] = float((p.barrier.h_inf + p.barrier.h_inf.T).min()) >= -TOL
        parts[f"{label}_report_agrees"] = rep.pair_ok and rep.d_c_min >= -TOL
    assert record_criterion(5, "conjugate pair and d_c", parts)


def _brute_force_diagonal(kernel, drift, steps):
    k0 = kernel.shifted(drift).entries
    cur = k0
    diag = np.diag(cur).copy()
    for _ in range(steps - 1):
        cur = kernels.minplus(cur, k0)
        diag = np.minimum(diag, np.diag(cur))
    return diag


def test_criterion_6_peierls_barrier(mech_pipeline, double_well_pipeline):
    p = mech_pipeline
    b = p.barrier
    au = p.aubry
    g = TorusGrid(1, 1)
    off = np.setdiff1d(np.arange(p.xgrid.n_nodes), au.indices)
    parts = {
        "nonnegative": float(b.h_inf.min()) >= -TOL,
        "aubry_diagonal": float(np.max(b.diagonal[au.indices])) <= TOL,
        "aubry_at_maximum": bool(np.all(g.distance(au.points, np.zeros((1, 1))) <= p.xgrid.spacing)) and 0 in au,
        "off_aubry_diagonal_positive": bool(np.all(b.diagonal[off] > p.cfg["barrier.aubry_tol"])),
        "triangle": b.triangle_violation() <= 1e-9,
    }
    d = double_well_pipeline
    clusters = d.aubry.clusters()
    brute = np.flatnonzero(_brute_force_diagonal(d.kernel, d.barrier.drift, 600) <= d.cfg["barrier.aubry_tol"])
    parts["double_well_two_clusters"] = len(clusters) == 2
    parts["double_well_brute_force"] = (set(brute) == set(d.aubry.indices)
                                        and len(node_clusters(d.xgrid, brute)) == 2)
    assert record_criterion(6, "Peierls barrier properties", parts)


def test_criterion_7_mather_lp(mech_pipeline):
    r = mech_pipeline.mather
    vg = mech_pipeline.vgrid
    pairs = r.support_pairs
    parts = {
        "closedness": r.measure.closedness_residual() <= 1e-8,
        "mass": abs(r.measure.mass - 1.0) <= 1e-9,
        "support_at_maximum": bool(np.all(TorusGrid(1, 1).distance(mech_pipeline.xgrid.coords[r.support],
                                                                   np.zeros((1, 1))) <= mech_pipeline.xgrid.spacing)),
        "velocity_zero": bool(len(pairs) > 0 and np.all(vg.nodes[pairs[:, 1]] == 0.0)),
    }
    assert record_criterion(7, "Mather LP on the mechanical fixture", parts)


def test_criterion_8_discounted_solver(mech_pipeline):
    p = mech_pipeline
    t, c = p.table, p.c
    params = p.params
    contraction = True
    for lam in p.schedule.lambda_values:
        u, _ = solve_discounted_backward(t, lam, c, params)
        r = u.info["residuals"]
        beta = math.exp(-lam * params.tau)
        keep = r[1:-1] > 1e-13
        contraction &= bool(np.all(r[2:][keep] <= beta * r[1:-1][keep] * 1.05))
    rng = np.random.default_rng(8)
    mono = shift = True
    for _ in range(20):
        lam = float(rng.choice(p.schedule.lambda_values))
        a = rng.uniform(-3, 3, t.xgrid.n_nodes)
        bump = rng.uniform(0, 2, t.xgrid.n_nodes)
        k = float(rng.uniform(-5, 5))
        ta, _ = bellman_update(ValueField(a, t.xgrid), t, lam, c, params)
        tb, _ = bellman_update(ValueField(a + bump, t.xgrid), t, lam, c, params)
        ts, _ = bellman_update(ValueField(a + k, t.xgrid), t, lam, c, params)
        mono &= bool(np.all(ta.values <= tb.values + 1e-12))
        shift &= float(np.max(np.abs(ts.values - ta.values - math.exp(-lam * params.tau) * k))) <= 1e-12
    bounds = p.forward.uniform_bounds()
    parts = {"contraction": contraction, "monotone": mono, "constant_shift": shift,
             "sup_factor_2": bounds["sup_ok"], "lipschitz_factor_2": bounds["lip_ok"]}
    assert record_criterion(8, "discounted solver properties", parts), bounds


def test_criterion_9_domination_and_calibration(mech_pipeline):
    p = mech_pipeline
    c = p.c
    ht = action_matrices(p.table, c, p.params.tau, [0.5, 1, 2, 4])
    viol = subsolution_violation(p.forward.u_limit.values, ht)
    lam, x0 = 0.25, [0.5]
    coarse_params = SolverParams(tau=0.05)
    fine_params = SolverParams(tau=0.025)
    fine = make_table("cos(2*pi*x1)", n=256, m=257)
    rates = []
    for table, prm in ((p.table, coarse_params), (fine, fine_params)):
        u = solve_forward(table, lam, c, prm)
        steps = int(round(1.0 / prm.tau))
        rates.append(extract_calibrated_curve(u, table, lam, c, x0, steps, prm).defect_rate())
    ratio = rates[0] / rates[1] if rates[1] > 0 else math.inf
    parts = {"domination": viol <= TOL, "defect_rate": max(rates) <= TOL, "halving": 1.5 <= ratio <= 2.5}
    assert record_criterion(9, "domination and calibrated curves", parts), (viol, rates, ratio)
