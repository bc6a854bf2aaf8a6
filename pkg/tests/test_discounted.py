import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from weakkam.discounted import (SolverNotConvergedError, SolverParams, ValueField, VelocityBoundaryWarning,
                                bellman_update, check_domination, extract_calibrated_curve,
                                solve_discounted_backward, solve_forward)
from weakkam.model import TorusGrid

from conftest import make_table


def zeros(table):
    return ValueField(np.zeros(table.xgrid.n_nodes), table.xgrid)


# --- one Bellman step -------------------------------------------------


def test_resting_is_free(free_small):
    tu, pol = bellman_update(zeros(free_small), free_small, 0.7, 0.0, SolverParams())
    assert np.all(tu.values == 0.0)
    assert np.all(pol.indices == free_small.vgrid.zero_index)


def test_one_step_at_potential_maximum():
    t = make_table("cos(2*pi*x1)", n=128, m=129)
    tu, _ = bellman_update(zeros(t), t, 1.0, 1.0, SolverParams(tau=0.05))
    assert tu.values[0] == 0.05 * (0 - 1 + 1)


def test_one_step_brute_force():
    # L = v^2/2, c = 0, u = cos(2 pi x), lambda = 0, tau = 0.05, vmax = 4
    n, tau = 128, 0.05
    t = make_table("0", n=n, m=129)
    u = np.cos(2 * np.pi * np.arange(n) / n)
    tu, _ = bellman_update(ValueField(u, t.xgrid), t, 0.0, 0.0, SolverParams(tau=tau))
    best = math.inf
    for v in np.linspace(-4, 4, 129):
        cell = -tau * v * n
        i0 = math.floor(cell)
        f = cell - i0
        interp = (1 - f) * u[i0 % n] + f * u[(i0 + 1) % n]
        best = min(best, tau * v * v / 2 + interp)
    assert tu.values[0] == pytest.approx(best, abs=1e-14)


def test_grid_mismatch_rejected(free_small):
    other = ValueField(np.zeros(8), TorusGrid(1, 8))
    with pytest.raises(ValueError):
        bellman_update(other, free_small, 0.5, 0.0, SolverParams())


@st.composite
def _pair(draw, n=32):
    u = draw(arrays(np.float64, n, elements=st.floats(-5, 5)))
    bump = draw(arrays(np.float64, n, elements=st.floats(0, 3)))
    lam = draw(st.sampled_from([0.0, 0.25, 1.0, 4.0]))
    return u, u + bump, lam


@settings(max_examples=60, deadline=None)
@given(_pair())
def test_monotone(case):
    u, w, lam = case
    t = _mech32()
    tu, _ = bellman_update(ValueField(u, t.xgrid), t, lam, 1.0, SolverParams())
    tw, _ = bellman_update(ValueField(w, t.xgrid), t, lam, 1.0, SolverParams())
    assert np.all(tu.values <= tw.values + 1e-12)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, 32, elements=st.floats(-5, 5)), st.floats(-10, 10), st.sampled_from([0.0, 0.5, 2.0]))
def test_constant_shift(u, a, lam):
    t = _mech32()
    p = SolverParams()
    tu, _ = bellman_update(ValueField(u, t.xgrid), t, lam, 1.0, p)
    ts, _ = bellman_update(ValueField(u + a, t.xgrid), t, lam, 1.0, p)
    assert np.max(np.abs(ts.values - (tu.values + math.exp(-lam * p.tau) * a))) <= 1e-12


_CACHE = {}


def _mech32():
    if "t" not in _CACHE:
        _CACHE["t"] = make_table("cos(2*pi*x1)", n=32, m=33)
    return _CACHE["t"]


# --- fixed points -----------------------------------------------------


@pytest.mark.parametrize("lam", [1.0, 0.1])
def test_free_motion_fixed_point_is_zero(free_small, lam):
    u, pol = solve_discounted_backward(free_small, lam, 0.0)
    assert np.all(u.values == 0.0)
    assert np.all(pol.indices == free_small.vgrid.zero_index)
    assert np.all(solve_forward(free_small, lam, 0.0).values == 0.0)


@pytest.mark.parametrize("lam", [1.0, 0.25, 1 / 16])
def test_contraction_rate(mech_small, lam):
    u, _ = solve_discounted_backward(mech_small, lam, 1.0)
    assert u.info["contraction_ok"]
    r = u.info["residuals"]
    beta = math.exp(-lam * 0.05)
    keep = r[1:-1] > 1e-13
    assert np.all(r[2:][keep] <= beta * r[1:-1][keep] * 1.05)


@pytest.mark.slow
def test_matches_four_times_finer_run(mech_desk):
    fine = make_table("cos(2*pi*x1)", n=512, m=513)
    u, _ = solve_discounted_backward(mech_desk, 0.5, 1.0, SolverParams(tau=0.05))
    ref, _ = solve_discounted_backward(fine, 0.5, 1.0, SolverParams(tau=0.0125))
    assert np.max(np.abs(u.values - ref.values[::4])) <= 2e-2


def test_non_convergence_reported(mech_small):
    with pytest.raises(SolverNotConvergedError) as err:
        solve_discounted_backward(mech_small, 0.01, 1.0, SolverParams(max_iter=10))
    assert err.value.residual > 0


def test_lambda_must_be_positive(mech_small):
    with pytest.raises(ValueError):
        solve_discounted_backward(mech_small, 0.0, 1.0)


def test_boundary_velocity_warns():
    t = make_table("cos(2*pi*x1)", n=32, vmax=0.5, m=5)
    with pytest.warns(VelocityBoundaryWarning):
        solve_discounted_backward(t, 0.5, 1.0)


def test_forward_is_negated_hat_backward():
    t = make_table("p1^2/2 + p1*sin(2*pi*x1)", n=32, m=33, mechanical=False)
    from weakkam.model import symmetric_dual
    plus = solve_forward(t, 0.5, 0.0)
    hat, _ = solve_discounted_backward(symmetric_dual(t), 0.5, 0.0)
    assert np.array_equal(plus.values, -hat.values)


def test_even_hamiltonian_forward_backward_symmetry(mech_small):
    plus = solve_forward(mech_small, 0.25, 1.0)
    minus, _ = solve_discounted_backward(mech_small, 0.25, 1.0)
    assert np.max(np.abs(plus.values + minus.values)) <= 2 * SolverParams().tolerance(0.25)


def test_uniform_bounds_across_lambdas(mech_small):
    fields = [solve_forward(mech_small, lam, 1.0) for lam in (1.0, 0.5, 0.25)]
    sup = [f.sup_norm() for f in fields]
    lip = [f.lipschitz() for f in fields]
    assert max(sup) <= 2 * min(sup) + 1
    assert max(lip) <= 2 * min(lip)


def test_value_field_csv(tmp_path, free_small):
    u = zeros(free_small)
    u.to_csv(tmp_path / "u.csv")
    lines = (tmp_path / "u.csv").read_text().splitlines()
    assert lines[0] == "x_index,x_coord,value"
    assert lines[1] == "0,0.0,0.0"


def test_value_field_rejects_nan():
    with pytest.raises(ValueError):
        ValueField(np.array([0.0, np.nan]), TorusGrid(1, 2))


# --- calibrated curves ------------------------------------------------


@pytest.mark.parametrize("x0", [0, 5, [0.3]])
def test_free_motion_curve_is_constant(free_small, x0):
    curve = extract_calibrated_curve(zeros(free_small), free_small, 0.3, 0.0, x0, 20)
    assert np.all(curve.points == curve.points[0])
    assert np.all(curve.defects == 0.0)


def test_curve_rests_at_potential_maximum(mech_desk):
    u = solve_forward(mech_desk, 0.25, 1.0)
    curve = extract_calibrated_curve(u, mech_desk, 0.25, 1.0, 0, 40)
    dist = TorusGrid(1, 1).distance(curve.points, np.zeros((1, 1)))
    assert np.all(dist <= mech_desk.xgrid.spacing)
    assert np.max(curve.defects) <= 1e-3


def test_curve_defect_decreases_under_refinement():
    coarse = make_table("cos(2*pi*x1)", n=64, m=65)
    fine = make_table("cos(2*pi*x1)", n=128, m=129)
    rates = []
    for t, p in ((coarse, SolverParams(tau=0.1)), (fine, SolverParams(tau=0.05))):
        u = solve_forward(t, 0.25, 1.0, p)
        curve = extract_calibrated_curve(u, t, 0.25, 1.0, [0.5], int(round(1 / p.tau)), p)
        rates.append(curve.defect_rate())
    assert rates[1] < rates[0]


def test_curve_csv(tmp_path, free_small):
    curve = extract_calibrated_curve(zeros(free_small), free_small, 0.3, 0.0, 0, 3)
    curve.to_csv(tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "k,t,x,v,defect"
    assert len(lines) == 5


# --- domination -------------------------------------------------------


def test_zero_dominated_for_free_motion(free_small):
    rep = check_domination(zeros(free_small), free_small, 0.0, 0.0, 8)
    assert rep.max_violation == 0.0


def test_converged_forward_solution_dominated(mech_small):
    u = solve_forward(mech_small, 0.25, 1.0)
    rep = check_domination(u, mech_small, 0.25, 1.0, 40, times=[0.5, 1, 2])
    assert rep.passed(5e-2)
    assert sorted(rep.per_time) == [0.5, 1.0, 2.0]


def test_domination_horizon_validated(free_small):
    with pytest.raises(ValueError):
        check_domination(zeros(free_small), free_small, 0.0, 0.0, 0)
    with pytest.raises(ValueError):
        check_domination(zeros(free_small), free_small, 0.0, 0.0, 4, times=[1.0])
