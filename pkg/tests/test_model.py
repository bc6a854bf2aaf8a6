import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from weakkam.model import (BoundaryMaximizerError, CoercivityWarning, ConvexityWarning, HamiltonianModel,
                           LagrangianTable, TorusGrid, VelocityGrid, legendre_transform, symmetric_dual)

from conftest import make_table


# --- grids ------------------------------------------------------------


@pytest.mark.parametrize("n", [1, 3, 64, 128])
def test_spacing_times_n(n):
    assert abs(TorusGrid(1, n).spacing * n - 1.0) <= np.spacing(1.0)


def test_nodes_are_periodic():
    g = TorusGrid(2, 5)
    for i in range(g.n_nodes):
        assert np.array_equal(g.node(i), g.node(i + g.n_nodes))
    assert np.array_equal(g.shift([5, -10]), np.arange(g.n_nodes))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=2), st.lists(st.floats(-3, 3), min_size=2, max_size=2))
def test_torus_distance_bounds(x, y):
    g = TorusGrid(2, 4)
    d = g.distance(np.array(x), np.array(y))
    assert 0.0 <= d <= math.sqrt(2) / 2 + 1e-12
    for a in range(2):
        da = float(g.distance(np.array([x[a]]), np.array([y[a]])))
        assert 0.0 <= da <= 0.5


def test_interpolation_reproduces_nodes_and_linears():
    g = TorusGrid(1, 8)
    vals = np.arange(8.0)
    assert np.array_equal(g.interpolate(vals, g.coords), vals)
    assert g.interpolate(vals, np.array([[0.5 / 8]]))[0] == 0.5
    # wraps around: halfway between node 7 and node 0
    assert g.interpolate(vals, np.array([[7.5 / 8]]))[0] == 3.5


@pytest.mark.parametrize("dim, m", [(1, 1), (1, 9), (2, 5)])
def test_velocity_grid_symmetric(dim, m):
    vg = VelocityGrid(dim, 4.0, m)
    nodes = vg.nodes
    assert np.array_equal(nodes[vg.reflection], -nodes)
    assert np.all(nodes[vg.zero_index] == 0.0)


def test_velocity_grid_rejects_even_m():
    with pytest.raises(ValueError):
        VelocityGrid(1, 4.0, 8)


def test_from_step_reaches_bound():
    vg = VelocityGrid.from_step(1, 4.0, 1 / 16)
    assert vg.m == 129 and vg.bound == 4.0 and vg.step == 1 / 16


# --- Legendre transform ------------------------------------------------


def test_quadratic_self_dual_at_node():
    pg = VelocityGrid.from_step(1, 4.0, 1 / 16)
    model = HamiltonianModel.from_expression("p1^2/2", 1, pgrid=pg)
    t = legendre_transform(model, TorusGrid(1, 4), VelocityGrid(1, 2.0, 5))
    v1 = int(np.flatnonzero(t.vgrid.axis == 1.0)[0])
    assert np.all(t.values[:, v1] == 0.5)


def test_mechanical_origin_value():
    t = make_table("cos(2*pi*x1)", n=8, m=9)
    assert t.values[0, t.vgrid.zero_index] == -1.0


def test_mechanical_matches_closed_form(mech_small):
    # with the velocity step dividing the momentum step, every v is a momentum node
    t = mech_small
    v = t.vgrid.nodes[:, 0]
    x = t.xgrid.axis
    closed = v[None, :] ** 2 / 2 - np.cos(2 * np.pi * x)[:, None]
    assert np.max(np.abs(t.values - closed)) <= 1e-12


def _brute_legendre(h_fn, xs, vs, ps):
    out = np.empty((len(xs), len(vs)))
    arg = np.empty((len(xs), len(vs)), dtype=int)
    for i, x in enumerate(xs):
        for l, v in enumerate(vs):
            vals = [p * v - h_fn(x, p) for p in ps]
            out[i, l] = max(vals)
            arg[i, l] = int(np.argmax(vals))
    return out, arg


def test_abs_hamiltonian_plateau_by_brute_force():
    pg = VelocityGrid.from_step(1, 4.0, 1 / 4)
    xg = TorusGrid(1, 4)
    ps = pg.axis
    vs = np.array([-1.0, -0.5, 0.0, 0.5, 1.0])
    want, _ = _brute_legendre(lambda x, p: abs(p), xg.axis, vs, ps)
    inner, _ = _brute_legendre(lambda x, p: abs(p), xg.axis, vs, ps[1:-1])
    assert np.all(want == 0.0)
    # some maximiser is interior (p = 0 always is)
    assert np.array_equal(inner, want)
    model = HamiltonianModel.from_expression("abs(p1)", 1, pgrid=pg)
    t = legendre_transform(model, xg, VelocityGrid(1, 1.0, 5))
    assert np.array_equal(t.values, want)


def test_abs_hamiltonian_boundary_error():
    pg = VelocityGrid.from_step(1, 4.0, 1 / 4)
    model = HamiltonianModel.from_expression("abs(p1)", 1, pgrid=pg)
    # brute force: for |v| > 1 the maximiser runs to the momentum boundary
    _, arg = _brute_legendre(lambda x, p: abs(p), [0.0], [1.5], pg.axis)
    assert arg[0, 0] == len(pg.axis) - 1
    with pytest.raises(BoundaryMaximizerError):
        legendre_transform(model, TorusGrid(1, 4), VelocityGrid(1, 1.5, 7))


def test_fenchel_inequality(mech_small):
    assert mech_small.fenchel_gap() >= -1e-12


def test_fenchel_inequality_odd_hamiltonian():
    t = make_table("p1^2/2 + p1*sin(2*pi*x1)", n=16, m=17, mechanical=False)
    assert t.fenchel_gap() >= -1e-12


def test_nonfinite_hamiltonian_rejected():
    model = HamiltonianModel.from_expression("exp(1000*p1^2)", 1)
    with pytest.raises(Exception):
        legendre_transform(model, TorusGrid(1, 4), VelocityGrid(1, 1.0, 3))


def test_convexity_warning():
    pg = VelocityGrid(1, 2.0, 9)
    model = HamiltonianModel.from_expression("-p1^2", 1, pgrid=pg)
    with pytest.warns(ConvexityWarning):
        assert model.check_convexity(TorusGrid(1, 4)) > 0
    ok = HamiltonianModel.from_expression("p1^2/2", 1, pgrid=pg)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert ok.check_convexity(TorusGrid(1, 4)) <= 1e-12


def test_coercivity_warning():
    pg = VelocityGrid(1, 2.0, 9)
    model = HamiltonianModel.from_expression("cos(x1) - abs(p1)", 1, pgrid=pg)
    with pytest.warns(CoercivityWarning):
        assert model.check_coercivity(TorusGrid(1, 4)) <= 0


def test_two_dimensional_mechanical():
    t = make_table("cos(2*pi*x1) + cos(2*pi*x2)", n=4, vmax=1.0, m=3, dim=2)
    v = t.vgrid.nodes
    x = t.xgrid.coords
    closed = 0.5 * np.sum(v * v, axis=1)[None, :] - (np.cos(2 * np.pi * x[:, 0]) + np.cos(2 * np.pi * x[:, 1]))[:, None]
    assert np.max(np.abs(t.values - closed)) <= 1e-12


# --- symmetric dual ----------------------------------------------------


def test_even_lagrangian_fixed_by_dual(mech_small):
    assert np.array_equal(symmetric_dual(mech_small).values, mech_small.values)


def test_odd_part_changes_sign():
    xg, vg = TorusGrid(1, 16), VelocityGrid(1, 2.0, 17)
    x, v = xg.axis[:, None], vg.axis[None, :]
    table = LagrangianTable(v ** 2 / 2 + v * np.sin(2 * np.pi * x), xg, vg)
    hat = symmetric_dual(table)
    assert np.array_equal(hat.values, v ** 2 / 2 - v * np.sin(2 * np.pi * x))


@pytest.mark.parametrize("dim", [1, 2])
def test_dual_involution_bit_exact(dim, rng):
    xg, vg = TorusGrid(dim, 4), VelocityGrid(dim, 1.0, 5)
    table = LagrangianTable(rng.standard_normal((xg.n_nodes, vg.size)), xg, vg)
    again = symmetric_dual(symmetric_dual(table))
    assert np.array_equal(again.values, table.values)
    assert again.reflected is False


def test_hatted_hamiltonian_reflects_momentum():
    t = make_table("p1^2/2 + p1*sin(2*pi*x1)", n=8, m=9, mechanical=False)
    model = t.source
    hat = symmetric_dual(t).source
    p = model.pgrid.nodes
    assert np.array_equal(hat.evaluate(t.xgrid.coords, p), model.evaluate(t.xgrid.coords, -p))
    assert np.array_equal(legendre_transform(hat, t.xgrid, t.vgrid).values, symmetric_dual(t).values)


def test_value_at_reflects_exactly():
    t = make_table("p1^2/2 + p1*sin(2*pi*x1)", n=8, m=9, mechanical=False)
    hat = symmetric_dual(t)
    for w in (0.3, -1.7, 2.0, 0.0):
        assert np.array_equal(hat.value_at([w]), t.value_at([-w]))


def test_lagrangian_csv(tmp_path, free_small):
    path = tmp_path / "L.csv"
    free_small.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "x_index,v_index,value"
    assert len(lines) == 1 + free_small.values.size
