"""Revised simplex against scipy's HiGHS on small LPs with a known feasible start."""

import numpy as np
import pytest
from scipy.optimize import linprog

from weakkam import simplex as sx


def random_lp(rng, m, n, zero_frac=0.4):
    # row 0 is a positive mass row, column 0 is the unit start vector on it
    A = rng.integers(-3, 4, (m, n)).astype(float)
    A[rng.random(A.shape) < zero_frac] = 0.0
    A[0] = rng.integers(1, 3, n)
    A[1:, 0] = 0.0
    A[0, 0] = 1.0
    b = np.zeros(m)
    b[0] = 1.0
    c = rng.uniform(-1, 1, n)
    return A, b, c


def solve(A, b, c, **kw):
    st = sx.start_with_artificials(A, b, 0, 0)
    return sx.simplex(st, c, **kw)


@pytest.mark.parametrize("rule", ["bland", "dantzig"])
@pytest.mark.parametrize("perturb", [0.0, 1e-7])
def test_matches_highs(rule, perturb, rng):
    for _ in range(40):
        m, n = int(rng.integers(2, 6)), int(rng.integers(6, 14))
        A, b, c = random_lp(rng, m, n)
        ref = linprog(c, A_eq=A, b_eq=b, bounds=(0, None), method="highs")
        assert ref.status == 0
        res = solve(A, b, c, rule=rule, perturb=perturb)
        assert res.value == pytest.approx(ref.fun, abs=1e-9)
        assert np.max(np.abs(A @ res.x - b)) <= 1e-9
        assert np.all(res.x >= 0)


def test_perturbation_does_not_change_the_vertex_value(rng):
    # integer data with many zeros: degenerate vertices everywhere
    for _ in range(20):
        A, b, c = random_lp(rng, 5, 12, zero_frac=0.7)
        c = np.round(c * 4) / 4
        plain = solve(A, b, c)
        shifted = solve(A, b, c, perturb=1e-6, seed=3)
        assert shifted.value == pytest.approx(plain.value, abs=1e-9)


def test_dependent_rows_are_dropped(rng):
    A, b, c = random_lp(rng, 4, 10)
    A = np.vstack([A, A[1] + A[2]])
    b = np.append(b, 0.0)
    st = sx.start_with_artificials(A, b, 0, 0)
    assert st.rows_dropped == [4]
    ref = linprog(c, A_eq=A, b_eq=b, bounds=(0, None), method="highs")
    assert sx.simplex(st, c).value == pytest.approx(ref.fun, abs=1e-9)


def test_unbounded():
    A = np.array([[1.0, 1.0, -1.0]])
    with pytest.raises(sx.UnboundedLPError):
        solve(A, np.array([1.0]), np.array([0.0, 0.0, -1.0]))


def test_bad_start_column():
    A = np.array([[1.0, 1.0], [1.0, -1.0]])
    with pytest.raises(sx.LPError):
        sx.start_with_artificials(A, np.array([1.0, 0.0]), 0, 0)
    with pytest.raises(sx.LPError):
        sx.start_with_artificials(np.array([[-1.0, 1.0]]), np.array([1.0]), 0, 0)


def test_iteration_limit(rng):
    A, b, c = random_lp(rng, 5, 12)
    c[0] = 10.0
    with pytest.raises(sx.IterationLimitError):
        solve(A, b, c, max_pivots=1)


def test_fixed_columns_stay_out(rng):
    A, b, c = random_lp(rng, 4, 10)
    fixed = np.zeros(10, dtype=bool)
    fixed[5:] = True
    res = solve(A, b, c, fixed=fixed)
    assert np.all(res.x[5:] == 0)
    ref = linprog(c[:5], A_eq=A[:, :5], b_eq=b, bounds=(0, None), method="highs")
    assert res.value == pytest.approx(ref.fun, abs=1e-9)


def test_unknown_rule():
    with pytest.raises(ValueError):
        solve(np.array([[1.0]]), np.array([1.0]), np.array([0.0]), rule="steepest")


def test_objective_shape_checked():
    with pytest.raises(ValueError):
        solve(np.array([[1.0, 1.0]]), np.array([1.0]), np.array([0.0]))
