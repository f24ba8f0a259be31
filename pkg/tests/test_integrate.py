import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from sdmpc import GridSpec, propagate, propagate_feedback
from sdmpc.errors import DivergenceError


def test_equilibrium_stays_put(di):
    sys, _, cost = di
    tr = propagate(sys, cost, [0.0, 0.0], np.zeros((20, 1)), GridSpec(0.1, 10, 2))
    assert np.all(tr.states == 0) and np.all(tr.running_cost == 0)


def test_constant_velocity_is_exact(di):
    sys, _, cost = di
    tr = propagate(sys, cost, [0.0, 1.0], np.zeros((10, 1)), GridSpec(1.0, 10, 1))
    np.testing.assert_allclose(tr.final_state, [1.0, 1.0], atol=1e-14)
    # cost of x1 = t, x2 = 1: int_0^1 (t^2 + 1) dt = 4/3, exact for RK4 (Simpson)
    assert tr.cost == pytest.approx(4.0 / 3.0, abs=1e-14)


def test_scalar_boundary_trajectory_constant(scalar):
    sys, _, cost = scalar
    tr = propagate(sys, cost, [1.0], -np.ones((50, 1)), GridSpec(1.0, 50, 1))
    np.testing.assert_allclose(tr.states[:, 0], 1.0, atol=1e-14)
    assert tr.cost == pytest.approx(2.0, abs=1e-12)


def test_matches_matrix_exponential(di, rng):
    sys, _, cost = di
    x0 = rng.uniform(-1, 1, 2)
    u = 0.3
    tr = propagate(sys, cost, x0, np.full((40, 1), u), GridSpec(2.0, 40, 1))
    # exact: augment the state with the constant input
    Aa = np.zeros((3, 3))
    Aa[:2, :2], Aa[:2, 2:] = sys.A, sys.B
    exact = (sla.expm(2.0 * Aa) @ np.r_[x0, u])[:2]
    np.testing.assert_allclose(tr.final_state, exact, atol=1e-12)


def test_rk4_order_on_rotation():
    from sdmpc import LinearSystem, StageCost
    sys = LinearSystem([[0.0, 1.0], [-1.0, 0.0]], [[0.0], [1.0]])
    cost = StageCost.quadratic(np.eye(2), np.eye(1))
    x0 = np.array([1.0, 0.0])
    exact = sla.expm(np.array([[0.0, 1.0], [-1.0, 0.0]]) * 4.0) @ x0
    errs = []
    for k in (10, 20, 40):
        tr = propagate(sys, cost, x0, np.zeros((k, 1)), GridSpec(4.0, k, 1))
        errs.append(np.linalg.norm(tr.final_state - exact))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all((orders > 3.7) & (orders < 4.3))


def test_wrong_control_count_rejected(di):
    sys, _, cost = di
    with pytest.raises(ValueError):
        propagate(sys, cost, [0, 0], np.zeros((3, 1)), GridSpec(0.1, 10, 1))


def test_divergence_detected():
    from sdmpc import LinearSystem, StageCost
    sys = LinearSystem([[50.0]], [[1.0]])
    with pytest.raises(DivergenceError):
        propagate(sys, StageCost.quadratic([[1.0]], [[1.0]]), [1.0], np.zeros((100, 1)),
                  GridSpec(1.0, 100, 1))


def test_lqr_feedback_decays(di_lq):
    sys, _, cost, lq = di_lq
    tr = propagate_feedback(sys, cost, [0.1, 0.0], lambda t, x: lq.F @ x, 5.0, 0.01)
    assert np.linalg.norm(tr.final_state) < 0.01
    tr0 = propagate_feedback(sys, cost, [0.0, 0.0], lambda t, x: lq.F @ x, 5.0, 0.01)
    assert np.all(tr0.states == 0)


def test_saturated_lqr_stays_in_box(di_lq):
    sys, cons, cost, lq = di_lq
    tr = propagate_feedback(sys, cost, [0.5, 0.5], lambda t, x: np.clip(lq.F @ x, -1, 1), 10.0, 0.01)
    assert np.all(np.abs(tr.states) <= 1.0)


def test_concatenate_and_csv(di):
    sys, _, cost = di
    g = GridSpec(0.1, 2, 1)
    a = propagate(sys, cost, [0.1, 0.2], np.zeros((2, 1)), g)
    b = propagate(sys, cost, a.final_state, np.ones((2, 1)), g, t0=0.1)
    c = a.concatenate(b)
    assert len(c.times) == 5 and c.cost == pytest.approx(a.cost + b.cost)
    lines = c.to_csv().splitlines()
    assert lines[0] == "t,x_1,x_2,u_1,cost" and len(lines) == 6
    with pytest.raises(ValueError):
        b.concatenate(a)


@settings(max_examples=40, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1))
def test_linearity_in_initial_state_and_input(a1, a2, u1, s):
    from sdmpc import build_double_integrator
    sys, _, cost = build_double_integrator()
    g = GridSpec(0.5, 5, 1)
    U = np.full((5, 1), u1)
    x = propagate(sys, cost, [a1, a2], U, g).final_state
    xs = propagate(sys, cost, [s * a1, s * a2], s * U, g).final_state
    np.testing.assert_allclose(xs, s * x, atol=1e-12)
