import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sdmpc import (ConstraintSpec, ControlSystem, LinearSystem, StageCost, pointwise_min_cost)
from sdmpc.errors import InfeasibleStateError
from sdmpc.model import quadratic_envelope


def test_vector_field_substitution(di):
    sys, _, _ = di
    np.testing.assert_allclose(sys.f([0.5, 0.5], [0.0]), [0.5, 0.0])


def test_state_violation_is_positive(di):
    _, cons, _ = di
    assert np.max(cons.g([1.2, 0.0], [0.0])) > 0


def test_stage_cost_value(di):
    _, _, cost = di
    assert cost([0.7, 0.7], [1.0]) == pytest.approx(1.98)


def test_min_cost_at_equilibrium_is_zero(di):
    _, cons, cost = di
    assert pointwise_min_cost([0.0, 0.0], cost, cons) == 0.0


def test_min_cost_double_integrator(di):
    _, cons, cost = di
    assert pointwise_min_cost([0.5, 0.5], cost, cons) == pytest.approx(0.5)


def test_min_cost_shifted_input_matches_grid_search():
    cons = ConstraintSpec.from_boxes(state_box=([-1.0], [1.0]), input_box=([-1.0], [1.0]))
    cost = StageCost(lambda x, u: float(x[0] ** 2 + (u[0] - 2.0) ** 2))
    grid = np.linspace(-1, 1, 20001)
    oracle = np.min((grid - 2.0) ** 2)
    assert pointwise_min_cost([0.0], cost, cons) == pytest.approx(oracle, abs=1e-8)


def test_min_cost_outside_state_box_raises(di):
    _, cons, cost = di
    with pytest.raises(InfeasibleStateError):
        pointwise_min_cost([1.5, 0.0], cost, cons)


def test_non_equilibrium_rejected():
    with pytest.raises(ValueError):
        ControlSystem(1, 1, lambda x, u: x + 1.0)


def test_linear_system_rejects_non_hurwitz_gain():
    with pytest.raises(ValueError):
        LinearSystem([[0, 1], [0, 0]], [[0], [1]], stabilizing_gain=[[1.0, 1.0]])


def test_quadratic_cost_must_be_positive_definite():
    with pytest.raises(ValueError):
        StageCost.quadratic(np.eye(2), -np.eye(1))


def test_box_row_layout():
    cons = ConstraintSpec.from_boxes(state_box=([-1, -2], [1, 2]), input_box=([-3], [3]))
    g = cons.g([0.0, 0.0], [0.0])
    np.testing.assert_allclose(g, [-1, -2, -1, -2, -3, -3])


def test_fd_jacobian_matches_linear(di):
    sys, _, _ = di
    nl = ControlSystem(2, 1, lambda x, u: np.array([x[1], u[0]]))
    jx, ju = nl.jacobian(np.array([0.3, -0.2]), np.array([0.1]))
    np.testing.assert_allclose(jx, sys.A, atol=1e-8)
    np.testing.assert_allclose(ju, sys.B, atol=1e-8)


def test_quadratic_envelope_validates(di):
    _, cons, cost = di
    assert quadratic_envelope(cost, 0.9).validate(cost, cons, samples=300)


@settings(max_examples=60, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1))
def test_min_cost_is_lower_bound(x1, x2, u):
    from sdmpc import build_double_integrator
    _, cons, cost = build_double_integrator()
    assert pointwise_min_cost([x1, x2], cost, cons) <= cost([x1, x2], [u]) + 1e-12
