import logging
import math

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import HealthCheck, given, settings, strategies as st

from sdmpc import ConstraintSpec, LinearSystem, StageCost, build_double_integrator
from sdmpc.certify import (bound_value_on_scaled_kernel, certify, check_condition, boundary_distance_profile,
                           decay_constants, estimate_C, estimate_cbar, estimate_M,
                           horizon_formula_report, long_horizon_value, lqr_invariant_level,
                           min_horizon_bound, keeper_bound_constants, solve_care, verify_local_growth, verify_segment_bound)
from sdmpc.errors import (ConstraintActiveError, DomainError, EmptyRegionError, NotStabilizableError)
from sdmpc.viability import double_integrator_kernel

S3 = math.sqrt(3.0)


def condition_lhs(g, M, C, Cb, d, N):
    """Independent one-line evaluation of the horizon condition."""
    b = max(C / M, g)
    return max(C / (M * d), Cb * (b / d) ** 2) * (b / (b + d)) ** (N - 1)


# --------------------------------------------------------------------------- Riccati

def test_care_double_integrator(di):
    sys, _, cost = di
    lq = solve_care(sys, cost)
    np.testing.assert_allclose(lq.P, [[S3, 1.0], [1.0, S3]], atol=1e-10)
    assert lq.residual <= 1e-10
    assert lq.sigma_max_P == pytest.approx(S3 + 1) and lq.sigma_min_P == pytest.approx(S3 - 1)
    assert lq.gamma == pytest.approx(S3 + 1, abs=1e-10)
    np.testing.assert_allclose(lq.F, [[-1.0, -S3]], atol=1e-10)
    assert np.max(np.linalg.eigvals(sys.A + sys.B @ lq.F).real) < 0
    assert sys.stabilizing_gain is not None and sys.decay_constants[0] >= 1


def test_care_scalar_stable():
    lq = solve_care(LinearSystem([[-1.0]], [[1.0]]), StageCost.quadratic([[1.0]], [[1.0]]))
    assert lq.P[0, 0] == pytest.approx(math.sqrt(2) - 1, abs=1e-12)


def test_care_not_stabilizable():
    with pytest.raises(NotStabilizableError):
        solve_care(LinearSystem([[1.0]], [[0.0]]), StageCost.quadratic([[1.0]], [[1.0]]))


@pytest.mark.parametrize("seed", range(5))
def test_care_matches_scipy(seed):
    rng = np.random.default_rng(seed)
    n, m = 3, 2
    A = rng.normal(size=(n, n))
    B = rng.normal(size=(n, m))
    L = rng.normal(size=(n + m, n + m))
    W = L @ L.T + 0.5 * np.eye(n + m)
    Q, R, N = W[:n, :n], W[n:, n:], W[:n, n:]
    lq = solve_care(LinearSystem(A, B), StageCost.quadratic(Q, R, N), attach=False)
    ref = sla.solve_continuous_are(A, B, Q, R, s=N)
    np.testing.assert_allclose(lq.P, ref, rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(lq.F, -np.linalg.solve(R, B.T @ ref + N.T), rtol=1e-7, atol=1e-9)


def test_decay_constants_bound_holds(di_lq):
    sys, _, _, lq = di_lq
    Acl = sys.A + sys.B @ lq.F
    G, eta = decay_constants(Acl)
    for t in np.linspace(0, 20, 401):
        assert np.linalg.norm(sla.expm(Acl * t), 2) <= G * math.exp(-eta * t) * (1 + 1e-9)


# --------------------------------------------------------------------------- M, C, Cbar

def test_M_double_integrator_and_grid_oracle(di):
    sys, cons, cost = di
    assert estimate_M(sys, cost, cons, 0.1) == pytest.approx(0.01)
    g = np.linspace(-1, 1, 317)
    X = np.array(np.meshgrid(g, g)).reshape(2, -1).T
    r2 = np.sum(X ** 2, axis=1)
    assert np.min(r2[r2 >= 0.01]) >= 0.01 - 1e-12


def test_M_scalar_example(scalar):
    sys, cons, cost = scalar
    assert estimate_M(sys, cost, cons, 0.5) == pytest.approx(0.25)


def test_M_empty_region(di):
    sys, cons, cost = di
    with pytest.raises(EmptyRegionError):
        estimate_M(sys, cost, cons, 3.0)


def test_C_at_equilibrium_is_zero(di):
    sys, cons, cost = di
    assert estimate_C(sys, cost, cons, [[0.0, 0.0]], 1.0) == 0.0


def test_C_regression_anchor(di):
    sys, cons, cost = di
    v = long_horizon_value(sys, cost, cons, np.array([0.5, 0.5]), 10.0)
    assert estimate_C(sys, cost, cons, [[0.5, 0.5]], 1.0) == pytest.approx(1.1 * v)
    # the LQR input saturates at (0.5, 0.5), so the value sits slightly above x'Px = 1.366
    x = np.array([0.5, 0.5])
    P = np.array([[S3, 1.0], [1.0, S3]])
    assert x @ P @ x <= v <= 1.05 * x @ P @ x


def test_C_infinite_outside_kernel(scalar):
    sys, cons, cost = scalar
    assert math.isinf(estimate_C(sys, cost, cons, [[0.0], [1.5]], 1.0))


def test_C_on_barrier_grows_with_proxy_horizon(scalar):
    sys, cons, cost = scalar
    c1 = estimate_C(sys, cost, cons, [[1.0]], 1.0, T_long=4.0)
    c2 = estimate_C(sys, cost, cons, [[1.0]], 1.0, T_long=8.0)
    assert c2 - c1 == pytest.approx(1.1 * 8.0, rel=1e-3)


def test_cbar_empirical_is_sharp(di_lq):
    sys, cons, cost, lq = di_lq
    pts = [[0.2, 0.0], [0.0, 0.2], [0.1, -0.1]]
    cb = estimate_cbar(sys, cost, cons, 0.1, pts)
    assert verify_segment_bound(lq, sys, cost, cons, 1.0, None, [0.1], pts, cbar=cb) == pytest.approx(1.0)
    assert verify_segment_bound(lq, sys, cost, cons, 1.0, None, [0.1], pts, cbar=0.5 * cb) > 1.05


def test_riccati_cbar_is_too_small_for_short_delta(di_lq):
    # V_delta(x) is about delta * l*(x) for short delta, so Cbar must be close to 1,
    # not delta * sigma_max(Q) / sigma_min(P)
    sys, cons, cost, lq = di_lq
    assert verify_segment_bound(lq, sys, cost, cons, 1.0, None, [0.1], [[0.2, 0.0], [0.0, 0.2]]) > 1.05


def test_segment_bound_at_equilibrium_is_trivial(di_lq):
    sys, cons, cost, lq = di_lq
    assert verify_segment_bound(lq, sys, cost, cons, 1.0, None, [0.1], [[0.0, 0.0]]) == 0.0


def test_local_growth(di_lq):
    sys, cons, cost, lq = di_lq
    ratio = verify_local_growth(lq, sys, cost, cons, 0.05, samples=24)
    assert ratio <= 2.74 and ratio == pytest.approx(lq.sigma_max_P, rel=0.01)
    with pytest.raises(ConstraintActiveError):
        verify_local_growth(lq, sys, cost, cons, 10.0, samples=8)


def test_invariant_level_ellipsoid_is_admissible(di_lq):
    sys, cons, cost, lq = di_lq
    c = lqr_invariant_level(lq, cons)
    # boundary of the ellipsoid: |F x| <= 1 and |x_i| <= 1
    w, V = np.linalg.eigh(lq.P)
    for th in np.linspace(0, 2 * np.pi, 200):
        x = V @ (np.sqrt(c / w) * np.array([np.cos(th), np.sin(th)]))
        assert np.all(cons.g(x, lq.F @ x) <= 1e-9)


# --------------------------------------------------------------------------- condition

def test_condition_example():
    c = check_condition(2, 1, 2, 1, 0.5, 2)
    assert c.beta == 2 and c.condition_lhs == pytest.approx(12.8) and not c.passes
    assert check_condition(2, 1, 2, 1, 0.5, 14).passes and not check_condition(2, 1, 2, 1, 0.5, 13).passes
    assert check_condition(2, 1, 2, 1, 0.5, 200).condition_lhs < 1e-15


def test_condition_domain():
    with pytest.raises(DomainError, match="decrease"):
        check_condition(2, 1, 2, 1, 2.5, 3)


def test_min_horizon_example_logs_discrepancy(caplog):
    with caplog.at_level(logging.WARNING, logger="sdmpc.certify"):
        assert min_horizon_bound(2, 1, 2, 1, 0.5) == 14
    assert "differs from scan" in caplog.text
    rep = horizon_formula_report(2, 1, 2, 1, 0.5)
    assert rep.printed == 8 and rep.corrected == 14


def test_min_horizon_at_C_equal_M_delta():
    N = min_horizon_bound(2, 1, 0.5, 1, 0.5)
    assert math.isfinite(N) and check_condition(2, 1, 0.5, 1, 0.5, N).passes


@settings(max_examples=100, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.floats(1, 10), st.floats(0.01, 5), st.floats(0.01, 20), st.floats(0.01, 5), st.floats(0.01, 0.99))
def test_scan_is_tight_and_never_silent(caplog, g, M, C, Cb, frac):
    beta = max(C / M, g)
    d = frac * beta
    caplog.clear()
    with caplog.at_level(logging.WARNING, logger="sdmpc.certify"):
        N = min_horizon_bound(g, M, C, Cb, d)
    rep = horizon_formula_report(g, M, C, Cb, d)
    assert condition_lhs(g, M, C, Cb, d, N) < 1
    assert N == 1 or condition_lhs(g, M, C, Cb, d, N - 1) >= 1
    assert rep.corrected == N
    assert rep.consistent or "differs from scan" in caplog.text


@settings(max_examples=40, deadline=None)
@given(st.floats(1, 5), st.floats(0.1, 2), st.floats(0.1, 5), st.floats(0.1, 2), st.floats(0.05, 0.9))
def test_min_horizon_monotone_in_delta(g, M, C, Cb, frac):
    d = frac * max(C / M, g)
    assert min_horizon_bound(g, M, C, Cb, d / 2) >= min_horizon_bound(g, M, C, Cb, d)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 60))
def test_lhs_decreasing_and_alpha_below_lhs(N):
    a, b = check_condition(2, 1, 2, 1, 0.5, N), check_condition(2, 1, 2, 1, 0.5, N + 1)
    assert b.condition_lhs < a.condition_lhs and a.alpha <= a.condition_lhs


# --------------------------------------------------------------------------- constructive bounds

def test_keeper_bound_constants(di_lq):
    sys, cons, _, _ = di_lq
    c = keeper_bound_constants(sys, cons, 0.05)
    assert c.direct and c.m == 0
    c = keeper_bound_constants(sys, cons, 0.5)
    assert not c.direct and 0 < c.mu <= 1 and c.mu < c.epsilon < 1
    assert c.mu * 0.5 + (1 - c.mu) * c.L * 0.5 == pytest.approx(1.0)
    assert c.epsilon ** c.m * 0.5 * c.L < 1 <= c.epsilon ** (c.m - 1) * 0.5 * c.L


def test_scaled_kernel_bound_zero_and_monotone(di_lq):
    sys, cons, cost, _ = di_lq
    k = double_integrator_kernel()
    assert float(bound_value_on_scaled_kernel(sys, cons, cost, 0.0, k)) == 0.0
    bounds = [bound_value_on_scaled_kernel(sys, cons, cost, lam, k, per_axis=3) for lam in (0.5, 0.7, 0.9, 0.95)]
    vals = [float(b) for b in bounds]
    assert all(math.isfinite(v) for v in vals)
    assert all(a < b for a, b in zip(vals, vals[1:]))
    assert all(b.sup_cost <= b.bound for b in bounds)


def test_boundary_distance_profile(di_lq):
    sys, cons, cost, _ = di_lq
    rows = boundary_distance_profile(sys, cons, cost, double_integrator_kernel(), (0.2, 0.05), rays=8, T_long=4.0)
    D = rows[0]["D_hat"]
    assert all(r["product"] <= D and math.isfinite(r["sup_V"]) for r in rows)
    assert rows[1]["sup_V"] >= rows[0]["sup_V"]


def test_certify_pipeline(di):
    sys, cons, cost = di
    rep = certify(sys, cost, cons, [[0.5, 0.5]], 0.1)
    c = rep.certificate
    assert c.passes and c.alpha < 1 and c.N == rep.N_bar
    assert not check_condition(c.gamma, c.M, c.C, c.Cbar, c.delta, c.N - 1).passes
    assert rep.as_dict()["lq"]["gamma"] == pytest.approx(S3 + 1)
    assert rep.Cbar >= rep.cbar_riccati


def test_certify_keeps_delta_below_beta(di):
    # C is floored at 1.01 M delta, so beta >= C / M > delta and the domain check passes
    sys, cons, cost = di
    rep = certify(sys, cost, cons, [[0.1, 0.0]], 2.0, N_range=[5])
    assert rep.certificate.beta > 2.0
