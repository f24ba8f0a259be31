import math

import numpy as np
import pytest

from sdmpc import GridSpec, MpcRun, SolverOptions, lyapunov_monitor, run_mpc, smallest_horizon


def test_equilibrium_run_is_trivial(di):
    sys, cons, cost = di
    run = run_mpc(sys, cost, cons, [0.0, 0.0], GridSpec(0.1, 10, 3), 5.0)
    assert run.success and run.goal_reached and len(run.steps) == 1
    assert run.closed_loop.cost == 0.0


def test_red_case_is_feasible(di):
    sys, cons, cost = di
    run = run_mpc(sys, cost, cons, [0.5, 0.5], GridSpec(0.1, 10, 4), 10.0, success_mode="feasible")
    assert run.success and run.closed_loop.max_violation(cons) <= 1e-6


def test_magenta_case_reaches_goal_eventually(di):
    sys, cons, cost = di
    run = run_mpc(sys, cost, cons, [0.733, 0.73], GridSpec(0.1, 10, 7), 30.0)
    assert run.success and run.goal_reached
    assert run.closed_loop.max_violation(cons) <= 1e-6
    assert np.linalg.norm(run.closed_loop.final_state) <= 1e-2


def test_short_horizon_fails_with_reason(di):
    sys, cons, cost = di
    run = run_mpc(sys, cost, cons, [0.7, 0.7], GridSpec(0.1, 10, 1), 10.0)
    assert not run.success and run.failure_reason in ("infeasible_ocp", "constraint_violation")


def test_goal_mode_reports_no_convergence(di):
    sys, cons, cost = di
    run = run_mpc(sys, cost, cons, [0.5, 0.5], GridSpec(0.1, 10, 4), 1.0)
    assert not run.success and run.failure_reason == "no_convergence_to_goal"
    assert len(run.steps) == 11 and math.isnan(run.steps[-1].stage_integral)


def test_smallest_horizon_at_goal(di):
    sys, cons, cost = di
    assert smallest_horizon(sys, cost, cons, [0.0, 0.0], 0.1, 5, 10.0) == 1


@pytest.mark.parametrize("x0,delta,ref", [((0.7, 0.7), 0.1, 5), ((0.7, 0.7), 0.05, 10)])
def test_smallest_horizon_matches_reference_within_one(di, x0, delta, ref):
    sys, cons, cost = di
    N = smallest_horizon(sys, cost, cons, x0, delta, ref + 2, 10.0, success_mode="feasible",
                         options=SolverOptions(constraint_nodes="sample"), N_min=ref - 2)
    assert N is not None and abs(N - ref) <= 1


def test_monitor_alpha_zero_identity(di):
    sys, cons, cost = di
    run = run_mpc(sys, cost, cons, [0.3, -0.2], GridSpec(0.2, 10, 10), 2.0)
    rep = lyapunov_monitor(run, 0.0)
    v = run.values()
    ints = np.array([s.stage_integral for s in run.steps[:-1]])
    np.testing.assert_allclose(rep.residuals, v[1:] - v[:-1] + ints)
    # Bellman: with alpha = 0 the residual is V_T(x+) - V_{T-delta}(x+) >= 0
    assert np.all(rep.residuals >= -rep.slack_budget)
    assert lyapunov_monitor(run, 0.5).passed


def test_monitor_equilibrium_zero(di):
    sys, cons, cost = di
    run = run_mpc(sys, cost, cons, [0.0, 0.0], GridSpec(0.1, 10, 3), 0.0)
    assert lyapunov_monitor(run, 0.5).worst_residual == 0.0
    with pytest.raises(ValueError):
        lyapunov_monitor(run, 1.0)


def test_outputs_are_deterministic(di):
    sys, cons, cost = di
    a = run_mpc(sys, cost, cons, [0.4, 0.1], GridSpec(0.2, 5, 8), 2.0)
    b = run_mpc(sys, cost, cons, [0.4, 0.1], GridSpec(0.2, 5, 8), 2.0)
    assert a.steps_csv(0.5) == b.steps_csv(0.5) and a.summary_json() == b.summary_json()
    assert a.steps_csv().splitlines()[0] == "t,V_T,stage_integral,residual"


def test_invalid_arguments(di):
    sys, cons, cost = di
    with pytest.raises(ValueError):
        run_mpc(sys, cost, cons, [0, 0], GridSpec(0.1), 1.0, success_mode="fast")
    with pytest.raises(ValueError):
        run_mpc(sys, cost, cons, [0, 0], GridSpec(0.1), 1.0, goal_radius=0.0)
    with pytest.raises(ValueError):
        smallest_horizon(sys, cost, cons, [0, 0], 0.1, 0, 1.0)
