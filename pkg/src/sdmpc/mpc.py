"""Receding-horizon loop and the relaxed-Lyapunov monitor.

At every sampling instant ``p * delta`` the finite-horizon problem is solved
from the measured state and the first ``delta``-segment of the optimal
input is applied; the next problem is warm-started with the shifted tail.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import DivergenceError, InfeasibleOCPError
from .integrate import GridSpec, Trajectory, propagate
from .ocp import OcpProblem, SolverOptions, solve

__all__ = [
    "StepRecord",
    "MpcRun",
    "LyapunovReport",
    "run_mpc",
    "smallest_horizon",
    "lyapunov_monitor",
    "FAILURE_REASONS",
]

FAILURE_REASONS = ("infeasible_ocp", "constraint_violation", "no_convergence_to_goal")
NODE_TOL = 1e-6


@dataclass
class StepRecord:
    """One sampling instant: measured state, its value and the applied segment's cost.

    The last record of a run is the terminal measurement; it has no applied
    segment (``stage_integral`` is ``nan``).
    """

    time: float
    state: np.ndarray
    value: float
    stage_integral: float
    iterations: int
    converged: bool
    max_violation: float


@dataclass
class MpcRun:
    grid: GridSpec
    x0: np.ndarray
    closed_loop: Trajectory
    steps: List[StepRecord]
    success: bool
    failure_reason: Optional[str] = None
    goal_reached: bool = False
    options: SolverOptions = field(default_factory=SolverOptions)

    @property
    def solver_tolerance(self) -> float:
        return max(self.options.feas_tol, self.options.grad_tol)

    def values(self) -> np.ndarray:
        return np.array([s.value for s in self.steps])

    def summary(self) -> dict:
        cl = self.closed_loop
        return {
            "x0": [float(v) for v in self.x0],
            "delta": self.grid.delta,
            "N": self.grid.horizon_steps,
            "substeps": self.grid.substeps,
            "success": self.success,
            "failure_reason": self.failure_reason,
            "goal_reached": self.goal_reached,
            "steps": len(self.steps),
            "final_time": float(cl.times[-1]),
            "final_state": [float(v) for v in cl.final_state],
            "closed_loop_cost": float(cl.cost),
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True)

    def steps_csv(self, alpha: float = 0.0) -> str:
        """Columns ``t, V_T, stage_integral, residual`` (residual blank on the last row)."""
        rep = lyapunov_monitor(self, alpha) if len(self.steps) > 1 else None
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "V_T", "stage_integral", "residual"])
        for i, s in enumerate(self.steps):
            res = repr(float(rep.residuals[i])) if rep is not None and i < len(rep.residuals) else ""
            integral = "" if math.isnan(s.stage_integral) else repr(float(s.stage_integral))
            w.writerow([repr(float(s.time)), repr(float(s.value)), integral, res])
        return buf.getvalue()


@dataclass
class LyapunovReport:
    residuals: np.ndarray
    alpha: float
    worst_residual: float
    slack_budget: float

    @property
    def passed(self) -> bool:
        return self.worst_residual <= self.slack_budget


def _shift(U, k):
    """Drop the first ``k`` rows and repeat the last segment."""
    return np.vstack([U[k:], np.repeat(U[-k:], 1, axis=0)]) if k < len(U) else U.copy()


def run_mpc(sys, cost, cons, x0, grid: GridSpec, t_sim: float, goal_radius: float = 1e-2,
            options: Optional[SolverOptions] = None, success_mode: str = "goal") -> MpcRun:
    """Simulate the sampled-data MPC closed loop.

    Parameters
    ----------
    grid : GridSpec
        ``delta``, RK4 ``substeps`` per period and horizon ``N``.
    t_sim : float
        Simulated window; the loop runs over the sampling instants in ``[0, t_sim]``.
    goal_radius : float
        The run stops successfully once ``|x - x_eq| <= goal_radius``.
    success_mode : {"goal", "feasible"}
        ``"goal"``: success requires reaching the goal ball within ``t_sim``.
        ``"feasible"``: success also when every problem stayed feasible over
        ``t_sim`` and the value at the final measurement is below the
        initial value.

    Failures are reported through ``failure_reason`` rather than raised.
    """
    if success_mode not in ("goal", "feasible"):
        raise ValueError("success_mode must be 'goal' or 'feasible'")
    if goal_radius <= 0:
        raise ValueError("goal_radius must be positive")
    if t_sim < 0:
        raise ValueError("t_sim must be nonnegative")
    # sampling instants inside [0, t_sim]
    n_periods = int(math.floor(t_sim / grid.delta + 1e-9))
    opts = options or SolverOptions()
    k = grid.substeps
    x_eq = np.asarray(sys.equilibrium_state)
    x = np.asarray(x0, float).copy()
    seg_grid = GridSpec(grid.delta, k, 1)
    closed = Trajectory([0.0], x[None, :], np.empty((0, sys.input_dim)), [0.0])
    steps: List[StepRecord] = []
    warm = None
    lam = None
    failure = None
    goal = False

    def measure(t, xm):
        problem = OcpProblem(sys, cost, cons, grid, xm)
        return solve(problem, warm, opts, lam)

    for p in range(n_periods + 1):
        t = p * grid.delta
        at_goal = np.linalg.norm(x - x_eq) <= goal_radius
        try:
            sol = measure(t, x)
        except (InfeasibleOCPError, DivergenceError):
            failure = "infeasible_ocp"
            break
        if at_goal or p == n_periods:
            steps.append(StepRecord(t, x.copy(), sol.value, math.nan, sol.iterations,
                                    sol.converged, sol.max_violation))
            goal = bool(at_goal)
            break
        seg = propagate(sys, cost, x, sol.controls[:k], seg_grid, t0=t)
        steps.append(StepRecord(t, x.copy(), sol.value, seg.cost, sol.iterations,
                                sol.converged, sol.max_violation))
        closed = closed.concatenate(seg)
        if seg.max_violation(cons) > NODE_TOL:
            failure = "constraint_violation"
            break
        x = seg.final_state.copy()
        warm = _shift(sol.controls, k)
        per = (len(sol.multipliers) - 1) // grid.horizon_steps  # constrained nodes per period
        lam = np.vstack([sol.multipliers[per:], np.repeat(sol.multipliers[-1:], per, axis=0)])

    if failure is None and not goal:
        if success_mode == "feasible" and len(steps) > 1 and steps[-1].value < steps[0].value:
            success = True
        else:
            success = False
            failure = "no_convergence_to_goal"
    else:
        success = failure is None
    return MpcRun(grid, np.asarray(x0, float), closed, steps, success, failure, goal, opts)


def smallest_horizon(sys, cost, cons, x0, delta: float, N_max: int, t_sim: float,
                     goal_radius: float = 1e-2, substeps: int = 10,
                     options: Optional[SolverOptions] = None, success_mode: str = "goal",
                     N_min: int = 1) -> Optional[int]:
    """Least ``N`` in ``N_min..N_max`` whose closed loop succeeds (upward scan), else ``None``."""
    if N_max < 1:
        raise ValueError("N_max must be at least 1")
    for N in range(max(1, N_min), N_max + 1):
        run = run_mpc(sys, cost, cons, x0, GridSpec(delta, substeps, N), t_sim, goal_radius,
                      options, success_mode)
        if run.success:
            return N
    return None


def lyapunov_monitor(run: MpcRun, alpha: float, slack_budget: Optional[float] = None) -> LyapunovReport:
    """Residuals ``V(x_{p+1}) - V(x_p) + (1 - alpha) * int_0^delta l`` along a run.

    ``slack_budget`` defaults to twice the per-solve tolerance.
    """
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1)")
    vals = run.values()
    integrals = np.array([s.stage_integral for s in run.steps[:-1]])
    res = vals[1:] - vals[:-1] + (1.0 - alpha) * integrals
    budget = 2.0 * run.solver_tolerance if slack_budget is None else float(slack_budget)
    worst = float(np.max(res)) if res.size else 0.0
    return LyapunovReport(res, float(alpha), worst, budget)
