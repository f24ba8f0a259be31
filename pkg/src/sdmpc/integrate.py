"""Fixed-step RK4 propagation with simultaneous stage-cost quadrature.

The running cost is integrated as an extra state component
``c' = l(x, u)``, so the final ``running_cost`` of :func:`propagate` is the
RK4 quadrature of ``J_T(x0, u)``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DivergenceError
from .model import ControlSystem, StageCost

__all__ = ["GridSpec", "Trajectory", "rk4_step", "propagate", "propagate_feedback"]

DIVERGENCE_CAP = 1e9


@dataclass(frozen=True)
class GridSpec:
    """Sampling period ``delta``, ``substeps`` RK4 steps per period and ``horizon_steps`` periods."""

    delta: float
    substeps: int = 10
    horizon_steps: int = 1

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.substeps < 1 or self.horizon_steps < 1:
            raise ValueError("substeps and horizon_steps must be positive")

    @property
    def h(self) -> float:
        return self.delta / self.substeps

    @property
    def T(self) -> float:
        return self.horizon_steps * self.delta

    @property
    def n_steps(self) -> int:
        return self.horizon_steps * self.substeps

    def with_horizon(self, horizon_steps: int) -> "GridSpec":
        return GridSpec(self.delta, self.substeps, int(horizon_steps))


@dataclass
class Trajectory:
    """Sampled state/control trajectory.

    ``controls[j]`` is held on ``[times[j], times[j + 1])``; ``running_cost[j]``
    is the cost accumulated up to ``times[j]``.
    """

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    running_cost: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, float)
        self.states = np.asarray(self.states, float)
        c = np.asarray(self.controls, float)
        self.controls = c if c.ndim == 2 and len(c) == len(self.times) - 1 else c.reshape(len(self.times) - 1, -1)
        self.running_cost = np.asarray(self.running_cost, float)

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def cost(self) -> float:
        return float(self.running_cost[-1])

    def max_violation(self, cons) -> float:
        """Worst constraint residual over the nodes ``(x_j, u_j)`` and ``(x_K, u_{K-1})``."""
        worst = -np.inf
        K = len(self.controls)
        for j in range(K + 1):
            u = self.controls[min(j, K - 1)]
            worst = max(worst, float(np.max(cons.g(self.states[j], u))))
        return worst

    def concatenate(self, other: "Trajectory") -> "Trajectory":
        """Append ``other``, which must start where ``self`` ends."""
        if not np.isclose(other.times[0], self.times[-1]):
            raise ValueError("trajectories are not contiguous in time")
        return Trajectory(
            np.concatenate([self.times, other.times[1:]]),
            np.vstack([self.states, other.states[1:]]),
            np.vstack([self.controls, other.controls]),
            np.concatenate([self.running_cost, self.running_cost[-1] + other.running_cost[1:]]),
        )

    def to_csv(self, path_or_buf=None) -> str:
        """Write columns ``t, x_1..x_n, u_1..u_m, cost`` (control blank on the last node)."""
        n = self.states.shape[1]
        m = self.controls.shape[1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"x_{i + 1}" for i in range(n)] + [f"u_{i + 1}" for i in range(m)] + ["cost"])
        for j, t in enumerate(self.times):
            u = [repr(float(v)) for v in self.controls[j]] if j < len(self.controls) else [""] * m
            w.writerow([repr(float(t))] + [repr(float(v)) for v in self.states[j]] + u
                       + [repr(float(self.running_cost[j]))])
        text = buf.getvalue()
        if path_or_buf is not None:
            if hasattr(path_or_buf, "write"):
                path_or_buf.write(text)
            else:
                with open(path_or_buf, "w", newline="") as fh:
                    fh.write(text)
        return text


def _check(x):
    if not np.all(np.isfinite(x)) or np.linalg.norm(x) > DIVERGENCE_CAP:
        raise DivergenceError(f"state norm exceeded {DIVERGENCE_CAP:g}")


def rk4_step(sys: ControlSystem, cost: StageCost, x, u, h):
    """One RK4 step on ``(x, c)`` with constant input ``u``.

    Returns ``(x_next, cost_increment, stage_states)`` where ``stage_states``
    are the four evaluation points (needed by the discrete adjoint).
    """
    f = sys.f
    z1 = x
    k1 = f(z1, u)
    z2 = x + 0.5 * h * k1
    k2 = f(z2, u)
    z3 = x + 0.5 * h * k2
    k3 = f(z3, u)
    z4 = x + h * k3
    k4 = f(z4, u)
    x_next = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    dc = (h / 6.0) * (cost(z1, u) + 2.0 * cost(z2, u) + 2.0 * cost(z3, u) + cost(z4, u))
    return x_next, dc, (z1, z2, z3, z4)


def propagate(sys: ControlSystem, cost: StageCost, x0, controls, grid: GridSpec,
              t0: float = 0.0) -> Trajectory:
    """Integrate under piecewise-constant ``controls`` (one row per RK4 step).

    Raises
    ------
    DivergenceError
        If the state norm exceeds ``1e9``.
    """
    controls = np.asarray(controls, float).reshape(-1, sys.input_dim)
    K = len(controls)
    if K != grid.n_steps:
        raise ValueError(f"expected {grid.n_steps} control rows, got {K}")
    h = grid.h
    states = np.empty((K + 1, sys.state_dim))
    rc = np.zeros(K + 1)
    x = np.asarray(x0, float).copy()
    _check(x)
    states[0] = x
    for j in range(K):
        x, dc, _ = rk4_step(sys, cost, x, controls[j], h)
        _check(x)
        states[j + 1] = x
        rc[j + 1] = rc[j] + dc
    times = t0 + h * np.arange(K + 1)
    return Trajectory(times, states, controls, rc)


def propagate_feedback(sys: ControlSystem, cost: StageCost, x0, feedback: Callable, t_end: float,
                       h: float, t0: float = 0.0) -> Trajectory:
    """Integrate the closed loop ``u = feedback(t, x)``, re-evaluated at every RK4 stage.

    The step is shrunk to ``t_end / ceil(t_end / h)`` so the grid ends at
    ``t0 + t_end``.  ``controls[j]`` records the feedback at the start of step
    ``j``.
    """
    if t_end <= 0 or h <= 0:
        raise ValueError("t_end and h must be positive")
    K = int(np.ceil(t_end / h - 1e-9))
    h = t_end / K
    n, m = sys.state_dim, sys.input_dim
    states = np.empty((K + 1, n))
    controls = np.empty((K, m))
    rc = np.zeros(K + 1)
    x = np.asarray(x0, float).copy()
    _check(x)
    states[0] = x
    f = sys.f
    for j in range(K):
        t = t0 + j * h
        u1 = np.atleast_1d(np.asarray(feedback(t, x), float))
        k1 = f(x, u1)
        z2 = x + 0.5 * h * k1
        u2 = np.atleast_1d(np.asarray(feedback(t + 0.5 * h, z2), float))
        k2 = f(z2, u2)
        z3 = x + 0.5 * h * k2
        u3 = np.atleast_1d(np.asarray(feedback(t + 0.5 * h, z3), float))
        k3 = f(z3, u3)
        z4 = x + h * k3
        u4 = np.atleast_1d(np.asarray(feedback(t + h, z4), float))
        k4 = f(z4, u4)
        dc = (h / 6.0) * (cost(x, u1) + 2.0 * cost(z2, u2) + 2.0 * cost(z3, u3) + cost(z4, u4))
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        _check(x)
        controls[j] = u1
        states[j + 1] = x
        rc[j + 1] = rc[j] + dc
    return Trajectory(t0 + h * np.arange(K + 1), states, controls, rc)
