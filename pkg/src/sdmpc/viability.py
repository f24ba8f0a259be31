"""Viability-kernel geometry.

A :class:`ViabilityKernel` bundles membership, distance to the boundary and
a *keeper*: a state feedback whose closed loop stays in the kernel.  The
double integrator with unit boxes has a closed-form kernel whose curved
boundary pieces are integral curves of the extreme inputs; for other linear
systems :func:`inner_approximation` builds a certified grid kernel.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import OutsideKernelError
from .integrate import GridSpec, propagate, propagate_feedback
from .model import ConstraintSpec, LinearSystem, StageCost, build_double_integrator

__all__ = [
    "INSIDE",
    "OUTSIDE",
    "BOUNDARY",
    "BarrierCurve",
    "ViabilityKernel",
    "GridKernel",
    "double_integrator_kernel",
    "inner_approximation",
    "scale_kernel",
    "distance_to_boundary",
    "interior_ball_radius",
]

INSIDE, OUTSIDE, BOUNDARY = "inside", "outside", "boundary"
BAND = 1e-3


@dataclass(frozen=True)
class BarrierCurve:
    """Integral curve ``s -> point(s)``, ``s`` in ``s_range``, under a constant input."""

    point: Callable[[float], np.ndarray]
    control_along: float
    tangency_point: np.ndarray
    s_range: Tuple[float, float] = (0.0, 1.0)

    def polyline(self, count: int = 101) -> np.ndarray:
        ss = np.linspace(*self.s_range, count)
        return np.array([self.point(s) for s in ss])


class ViabilityKernel:
    """Kernel described by callables.

    Parameters
    ----------
    membership : callable
        ``x -> INSIDE | OUTSIDE | BOUNDARY``.
    boundary_distance : callable
        ``x -> dist(x, boundary)`` for points that are not outside.
    keeper : callable
        ``x -> u`` keeping trajectories in the kernel.
    analytic : bool
    barriers : sequence of BarrierCurve
    """

    def __init__(self, membership, boundary_distance, keeper, analytic=False, barriers=()):
        self._membership = membership
        self._distance = boundary_distance
        self._keeper = keeper
        self.analytic = bool(analytic)
        self.barriers = tuple(barriers)

    def membership(self, x) -> str:
        return self._membership(np.asarray(x, float))

    def contains(self, x) -> bool:
        return self.membership(x) != OUTSIDE

    def boundary_distance(self, x) -> float:
        return float(self._distance(np.asarray(x, float)))

    def keeper(self, x) -> np.ndarray:
        return np.atleast_1d(np.asarray(self._keeper(np.asarray(x, float)), float))


# --------------------------------------------------------------------------- double integrator

def _segment_distance(p, a, b):
    d = b - a
    t = np.clip(np.dot(p - a, d) / np.dot(d, d), 0.0, 1.0)
    return float(np.linalg.norm(p - (a + t * d)))


def _arc_distance(p, sign):
    """Distance to the arc ``x1 = sign * (1 - s^2 / 2), x2 = sign * s``, ``s in [0, 1]``."""
    q = sign * p  # reflect onto the upper-right arc
    # stationarity of |point(s) - q|^2: s^3 / 2 + q1 s - q2 = 0
    cands = [0.0, 1.0]
    for r in np.roots([0.5, 0.0, q[0], -q[1]]):
        if abs(r.imag) < 1e-9 and 0.0 <= r.real <= 1.0:
            cands.append(float(r.real))
    return min(math.hypot(1.0 - s * s / 2.0 - q[0], s - q[1]) for s in cands)


def _di_pieces(p):
    """Distances to the six boundary pieces of the double-integrator kernel."""
    return (
        _segment_distance(p, np.array([1.0, -1.0]), np.array([1.0, 0.0])),
        _segment_distance(p, np.array([-1.0, 0.0]), np.array([-1.0, 1.0])),
        _segment_distance(p, np.array([-1.0, 1.0]), np.array([0.5, 1.0])),
        _segment_distance(p, np.array([-0.5, -1.0]), np.array([1.0, -1.0])),
        _arc_distance(p, 1.0),
        _arc_distance(p, -1.0),
    )


def _di_excess(p):
    """Largest normalised constraint excess (positive outside)."""
    x1, x2 = p
    ex = [abs(x1) - 1.0, abs(x2) - 1.0]
    if x2 >= 0:
        ex.append((x1 - (1.0 - x2 * x2 / 2.0)) / math.hypot(1.0, x2))
    if x2 <= 0:
        ex.append((-1.0 + x2 * x2 / 2.0 - x1) / math.hypot(1.0, x2))
    return max(ex)


def double_integrator_kernel(band: float = BAND, gain=None) -> ViabilityKernel:
    """Closed-form kernel of ``x1' = x2, x2' = u`` with ``|x_i| <= 1``, ``|u| <= 1``.

    ``A = box  and  x1 <= 1 - x2^2/2 (x2 >= 0)  and  x1 >= -1 + x2^2/2 (x2 <= 0)``.
    The keeper is the saturated LQR law, replaced by the barrier input
    (``-1`` on the upper-right arc, ``+1`` on the lower-left one) within
    ``2 * band`` of an arc.
    """
    if gain is None:
        from .certify import solve_care
        sys, _, cost = build_double_integrator()
        gain = solve_care(sys, cost, attach=False).F
    F = np.asarray(gain, float).reshape(1, 2)

    def membership(p):
        if _di_excess(p) > 0:
            return BOUNDARY if _di_excess(p) <= band else OUTSIDE
        return BOUNDARY if min(_di_pieces(p)) <= band else INSIDE

    def distance(p):
        return min(_di_pieces(p))

    def keeper(p):
        x1, x2 = p
        if x2 >= 0 and x1 - (1.0 - x2 * x2 / 2.0) >= -2 * band:
            return np.array([-1.0])
        if x2 <= 0 and (-1.0 + x2 * x2 / 2.0) - x1 >= -2 * band:
            return np.array([1.0])
        return np.clip(F @ p, -1.0, 1.0)

    upper = BarrierCurve(lambda s: np.array([1.0 - s * s / 2.0, s]), -1.0, np.array([1.0, 0.0]))
    lower = BarrierCurve(lambda s: np.array([-1.0 + s * s / 2.0, -s]), 1.0, np.array([-1.0, 0.0]))
    return ViabilityKernel(membership, distance, keeper, analytic=True, barriers=(upper, lower))


def barrier_polyline_csv(kernel: ViabilityKernel, count: int = 101) -> str:
    """Barrier curves as CSV rows ``curve, s, x_1, x_2, u``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["curve", "s", "x_1", "x_2", "u"])
    for i, b in enumerate(kernel.barriers):
        for s, p in zip(np.linspace(*b.s_range, count), b.polyline(count)):
            w.writerow([i, repr(float(s)), repr(float(p[0])), repr(float(p[1])), repr(float(b.control_along))])
    return buf.getvalue()


# --------------------------------------------------------------------------- scaling & distance

def scale_kernel(kernel: ViabilityKernel, lam: float) -> ViabilityKernel:
    """The set ``lam * A`` with keeper ``x -> lam * keeper(x / lam)``.

    ``lam = 0`` gives the singleton ``{0}``.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    if lam == 1.0:
        return kernel
    if lam == 0.0:
        return ViabilityKernel(
            lambda x: BOUNDARY if np.linalg.norm(x) == 0.0 else OUTSIDE,
            lambda x: 0.0,
            lambda x: np.zeros_like(kernel.keeper(np.zeros_like(x))),
            analytic=kernel.analytic,
        )
    barriers = tuple(BarrierCurve(lambda s, b=b: lam * b.point(s), lam * b.control_along,
                                  lam * b.tangency_point, b.s_range) for b in kernel.barriers)
    return ViabilityKernel(
        lambda x: kernel.membership(x / lam),
        lambda x: lam * kernel.boundary_distance(x / lam),
        lambda x: lam * kernel.keeper(x / lam),
        analytic=kernel.analytic,
        barriers=barriers,
    )


def distance_to_boundary(kernel: ViabilityKernel, K: Sequence) -> float:
    """``min_{x in K} dist(x, boundary)``; points in the boundary band count as 0.

    Raises
    ------
    OutsideKernelError
        If a point of ``K`` is outside the kernel.
    """
    best = math.inf
    for x in np.atleast_2d(np.asarray(K, float)):
        m = kernel.membership(x)
        if m == OUTSIDE:
            raise OutsideKernelError(f"{x.tolist()} is outside the kernel")
        best = min(best, 0.0 if m == BOUNDARY else kernel.boundary_distance(x))
    return best


def interior_ball_radius(lin: LinearSystem, cons: ConstraintSpec) -> float:
    """Radius ``eps / ((1 + |F|) Gamma)`` of a ball around 0 contained in the kernel.

    ``eps`` is the largest radius with ``eps * B`` inside the joint constraint set.
    """
    if lin.stabilizing_gain is None or lin.decay_constants is None:
        raise ValueError("stabilizing gain with decay constants required")
    Gx, Gu, g0 = (np.asarray(a) for a in cons.affine)
    eps = float(np.min(-g0 / np.linalg.norm(np.hstack([Gx, Gu]), axis=1)))
    Gamma, _ = lin.decay_constants
    return eps / ((1.0 + np.linalg.norm(lin.stabilizing_gain, 2)) * Gamma)


# --------------------------------------------------------------------------- grid kernels

class GridKernel(ViabilityKernel):
    """Kernel approximation on a rectilinear vertex grid.

    A point is inside when every vertex of its grid cell carries a feasible
    witness; by convexity of the true kernel (linear dynamics, convex
    constraints) such cells lie inside it.
    """

    def __init__(self, axes: List[np.ndarray], inside: np.ndarray, first_controls: np.ndarray,
                 lqr_witness: np.ndarray, F: np.ndarray, input_box):
        self.axes = axes
        self.inside = inside
        self.first_controls = first_controls
        self.lqr_witness = lqr_witness
        self.F = F
        self.input_box = input_box
        self.resolution = float(axes[0][1] - axes[0][0])
        super().__init__(self._member, self._dist, self._keep, analytic=False)

    def _cell(self, x):
        idx = []
        for a, v in zip(self.axes, x):
            if v < a[0] - 1e-12 or v > a[-1] + 1e-12:
                return None
            i = int(np.clip(np.searchsorted(a, v, side="right") - 1, 0, len(a) - 2))
            idx.append(i)
        return idx

    def _member(self, x):
        cell = self._cell(x)
        if cell is None:
            return OUTSIDE
        n = len(cell)
        for corner in np.ndindex(*([2] * n)):
            if not self.inside[tuple(c + o for c, o in zip(cell, corner))]:
                return OUTSIDE
        return INSIDE

    def _nearest(self, x):
        return tuple(int(np.clip(np.rint((v - a[0]) / (a[1] - a[0])), 0, len(a) - 1))
                     for a, v in zip(self.axes, x))

    def _dist(self, x):
        pts = np.array(np.meshgrid(*self.axes, indexing="ij")).reshape(len(self.axes), -1).T
        out = pts[~self.inside.ravel()]
        if len(out) == 0:
            return math.inf
        half_diag = 0.5 * self.resolution * math.sqrt(len(self.axes))
        return max(0.0, float(np.min(np.linalg.norm(out - x, axis=1))) - half_diag)

    def _keep(self, x):
        i = self._nearest(x)
        if self.lqr_witness[i]:
            u = self.F @ x
            return u if self.input_box is None else np.clip(u, *self.input_box)
        return self.first_controls[i]

    @property
    def volume(self) -> float:
        """Volume of the union of fully witnessed cells."""
        ins = self.inside
        n = ins.ndim
        full = np.ones([s - 1 for s in ins.shape], bool)
        for corner in np.ndindex(*([2] * n)):
            sl = tuple(slice(c, c + s - 1) for c, s in zip(corner, ins.shape))
            full &= ins[sl]
        return float(full.sum()) * self.resolution ** n

    def occupancy_csv(self) -> str:
        """Vertex grid as CSV rows ``x_1..x_n, inside``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x_{i + 1}" for i in range(len(self.axes))] + ["inside"])
        for idx in np.ndindex(*self.inside.shape):
            w.writerow([repr(float(a[i])) for a, i in zip(self.axes, idx)] + [int(self.inside[idx])])
        return buf.getvalue()


def _ellipsoid_level(P, F, cons):
    Gx, Gu, g0 = (np.asarray(a) for a in cons.affine)
    W = Gx + Gu @ F
    quad = np.einsum("ij,jk,ik->i", W, np.linalg.inv(P), W)
    ok = quad > 0
    return float(np.min(g0[ok] ** 2 / quad[ok]))


def _node_feasible(cons, x):
    lo, hi = (np.asarray(a, float) for a in cons.state_box)
    return bool(np.all(x >= lo) and np.all(x <= hi))


def _batched_saturated_rollout(lin, cons, F, X0, horizon, h):
    """RK4 rollouts of ``u = sat(F x)`` from every row of ``X0``.

    Returns the mask of rollouts that satisfy all constraints at every node,
    and the final states.
    """
    A, B = np.asarray(lin.A, float), np.asarray(lin.B, float)
    Gx, Gu, g0 = (np.asarray(a, float) for a in cons.affine)
    box = cons.input_box

    def u_of(X):
        U = X @ F.T
        return U if box is None else np.clip(U, *box)

    def f(X):
        return X @ A.T + u_of(X) @ B.T

    def feasible(X):
        return np.all(X @ Gx.T + u_of(X) @ Gu.T + g0 <= 0.0, axis=1)

    X = np.array(X0, float)
    ok = feasible(X)
    for _ in range(int(round(horizon / h))):
        k1 = f(X)
        k2 = f(X + 0.5 * h * k1)
        k3 = f(X + 0.5 * h * k2)
        k4 = f(X + h * k3)
        X = X + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        ok &= feasible(X)
    return ok, X


def inner_approximation(lin: LinearSystem, cons: ConstraintSpec, resolution: float,
                        horizon: float = 10.0, cost: Optional[StageCost] = None, h: float = 0.01,
                        margin: int = 0, ocp_fallback: bool = True, ocp_step: float = 0.1) -> GridKernel:
    """Grid inner approximation of the viability kernel of a linear system.

    A vertex is witnessed when an admissible input steers it into the
    LQR-invariant ellipsoid ``{x' P x <= c}`` within ``horizon``, with all
    constraints checked on an RK4 grid of step ``h``.  The first candidate
    is the saturated LQR law; with ``ocp_fallback`` a minimum-cost open-loop
    input (held over ``ocp_step``) is tried next.  ``margin`` erodes the
    witnessed set by that many cells.

    Raises
    ------
    NotStabilizableError
        Propagated from the Riccati solve.
    """
    from .certify import solve_care
    from .ocp import OcpProblem, SolverOptions, solve
    from .errors import InfeasibleOCPError, DivergenceError

    if cost is None:
        cost = StageCost.quadratic(np.eye(lin.state_dim), np.eye(lin.input_dim))
    lq = solve_care(lin, cost, attach=False)
    F, P = lq.F, lq.P
    level = _ellipsoid_level(P, F, cons) * (1.0 - 1e-9)
    lo, hi = (np.asarray(a, float) for a in cons.state_box)
    axes = [np.linspace(a, b, int(round((b - a) / resolution)) + 1) for a, b in zip(lo, hi)]
    shape = tuple(len(a) for a in axes)
    box = cons.input_box

    def sat(x):
        u = F @ x
        return u if box is None else np.clip(u, *box)

    pts = np.array(np.meshgrid(*axes, indexing="ij")).reshape(len(axes), -1).T
    ok, xT = _batched_saturated_rollout(lin, cons, F, pts, horizon, h)
    ok &= np.einsum("ij,jk,ik->i", xT, P, xT) <= level
    lqr_ok = ok.reshape(shape)
    inside = lqr_ok.copy()
    first = np.zeros(shape + (lin.input_dim,))
    first.reshape(-1, lin.input_dim)[:] = np.array([sat(p) for p in pts])

    if ocp_fallback:
        n_coarse = max(1, int(round(horizon / ocp_step)))
        sub = max(1, int(round(ocp_step / h)))
        coarse = GridSpec(horizon, n_coarse, 1)
        fine = GridSpec(ocp_step, sub, n_coarse)
        opts = SolverOptions(max_outer=20, max_inner=2000)
        for idx in np.ndindex(*shape):
            if inside[idx]:
                continue
            x0 = np.array([a[i] for a, i in zip(axes, idx)])
            if not _node_feasible(cons, x0):
                continue
            try:
                sol = solve(OcpProblem(lin, cost, cons, coarse, x0), None, opts)
            except (InfeasibleOCPError, DivergenceError):
                continue
            tr = propagate(lin, cost, x0, np.repeat(sol.controls, sub, axis=0), fine)
            if tr.max_violation(cons) <= 0 and tr.final_state @ P @ tr.final_state <= level:
                inside[idx] = True
                first[idx] = sol.controls[0]
    for _ in range(int(margin)):
        eroded = inside.copy()
        for ax in range(inside.ndim):
            eroded &= np.roll(inside, 1, ax) & np.roll(inside, -1, ax)
            edge = [slice(None)] * inside.ndim
            edge[ax] = 0
            eroded[tuple(edge)] = False
            edge[ax] = -1
            eroded[tuple(edge)] = False
        inside = eroded
    return GridKernel(axes, inside, first, lqr_ok & inside, F, box)
