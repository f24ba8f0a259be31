"""Stability certificates for unconstrained sampled-data MPC.

Everything needed to decide whether a horizon ``N`` and sampling period
``delta`` guarantee the relaxed Lyapunov decrease

    V_T(x(delta)) <= V_T(x) - (1 - alpha) * int_0^delta l

on a sublevel set ``V_T^{-1}[0, C]``: the cost-controllability growth
``gamma``, the stage-cost floor ``M`` outside a neighbourhood of the
equilibrium, the short-horizon constant ``Cbar``, the resulting
suboptimality index ``alpha`` and the minimal horizon.  For linear-quadratic
problems the constants come from the algebraic Riccati equation.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import scipy.linalg as sla
from scipy.stats import qmc

from .errors import (ConstraintActiveError, ConstructionError, DomainError, EmptyRegionError,
                     NotStabilizableError)
from .integrate import propagate_feedback
from .model import ConstraintSpec, LinearSystem, StageCost, pointwise_min_cost
from .ocp import SolverOptions, value_function

__all__ = [
    "LqConstants",
    "Certificate",
    "KeeperBoundConstants",
    "KeeperBound",
    "HorizonReport",
    "CertificationReport",
    "solve_care",
    "decay_constants",
    "estimate_M",
    "estimate_C",
    "estimate_cbar",
    "check_condition",
    "min_horizon_bound",
    "horizon_formula_report",
    "verify_local_growth",
    "verify_segment_bound",
    "lqr_invariant_level",
    "lqr_invariant_radius",
    "long_horizon_value",
    "keeper_bound_constants",
    "bound_value_on_scaled_kernel",
    "boundary_distance_profile",
    "certify",
]

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------- Riccati

@dataclass
class LqConstants:
    """Riccati solution ``P``, LQR gain ``F`` (``u = F x``) and derived constants."""

    P: np.ndarray
    F: np.ndarray
    sigma_min_P: float
    sigma_max_P: float
    sigma_min_Q: float
    sigma_max_Q: float
    residual: float

    @property
    def gamma(self) -> float:
        return self.sigma_max_P / self.sigma_min_Q

    def cbar_of(self, delta: float) -> float:
        """Short-horizon constant ``delta * sigma_max(Q) / sigma_min(P)``."""
        return delta * self.sigma_max_Q / self.sigma_min_P

    def as_dict(self) -> dict:
        return {
            "P": self.P.tolist(),
            "F": self.F.tolist(),
            "sigma_min_P": self.sigma_min_P,
            "sigma_max_P": self.sigma_max_P,
            "sigma_min_Q": self.sigma_min_Q,
            "sigma_max_Q": self.sigma_max_Q,
            "gamma": self.gamma,
            "care_residual": self.residual,
        }


def decay_constants(Acl, eta_fraction: float = 0.9, samples: int = 2000):
    """``(Gamma, eta)`` with ``|exp(Acl t)| <= Gamma exp(-eta t)`` for ``t >= 0``.

    ``eta`` is ``eta_fraction`` times the spectral abscissa margin and
    ``Gamma`` is the sampled supremum of ``|exp(Acl t)| exp(eta t)`` (the
    product decays past the sampled window), inflated by ``1e-6``.
    """
    Acl = np.atleast_2d(np.asarray(Acl, float))
    abscissa = float(np.max(np.linalg.eigvals(Acl).real))
    if abscissa >= 0:
        raise ValueError("closed-loop matrix is not Hurwitz")
    eta = eta_fraction * -abscissa
    t_max = 40.0 / (-abscissa)
    ts = np.linspace(0.0, t_max, samples)
    step = sla.expm(Acl * (ts[1] - ts[0]))
    E = np.eye(Acl.shape[0])
    worst = 1.0
    for t in ts[1:]:
        E = E @ step
        worst = max(worst, np.linalg.norm(E, 2) * math.exp(eta * t))
    return worst * (1.0 + 1e-6), eta


def solve_care(lin: LinearSystem, cost: StageCost, attach: bool = True) -> LqConstants:
    """Solve ``A'P + PA - (PB + N) R^{-1} (B'P + N') + Q = 0``.

    The stable invariant subspace of the Hamiltonian matrix is extracted
    with an ordered real Schur decomposition.  A cross term ``N`` is folded
    in through ``A - B R^{-1} N'`` and ``Q - N R^{-1} N'``.

    With ``attach`` the gain and its decay constants are stored on ``lin``.

    Raises
    ------
    NotStabilizableError
        If the Hamiltonian has no ``n``-dimensional stable invariant
        subspace with invertible upper block, or ``P`` is not positive definite.
    """
    if not cost.is_quadratic:
        raise ValueError("solve_care needs a quadratic stage cost")
    A, B = np.asarray(lin.A), np.asarray(lin.B)
    Q, R, Nc = (np.asarray(a, float) for a in cost.lq_data)
    n = A.shape[0]
    Rinv = np.linalg.inv(R)
    At = A - B @ Rinv @ Nc.T
    Qt = Q - Nc @ Rinv @ Nc.T
    Ham = np.block([[At, -B @ Rinv @ B.T], [-Qt, -At.T]])
    T, Z, sdim = sla.schur(Ham, output="real", sort="lhp")
    eig = np.linalg.eigvals(Ham)
    if sdim != n or np.min(np.abs(eig.real)) < 1e-11:
        raise NotStabilizableError("Hamiltonian has eigenvalues on the imaginary axis "
                                   "or no stable subspace of full dimension")
    U11, U21 = Z[:n, :n], Z[n:, :n]
    if np.linalg.cond(U11) > 1e12:
        raise NotStabilizableError("(A, B) is not stabilizable: stable subspace is not a graph")
    P = np.linalg.solve(U11.T, U21.T).T
    P = 0.5 * (P + P.T)
    evP = np.linalg.eigvalsh(P)
    if evP[0] <= 0:
        raise NotStabilizableError("Riccati solution is not positive definite")
    F = -Rinv @ (B.T @ P + Nc.T)
    resid = At.T @ P + P @ At - P @ B @ Rinv @ B.T @ P + Qt
    evQ = np.linalg.eigvalsh(0.5 * (Q + Q.T))
    lq = LqConstants(P, F, float(evP[0]), float(evP[-1]), float(evQ[0]), float(evQ[-1]),
                     float(np.linalg.norm(resid)))
    if attach:
        lin.stabilizing_gain = F
        lin.decay_constants = decay_constants(A + B @ F)
    return lq


# --------------------------------------------------------------------------- constants

def _state_box(cons: ConstraintSpec):
    if cons.state_box is None:
        raise ValueError("a state box is required")
    return np.asarray(cons.state_box[0], float), np.asarray(cons.state_box[1], float)


def _sphere_directions(n: int, count: int) -> np.ndarray:
    if n == 1:
        return np.array([[1.0], [-1.0]])
    if n == 2:
        th = np.linspace(0.0, 2 * np.pi, count, endpoint=False)
        return np.column_stack([np.cos(th), np.sin(th)])
    pts = qmc.Sobol(n, scramble=True, seed=0).random(count) * 2 - 1
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def estimate_M(sys, cost: StageCost, cons: ConstraintSpec, neighborhood_radius: float,
               samples: int = 4096) -> float:
    """Lower bound ``inf { l*(x) : x in X, |x - x_eq| >= r }``.

    For quadratic costs without cross term whose least-curvature direction at
    radius ``r`` is admissible the analytic value ``sigma_min(Q) r^2`` is
    returned; otherwise the minimum over a deterministic sample (Sobol points
    of the state box, box corners and face midpoints, and the sphere of
    radius ``r``) is used.

    Raises
    ------
    EmptyRegionError
        When the ball covers ``X``.
    """
    r = float(neighborhood_radius)
    if r <= 0:
        raise ValueError("neighborhood radius must be positive")
    lo, hi = _state_box(cons)
    x_eq = np.asarray(sys.equilibrium_state, float)
    n = lo.size
    corners = np.array(np.meshgrid(*[[a, b] for a, b in zip(lo, hi)])).reshape(n, -1).T
    if np.max(np.linalg.norm(corners - x_eq, axis=1)) <= r:
        raise EmptyRegionError(f"X minus the ball of radius {r} is empty")
    if cost.is_quadratic:
        Q, R, Nc = cost.lq_data
        if not np.any(Nc):
            w, V = np.linalg.eigh(Q)
            for s in (1.0, -1.0):
                x = x_eq + s * r * V[:, 0]
                if cons.input_set_nonempty(x, tol=0.0):
                    return float(w[0] * r * r)
    pts = [corners]
    mids = []
    for i in range(n):
        for v in (lo[i], hi[i]):
            p = 0.5 * (lo + hi)
            p[i] = v
            mids.append(p)
    pts.append(np.array(mids))
    pts.append(lo + (hi - lo) * qmc.Sobol(n, scramble=False).random_base2(
        int(math.ceil(math.log2(max(samples, 2))))))
    pts.append(x_eq + r * _sphere_directions(n, 256))
    pts = np.vstack(pts)
    keep = np.linalg.norm(pts - x_eq, axis=1) >= r * (1 - 1e-12)
    best = math.inf
    for x in pts[keep]:
        if not cons.input_set_nonempty(x):
            continue
        best = min(best, pointwise_min_cost(x, cost, cons))
    if not math.isfinite(best):
        raise EmptyRegionError("no admissible sample outside the neighbourhood")
    return float(best)


def long_horizon_value(sys, cost, cons, x, T_long: float, h: float = 0.05,
                       options: Optional[SolverOptions] = None) -> float:
    """Proxy for ``V_infinity(x)``: the optimal value over ``[0, T_long]`` with RK4 step ``h``."""
    K = max(1, int(round(T_long / h)))
    return value_function(sys, cost, cons, x, T_long, delta=T_long, substeps=K, options=options)


def estimate_C(sys, cost, cons, K: Sequence, T: float, T_long: Optional[float] = None,
               margin: float = 0.1, h: float = 0.05,
               options: Optional[SolverOptions] = None) -> float:
    """Sublevel constant ``(1 + margin) * max_{x in K} V_long(x)``.

    ``V_long`` is the value over ``T_long`` (default ``10 T``).  Returns
    ``inf`` if a sample admits no admissible control; the offending sample
    is logged.
    """
    pts = np.atleast_2d(np.asarray(K, float))
    if pts.size == 0:
        raise ValueError("K must be nonempty")
    T_long = 10.0 * T if T_long is None else float(T_long)
    worst = 0.0
    for x in pts:
        v = long_horizon_value(sys, cost, cons, x, T_long, h, options)
        if not math.isfinite(v):
            log.warning("estimate_C: no admissible control from %s", x.tolist())
            return math.inf
        worst = max(worst, v)
    return (1.0 + margin) * worst


def estimate_cbar(sys, cost, cons, delta: float, samples: Sequence, substeps: int = 10,
                  options: Optional[SolverOptions] = None) -> float:
    """Empirical ``sup delta * l*(x) / V_delta(x)`` over ``samples`` (equilibrium skipped)."""
    x_eq = np.asarray(sys.equilibrium_state, float)
    worst = 0.0
    for x in np.atleast_2d(np.asarray(samples, float)):
        if np.linalg.norm(x - x_eq) < 1e-12:
            continue
        v = value_function(sys, cost, cons, x, delta, substeps=substeps, options=options)
        if not math.isfinite(v) or v <= 0:
            continue
        worst = max(worst, delta * pointwise_min_cost(x, cost, cons) / v)
    return worst


# --------------------------------------------------------------------------- condition

@dataclass(frozen=True)
class Certificate:
    delta: float
    N: int
    gamma: float
    M: float
    C: float
    Cbar: float

    @property
    def T(self) -> float:
        return self.N * self.delta

    @property
    def beta(self) -> float:
        return max(self.C / self.M, self.gamma)

    @property
    def ratio(self) -> float:
        return self.beta / (self.beta + self.delta)

    @property
    def alpha(self) -> float:
        return self.Cbar * (self.beta / self.delta) ** 2 * self.ratio ** (self.N - 1)

    @property
    def condition_lhs(self) -> float:
        lead = max(self.C / (self.M * self.delta), self.Cbar * (self.beta / self.delta) ** 2)
        return lead * self.ratio ** (self.N - 1)

    @property
    def passes(self) -> bool:
        return self.condition_lhs < 1.0

    def as_dict(self) -> dict:
        return {
            "delta": self.delta,
            "N": self.N,
            "T": self.T,
            "gamma": self.gamma,
            "M": self.M,
            "C": self.C,
            "beta": self.beta,
            "Cbar": self.Cbar,
            "condition_lhs": self.condition_lhs,
            "alpha": self.alpha,
            "passes": self.passes,
        }


def _check_inputs(gamma, M, C, Cbar, delta):
    for name, v in (("gamma", gamma), ("M", M), ("C", C), ("Cbar", Cbar), ("delta", delta)):
        if not (v > 0 and math.isfinite(v)):
            raise DomainError(f"{name} must be positive and finite, got {v}")
    beta = max(C / M, gamma)
    if delta >= beta:
        raise DomainError(f"delta = {delta} must be below beta = {beta:.6g}; decrease delta")
    return beta


def check_condition(gamma: float, M: float, C: float, Cbar: float, delta: float, N: int) -> Certificate:
    """Evaluate the horizon condition for one ``(delta, N)``.

    Raises
    ------
    DomainError
        For nonpositive inputs or ``delta >= beta``.
    """
    _check_inputs(gamma, M, C, Cbar, delta)
    if int(N) != N or N < 1:
        raise DomainError("N must be a positive integer")
    return Certificate(float(delta), int(N), float(gamma), float(M), float(C), float(Cbar))


def _scan_min_horizon(gamma, M, C, Cbar, delta, N_max=10 ** 9):
    beta = _check_inputs(gamma, M, C, Cbar, delta)
    lead = max(C / (M * delta), Cbar * (beta / delta) ** 2)
    if lead < 1.0:
        return 1
    # the lhs is strictly decreasing in N: start near the crossing and walk
    guess = 1 + int(math.log(lead) / math.log1p(delta / beta))
    N = max(1, guess - 2)
    while check_condition(gamma, M, C, Cbar, delta, N).passes:
        if N == 1:
            return 1
        N -= 1
    while not check_condition(gamma, M, C, Cbar, delta, N).passes:
        N += 1
        if N > N_max:
            raise DomainError("no passing horizon below N_max")
    return N


def _closed_form(gamma, M, C, Cbar, delta, combine):
    beta = max(C / M, gamma)
    num = (math.log(delta) + math.log(M) - math.log(C), 2 * math.log(delta / beta) - math.log(Cbar))
    rhs = combine(num) / (math.log(beta) - math.log(beta + delta)) + 1.0
    return math.floor(rhs) + 1 if rhs >= 1 else 1


@dataclass(frozen=True)
class HorizonReport:
    """Minimal horizon from the direct scan and from the two closed forms."""

    scan: int
    printed: int
    corrected: int

    @property
    def consistent(self) -> bool:
        return self.printed == self.scan

    def as_dict(self) -> dict:
        return {"scan": self.scan, "closed_form_max": self.printed,
                "closed_form_min": self.corrected, "consistent": self.consistent}


def horizon_formula_report(gamma, M, C, Cbar, delta) -> HorizonReport:
    """Compare the scan with the log-form bound written with ``max`` and with ``min``.

    The condition ``lead * r^(N-1) < 1`` with ``r < 1`` gives
    ``N - 1 > min(numerators) / log(r)``; the variant taking the ``max`` of
    the numerators is kept for traceability and generally undershoots.
    """
    scan = _scan_min_horizon(gamma, M, C, Cbar, delta)
    return HorizonReport(scan, _closed_form(gamma, M, C, Cbar, delta, max),
                         _closed_form(gamma, M, C, Cbar, delta, min))


def min_horizon_bound(gamma: float, M: float, C: float, Cbar: float, delta: float) -> int:
    """Smallest ``N`` satisfying the horizon condition (the scan is authoritative).

    A disagreement with the max-form closed expression is logged as a warning.
    """
    rep = horizon_formula_report(gamma, M, C, Cbar, delta)
    if not rep.consistent:
        log.warning("closed-form horizon bound %d (max form) differs from scan %d "
                    "(min form gives %d); using the scan", rep.printed, rep.scan, rep.corrected)
    return rep.scan


# --------------------------------------------------------------------------- LQ checks

def lqr_invariant_level(lq: LqConstants, cons: ConstraintSpec) -> float:
    """Largest ``c`` with ``{x' P x <= c}`` inside ``X`` and ``F x`` admissible there."""
    if cons.affine is None:
        raise ValueError("affine constraints required")
    Gx, Gu, g0 = (np.asarray(a) for a in cons.affine)
    W = Gx + Gu @ lq.F
    b = -g0
    if np.any(b <= 0):
        raise DomainError("equilibrium is not in the interior of the constraint set")
    Pinv = np.linalg.inv(lq.P)
    quad = np.einsum("ij,jk,ik->i", W, Pinv, W)
    ok = quad > 0
    return float(np.min(b[ok] ** 2 / quad[ok]))


def lqr_invariant_radius(lq: LqConstants, cons: ConstraintSpec) -> float:
    """Radius of the largest ball inside the LQR-invariant ellipsoid."""
    return math.sqrt(lqr_invariant_level(lq, cons) / lq.sigma_max_P)


def _lqr_rollout(lin, cost, F, x0, t_end, h):
    return propagate_feedback(lin, cost, x0, lambda t, x: F @ x, t_end, h)


def verify_local_growth(lq: LqConstants, sys, cost, cons, radius: float, samples: int = 64,
                    h: float = 0.02) -> float:
    """Worst ``V_LQR(x) / l*(x)`` over ``|x| <= radius`` (sphere and half sphere).

    Each LQR rollout is also compared against ``x' P x`` (2 %).

    Raises
    ------
    ConstraintActiveError
        If a rollout touches a constraint (the ball is not a valid neighbourhood).
    """
    _, eta = decay_constants(np.asarray(sys.A) + np.asarray(sys.B) @ lq.F)
    t_end = 30.0 / eta
    worst = 0.0
    dirs = _sphere_directions(sys.state_dim, samples)
    for rad in (radius, 0.5 * radius):
        for d in dirs:
            x0 = rad * d
            tr = _lqr_rollout(sys, cost, lq.F, x0, t_end, h)
            if tr.max_violation(cons) > 0:
                raise ConstraintActiveError(f"LQR rollout from {x0.tolist()} meets a constraint; "
                                            "reduce the radius")
            v = tr.cost
            vp = float(x0 @ lq.P @ x0)
            if abs(v - vp) > 0.02 * vp:
                raise ConstructionError(f"LQR rollout cost {v:.6g} disagrees with x'Px = {vp:.6g}")
            worst = max(worst, v / pointwise_min_cost(x0, cost, cons))
    return worst


def verify_segment_bound(lq: LqConstants, sys, cost, cons, T: float, C: Optional[float], deltas: Sequence[float],
              samples: Sequence, cbar: Optional[float] = None, substeps: int = 10,
              options: Optional[SolverOptions] = None) -> float:
    """Worst ratio ``delta l*(x) / (Cbar V_delta(x))`` over samples and ``deltas``.

    ``Cbar`` defaults to the Riccati constant ``lq.cbar_of(delta)``; pass a
    number to test another one.  Samples with ``V_T > C`` are dropped when
    ``C`` is given.  A ratio above ``1.05`` falsifies the constant.
    """
    pts = np.atleast_2d(np.asarray(samples, float))
    if C is not None:
        Tg = int(max(1, round(T / 0.05)))
        pts = np.array([x for x in pts
                        if value_function(sys, cost, cons, x, T, delta=T, substeps=Tg,
                                          options=options) <= C])
    worst = 0.0
    for delta in deltas:
        cb = lq.cbar_of(delta) if cbar is None else float(cbar)
        for x in pts:
            lstar = pointwise_min_cost(x, cost, cons)
            if lstar == 0.0:
                continue
            v = value_function(sys, cost, cons, x, delta, substeps=substeps, options=options)
            worst = max(worst, delta * lstar / (cb * v) if v > 0 else math.inf)
    return worst


# --------------------------------------------------------------------------- keeper/LQR mixture bound

@dataclass(frozen=True)
class KeeperBoundConstants:
    lam: float
    L: float
    d_max: float
    d_min: float
    norm_F: float
    Gamma: float
    mu: Optional[float]
    epsilon: Optional[float]
    m: int

    @property
    def direct(self) -> bool:
        return self.lam * self.L <= 1.0

    def m_of(self, lam: Optional[float] = None) -> int:
        """Smallest ``m >= 0`` with ``epsilon^m lam L < 1``."""
        lam = self.lam if lam is None else lam
        if lam * self.L <= 1.0:
            return 0
        return max(0, math.floor(math.log(lam * self.L) / -math.log(self.epsilon)) + 1)


@dataclass
class KeeperBound:
    """Measured bound ``m * tbar * beta_B + alpha_B`` on ``V_infinity`` over ``lam * A``."""

    constants: KeeperBoundConstants
    bound: float
    sup_cost: float
    tbar: float
    beta_B: float
    alpha_B: float
    samples: int

    def __float__(self) -> float:
        return self.bound

    def as_dict(self) -> dict:
        c = self.constants
        return {"lambda": c.lam, "L": c.L, "d_max": c.d_max, "d_min": c.d_min, "mu": c.mu,
                "epsilon": c.epsilon, "m": c.m, "tbar": self.tbar, "beta_B": self.beta_B,
                "alpha_B": self.alpha_B, "bound": self.bound, "sup_cost": self.sup_cost,
                "samples": self.samples}


def _box_distances(cons):
    lo, hi = _state_box(cons)
    corners = np.array(np.meshgrid(*[[a, b] for a, b in zip(lo, hi)])).reshape(lo.size, -1).T
    d_max = float(np.max(np.linalg.norm(corners, axis=1)))
    d_min = float(np.min(np.concatenate([np.abs(lo), np.abs(hi)])))
    return d_max, d_min


def keeper_bound_constants(lin: LinearSystem, cons, lam: float) -> KeeperBoundConstants:
    if lin.stabilizing_gain is None or lin.decay_constants is None:
        raise ValueError("the system needs a stabilizing gain with decay constants")
    F = np.asarray(lin.stabilizing_gain)
    Gamma, _ = lin.decay_constants
    d_max, d_min = _box_distances(cons)
    nF = float(np.linalg.norm(F, 2))
    L = (1.0 + nF) * Gamma * d_max / d_min
    if lam * L <= 1.0:
        return KeeperBoundConstants(lam, L, d_max, d_min, nF, Gamma, None, None, 0)
    mu = (L * lam - 1.0) / (L * lam - lam)
    eps = 1.0 - (1.0 - lam) / (lam * L)
    c = KeeperBoundConstants(lam, L, d_max, d_min, nF, Gamma, mu, eps, 0)
    return KeeperBoundConstants(lam, L, d_max, d_min, nF, Gamma, mu, eps, c.m_of())


def _kernel_samples(kernel, cons, per_axis):
    lo, hi = _state_box(cons)
    axes = [np.linspace(a, b, per_axis) for a, b in zip(lo, hi)]
    grid = np.array(np.meshgrid(*axes, indexing="ij")).reshape(lo.size, -1).T
    return np.array([x for x in grid if kernel.contains(x)])


def _rk4_feedback(A, B, x, ufun, h):
    """RK4 step of ``x' = A x + B ufun(x)``; returns the next state, stage states and stage inputs."""
    zs, us, ks = [], [], []
    for a in (0.0, 0.5, 0.5, 1.0):
        z = x + a * h * ks[-1] if ks else x
        u = np.atleast_1d(ufun(z))
        zs.append(z)
        us.append(u)
        ks.append(A @ z + B @ u)
    return x + h / 6.0 * (ks[0] + 2 * ks[1] + 2 * ks[2] + ks[3]), zs, us


def bound_value_on_scaled_kernel(lin: LinearSystem, cons, cost, lam: float, kernel, per_axis: int = 9,
                           h: float = 0.02, block_cap: float = 60.0, tol: float = 1e-6) -> KeeperBound:
    """Constructive bound on ``V_infinity`` over ``lam * A`` by the keeper/LQR mixture.

    From each sample ``x0`` of ``lam * A`` the control
    ``mu * u_lam + (1 - mu) * u_F`` is applied, where ``u_lam`` is the
    ``lam``-scaled kernel keeper and ``u_F`` the LQR input along the LQR
    trajectory from the block's start.  Each block ends when the state enters
    ``epsilon * s * A`` (``s`` the current scale); after ``m`` blocks the LQR
    feedback finishes the job.  When ``lam L <= 1`` LQR alone is used.

    Raises
    ------
    ConstructionError
        If a rollout violates a constraint or a block does not terminate.
    """
    if not 0.0 <= lam < 1.0:
        raise ValueError("lambda must lie in [0, 1)")
    c = keeper_bound_constants(lin, cons, lam)
    if lam == 0.0:
        return KeeperBound(c, 0.0, 0.0, 0.0, 0.0, 0.0, 1)
    F = np.asarray(lin.stabilizing_gain)
    A, B = np.asarray(lin.A), np.asarray(lin.B)
    tail_t = 40.0 / lin.decay_constants[1]
    pts = lam * _kernel_samples(kernel, cons, per_axis)

    def tail(x):
        tr = _lqr_rollout(lin, cost, F, x, tail_t, h)
        if tr.max_violation(cons) > tol:
            raise ConstructionError(f"LQR tail from {x.tolist()} violates constraints")
        return tr.cost

    if c.direct:
        costs = [tail(x) for x in pts]
        a = max(costs)
        return KeeperBound(c, a, a, 0.0, 0.0, a, len(pts))

    mu, eps = c.mu, c.epsilon
    tbar = beta_B = alpha_B = sup_cost = 0.0
    for x0 in pts:
        total = 0.0
        x = x0.copy()
        s = lam
        for _ in range(c.m):
            xk = x.copy()  # keeper trajectory
            xf = x.copy()  # LQR trajectory
            t = 0.0
            inner = s * eps
            while not kernel.contains(x / inner):
                # both trajectories are advanced separately; by linearity their
                # mixture is the trajectory of the mixed input
                xk_next, zk, uk = _rk4_feedback(A, B, xk, lambda z: s * kernel.keeper(z / s), h)
                xf_next, zf, uf = _rk4_feedback(A, B, xf, lambda z: F @ z, h)
                rate = 0.0
                for wi, a_, b_, ua, ub in zip((1.0, 2.0, 2.0, 1.0), zk, zf, uk, uf):
                    lv = cost(mu * a_ + (1 - mu) * b_, mu * ua + (1 - mu) * ub)
                    rate += wi * lv
                    beta_B = max(beta_B, lv)
                total += h / 6.0 * rate
                if np.max(cons.g(x, mu * uk[0] + (1 - mu) * uf[0])) > tol:
                    raise ConstructionError(f"mixed rollout from {x0.tolist()} violates constraints")
                xk, xf = xk_next, xf_next
                x = mu * xk + (1 - mu) * xf
                t += h
                if t > block_cap:
                    raise ConstructionError(f"block from {x0.tolist()} did not reach the inner set")
            tbar = max(tbar, t)
            s = inner
        a = tail(x)
        alpha_B = max(alpha_B, a)
        sup_cost = max(sup_cost, total + a)
    bound = c.m * tbar * beta_B + alpha_B
    return KeeperBound(c, bound, sup_cost, tbar, beta_B, alpha_B, len(pts))


# --------------------------------------------------------------------------- distance profile

def boundary_distance_profile(lin, cons, cost, kernel, distances=(0.2, 0.1, 0.05, 0.025), rays: int = 24,
                       T_long: float = 8.0, h: float = 0.1,
                       options: Optional[SolverOptions] = None) -> List[Dict[str, float]]:
    """Sup of long-horizon values on the level sets ``{x in A: dist(x, boundary) = d}``.

    Level-set points are found by bisection along ``rays`` directions from
    the equilibrium.  Each row holds ``dist``, ``sup_V`` and ``product``;
    ``D_hat`` (the largest product) is repeated on every row.
    """
    from .viability import distance_to_boundary

    dirs = _sphere_directions(lin.state_dim, rays)
    rows = []
    for d in distances:
        sup_v = 0.0
        for u in dirs:
            # find s_max on the boundary along the ray, then bisect for dist == d
            lo_s, hi_s = 0.0, 1.0
            while kernel.contains(hi_s * u):
                hi_s *= 2.0
            for _ in range(60):
                mid = 0.5 * (lo_s + hi_s)
                if kernel.contains(mid * u):
                    lo_s = mid
                else:
                    hi_s = mid
            s_edge = lo_s
            if distance_to_boundary(kernel, [np.zeros(lin.state_dim)]) < d:
                continue
            a, b = 0.0, s_edge
            for _ in range(60):
                mid = 0.5 * (a + b)
                if distance_to_boundary(kernel, [mid * u]) >= d:
                    a = mid
                else:
                    b = mid
            x = a * u
            sup_v = max(sup_v, long_horizon_value(lin, cost, cons, x, T_long, h, options))
        rows.append({"dist": float(d), "sup_V": sup_v, "product": float(d) * sup_v})
    D_hat = max((r["product"] for r in rows), default=0.0)
    for r in rows:
        r["D_hat"] = D_hat
    return rows


# --------------------------------------------------------------------------- pipeline

@dataclass
class CertificationReport:
    lq: LqConstants
    radius: float
    M: float
    C: float
    C_estimate: float
    cbar_riccati: float
    cbar_empirical: float
    Cbar: float
    delta: float
    horizon: HorizonReport
    certificates: List[Certificate] = field(default_factory=list)

    @property
    def N_bar(self) -> int:
        return self.horizon.scan

    @property
    def certificate(self) -> Certificate:
        return check_condition(self.lq.gamma, self.M, self.C, self.Cbar, self.delta, self.N_bar)

    def as_dict(self) -> dict:
        return {
            "lq": self.lq.as_dict(),
            "neighborhood_radius": self.radius,
            "M": self.M,
            "C": self.C,
            "C_estimate": self.C_estimate,
            "Cbar_riccati": self.cbar_riccati,
            "Cbar_empirical": self.cbar_empirical,
            "Cbar": self.Cbar,
            "delta": self.delta,
            "horizon": self.horizon.as_dict(),
            "N_bar": self.N_bar,
            "certificate": self.certificate.as_dict(),
            "scan": [c.as_dict() for c in self.certificates],
        }


def cbar_probe_points(lq: LqConstants, cons, count: int = 16) -> np.ndarray:
    """Directions on a small sphere inside the LQR-invariant ellipsoid, plus half that radius."""
    r = 0.5 * lqr_invariant_radius(lq, cons)
    d = _sphere_directions(lq.P.shape[0], count)
    return np.vstack([r * d, 0.5 * r * d])


def certify(lin: LinearSystem, cost: StageCost, cons: ConstraintSpec, K: Sequence, delta: float,
            N_range: Optional[Sequence[int]] = None, radius: Optional[float] = None,
            T_long: float = 10.0, cbar_margin: float = 0.05, substeps: int = 10,
            options: Optional[SolverOptions] = None) -> CertificationReport:
    """Riccati -> M -> C -> Cbar -> horizon condition for an LQ problem.

    ``radius`` defaults to the largest ball inside the LQR-invariant
    ellipsoid.  ``C`` is floored at ``sigma_max(P) r^2`` (so the
    neighbourhood lies in the sublevel set) and at ``1.01 M delta``.
    ``Cbar`` is the larger of the Riccati constant and the empirical
    supremum (inflated by ``cbar_margin``).
    """
    lq = solve_care(lin, cost)
    r = lqr_invariant_radius(lq, cons) if radius is None else float(radius)
    M = estimate_M(lin, cost, cons, r)
    C_est = estimate_C(lin, cost, cons, K, T_long / 10.0, T_long=T_long, options=options)
    C = max(C_est, lq.sigma_max_P * r * r, 1.01 * M * delta)
    cb_r = lq.cbar_of(delta)
    cb_e = estimate_cbar(lin, cost, cons, delta, cbar_probe_points(lq, cons), substeps, options)
    Cbar = max(cb_r, (1.0 + cbar_margin) * cb_e)
    rep = horizon_formula_report(lq.gamma, M, C, Cbar, delta)
    if not rep.consistent:
        log.warning("closed-form horizon bound %d (max form) differs from scan %d", rep.printed, rep.scan)
    Ns = list(N_range) if N_range is not None else sorted({1, max(1, rep.scan - 1), rep.scan, rep.scan + 1})
    certs = [check_condition(lq.gamma, M, C, Cbar, delta, N) for N in Ns]
    return CertificationReport(lq, r, M, C, C_est, cb_r, cb_e, Cbar, float(delta), rep, certs)
