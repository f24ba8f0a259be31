"""Direct transcription of the finite-horizon optimal control problem.

Decision variables are the piecewise-constant inputs on the RK4 substep
grid.  Input boxes are enforced by projection; every other component of
``g`` is imposed at the nodes ``(x_j, u_j)``, ``j < K`` and ``(x_K, u_{K-1})``
through an augmented Lagrangian (PHR form for inequalities).  Inner problems
are solved by spectral projected gradient with nonmonotone Armijo
backtracking.

Two transcriptions compute the same discrete objective:

* :class:`ShootingTranscription`: general nonlinear systems; the gradient
  is the reverse (adjoint) sweep through the exact RK4 recursion.
* :class:`CondensedTranscription`: linear dynamics, quadratic cost and
  affine constraints; the RK4 recursion is unrolled once into matrices, so
  the objective is an explicit quadratic in the inputs.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from .errors import DivergenceError, InfeasibleOCPError
from .integrate import GridSpec, propagate, rk4_step
from .model import ConstraintSpec, ControlSystem, LinearSystem, StageCost

__all__ = [
    "SolverOptions",
    "OcpProblem",
    "OcpSolution",
    "ShootingTranscription",
    "CondensedTranscription",
    "make_transcription",
    "solve",
    "value_function",
    "gradient_check",
    "spg",
]


@dataclass(frozen=True)
class SolverOptions:
    feas_tol: float = 1e-6
    grad_tol: float = 1e-6
    infeasible_tol: float = 1e-3
    rho_init: float = 10.0
    rho_factor: float = 10.0
    rho_max: float = 1e8
    max_outer: int = 40
    max_inner: int = 3000
    armijo: float = 1e-4
    memory: int = 8
    condensed: bool = True
    polish: bool = True
    constraint_nodes: str = "substep"

    def __post_init__(self):
        if self.constraint_nodes not in ("substep", "sample"):
            raise ValueError("constraint_nodes must be 'substep' or 'sample'")

    @classmethod
    def from_mapping(cls, mapping) -> "SolverOptions":
        """Build from string-valued ``key = value`` pairs (e.g. a config section)."""
        kwargs = {}
        for name, f in cls.__dataclass_fields__.items():
            if name not in mapping:
                continue
            raw = mapping[name]
            if isinstance(f.default, bool):
                kwargs[name] = str(raw).strip().lower() in ("1", "true", "yes", "on")
            elif isinstance(f.default, str):
                kwargs[name] = str(raw).strip()
            else:
                kwargs[name] = type(f.default)(float(raw)) if isinstance(f.default, int) else float(raw)
        return cls(**kwargs)


@dataclass(frozen=True)
class OcpProblem:
    sys: ControlSystem
    cost: StageCost
    cons: ConstraintSpec
    grid: GridSpec
    x0: np.ndarray

    def __post_init__(self):
        x0 = np.asarray(self.x0, float).reshape(self.sys.state_dim)
        object.__setattr__(self, "x0", x0)
        if not self.cons.input_set_nonempty(x0, tol=1e-6):
            raise InfeasibleOCPError(f"initial state {x0} is outside X")


@dataclass
class OcpSolution:
    controls: np.ndarray
    value: float
    max_violation: float
    iterations: int
    converged: bool
    multipliers: np.ndarray
    projected_gradient: float = math.nan
    outer_iterations: int = 0
    rho: float = math.nan
    transcription: str = ""

    def diagnostics(self) -> dict:
        return {
            "value": self.value,
            "max_violation": self.max_violation,
            "iterations": self.iterations,
            "outer_iterations": self.outer_iterations,
            "converged": self.converged,
            "projected_gradient": self.projected_gradient,
            "rho": self.rho,
            "transcription": self.transcription,
        }

    def diagnostics_json(self) -> str:
        return json.dumps(self.diagnostics(), sort_keys=True)


def _node_inputs(K):
    """Index of the input paired with each node ``0..K``."""
    return np.minimum(np.arange(K + 1), K - 1)


def constraint_nodes(grid: GridSpec, mode: str = "substep") -> np.ndarray:
    """Nodes where path constraints are imposed: every RK4 node or only sampling instants."""
    if mode == "substep":
        return np.arange(grid.n_steps + 1)
    return np.arange(0, grid.n_steps + 1, grid.substeps)


class ShootingTranscription:
    """Single-shooting RK4 transcription with a discrete-adjoint gradient."""

    name = "shooting"

    def __init__(self, problem: OcpProblem, nodes: str = "substep"):
        self.problem = problem
        self.rows = problem.cons.state_rows()
        self.K = problem.grid.n_steps
        self.m = problem.sys.input_dim
        self.nodes = constraint_nodes(problem.grid, nodes)

    @property
    def n_constraints(self):
        return (len(self.nodes), len(self.rows))

    def _forward(self, U):
        p = self.problem
        h = p.grid.h
        K = self.K
        xs = np.empty((K + 1, p.sys.state_dim))
        stages = []
        x = p.x0.copy()
        xs[0] = x
        J = 0.0
        for j in range(K):
            x, dc, zs = rk4_step(p.sys, p.cost, x, U[j], h)
            if not np.all(np.isfinite(x)) or np.linalg.norm(x) > 1e9:
                raise DivergenceError("state diverged during shooting")
            xs[j + 1] = x
            stages.append(zs)
            J += dc
        return J, xs, stages

    def constraints(self, U, xs=None):
        if xs is None:
            _, xs, _ = self._forward(U)
        idx = _node_inputs(self.K)
        g = self.problem.cons.g
        return np.array([g(xs[j], U[idx[j]])[self.rows] for j in self.nodes])

    def objective(self, U) -> float:
        return self._forward(U)[0]

    def phi_grad(self, U, lam, rho, need_grad=True):
        """Augmented Lagrangian value, gradient and node constraints."""
        J, xs, stages = self._forward(U)
        C = self.constraints(U, xs)
        w = np.maximum(0.0, lam + rho * C)
        phi = J + (np.sum(w * w) - np.sum(lam * lam)) / (2.0 * rho)
        if not need_grad:
            return phi, None, C
        w_full = np.zeros((self.K + 1, len(self.rows)))
        w_full[self.nodes] = w
        return phi, self._adjoint(U, xs, stages, w_full), C

    def gradient(self, U, lam=None, rho=1.0):
        if lam is None:
            lam = np.zeros(self.n_constraints)
        return self.phi_grad(U, lam, rho)[1]

    def _adjoint(self, U, xs, stages, w):
        p = self.problem
        h = p.grid.h
        K = self.K
        sysj = p.sys.jacobian
        costg = p.cost.gradient
        consj = p.cons.jacobian
        rows = self.rows
        G = np.zeros_like(U)
        # node K pairs x_K with u_{K-1}
        gx, gu = consj(xs[K], U[K - 1])
        xb = gx[rows].T @ w[K]
        G[K - 1] += gu[rows].T @ w[K]
        c1, c2 = h / 6.0, h / 3.0
        for j in range(K - 1, -1, -1):
            u = U[j]
            z1, z2, z3, z4 = stages[j]
            ub = np.zeros(self.m)
            a = xb
            fx, fu = sysj(z4, u)
            lx, lu = costg(z4, u)
            kb = c1 * a
            zb = fx.T @ kb + c1 * lx
            ub += fu.T @ kb + c1 * lu
            xnew = a + zb
            kb = c2 * a + h * zb
            fx, fu = sysj(z3, u)
            lx, lu = costg(z3, u)
            zb = fx.T @ kb + c2 * lx
            ub += fu.T @ kb + c2 * lu
            xnew += zb
            kb = c2 * a + 0.5 * h * zb
            fx, fu = sysj(z2, u)
            lx, lu = costg(z2, u)
            zb = fx.T @ kb + c2 * lx
            ub += fu.T @ kb + c2 * lu
            xnew += zb
            kb = c1 * a + 0.5 * h * zb
            fx, fu = sysj(z1, u)
            lx, lu = costg(z1, u)
            zb = fx.T @ kb + c1 * lx
            ub += fu.T @ kb + c1 * lu
            xnew += zb
            gx, gu = consj(xs[j], u)
            xb = xnew + gx[rows].T @ w[j]
            G[j] += ub + gu[rows].T @ w[j]
        return G


@lru_cache(maxsize=32)
def _condensed_matrices(sys: LinearSystem, cost: StageCost, cons: ConstraintSpec, grid: GridSpec,
                        nodes: str = "substep"):
    n, m = sys.state_dim, sys.input_dim
    h = grid.h
    K = grid.n_steps
    A, B = np.asarray(sys.A), np.asarray(sys.B)
    Q, R, N = (np.asarray(a) for a in cost.lq_data)
    I = np.eye(n)
    # RK4 stage points as linear maps of (x, u)
    S1 = np.hstack([I, np.zeros((n, m))])
    fmap = np.hstack([A, B])
    k1 = fmap
    S2 = S1 + 0.5 * h * k1
    k2 = A @ S2 + np.hstack([np.zeros((n, n)), B])
    S3 = S1 + 0.5 * h * k2
    k3 = A @ S3 + np.hstack([np.zeros((n, n)), B])
    S4 = S1 + h * k3
    k4 = A @ S4 + np.hstack([np.zeros((n, n)), B])
    step = S1 + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    Phi, Psi = step[:, :n], step[:, n:]
    L = np.block([[Q, N], [N.T, R]])
    W = np.zeros((n + m, n + m))
    lift = np.vstack([np.zeros((n, n + m)), np.hstack([np.zeros((m, n)), np.eye(m)])])
    for wgt, S in ((1.0, S1), (2.0, S2), (2.0, S3), (1.0, S4)):
        Sa = np.vstack([S, np.zeros((m, n + m))]) + lift
        W += (h / 6.0) * wgt * Sa.T @ L @ Sa
    Wxx, Wxu, Wuu = W[:n, :n], W[:n, n:], W[n:, n:]
    # x_j = Sx[j] x0 + Su[j] U
    Sx = np.empty((K + 1, n, n))
    Su = np.zeros((K + 1, n, K * m))
    Sx[0] = I
    for j in range(K):
        Sx[j + 1] = Phi @ Sx[j]
        Su[j + 1] = Phi @ Su[j]
        Su[j + 1][:, j * m:(j + 1) * m] += Psi
    H = np.zeros((K * m, K * m))
    Fx = np.zeros((K * m, n))
    Hxx = np.zeros((n, n))
    for j in range(K):
        sl = slice(j * m, (j + 1) * m)
        Suj = Su[j]
        # [x;u]' W [x;u] with x = Sx x0 + Su U, u = E_j U
        H += 2.0 * Suj.T @ Wxx @ Suj
        H[:, sl] += 2.0 * Suj.T @ Wxu
        H[sl, :] += 2.0 * Wxu.T @ Suj
        H[sl, sl] += 2.0 * Wuu
        Fx += 2.0 * Suj.T @ Wxx @ Sx[j]
        Fx[sl] += 2.0 * Wxu.T @ Sx[j]
        Hxx += 2.0 * Sx[j].T @ Wxx @ Sx[j]
    H = 0.5 * (H + H.T)
    rows = cons.state_rows()
    Gx, Gu, c = (np.asarray(a) for a in cons.affine)
    Gx, Gu, c = Gx[rows], Gu[rows], c[rows]
    r = len(rows)
    sel = constraint_nodes(grid, nodes)
    Gbig = np.zeros((len(sel) * r, K * m))
    Cx = np.zeros((len(sel) * r, n))
    idx = _node_inputs(K)
    for i, j in enumerate(sel):
        blk = slice(i * r, (i + 1) * r)
        Gbig[blk] = Gx @ Su[j]
        Gbig[blk, idx[j] * m:(idx[j] + 1) * m] += Gu
        Cx[blk] = Gx @ Sx[j]
    c0 = np.tile(c, len(sel))
    for a in (H, Fx, Hxx, Gbig, Cx, c0, Sx, Su):
        a.setflags(write=False)
    return H, Fx, Hxx, Gbig, Cx, c0, Sx, Su, r


class CondensedTranscription:
    """Explicit-quadratic form of the same RK4 transcription (LQ problems only)."""

    name = "condensed"

    def __init__(self, problem: OcpProblem, nodes: str = "substep"):
        self.problem = problem
        self.K = problem.grid.n_steps
        self.m = problem.sys.input_dim
        self.nodes = constraint_nodes(problem.grid, nodes)
        H, Fx, Hxx, G, Cx, c0, Sx, Su, r = _condensed_matrices(
            problem.sys, problem.cost, problem.cons, problem.grid, nodes)
        self.H, self.G, self.Sx, self.Su, self.r = H, G, Sx, Su, r
        x0 = problem.x0
        self.q = Fx @ x0
        self.j0 = 0.5 * x0 @ Hxx @ x0
        self.d = Cx @ x0 + c0

    @staticmethod
    def applicable(problem: OcpProblem) -> bool:
        sys, cost, cons = problem.sys, problem.cost, problem.cons
        if not isinstance(sys, LinearSystem) or not cost.is_quadratic or cons.affine is None:
            return False
        if cost.equilibrium_state is not None and np.any(cost.equilibrium_state):
            return False
        if cost.equilibrium_input is not None and np.any(cost.equilibrium_input):
            return False
        return True

    @property
    def n_constraints(self):
        return (len(self.nodes), self.r)

    def objective(self, U) -> float:
        u = U.ravel()
        return float(0.5 * u @ (self.H @ u) + self.q @ u + self.j0)

    def constraints(self, U):
        return (self.G @ U.ravel() + self.d).reshape(self.n_constraints)

    def states(self, U):
        return self.Sx @ self.problem.x0 + self.Su @ U.ravel()

    def phi_grad(self, U, lam, rho, need_grad=True):
        u = U.ravel()
        Hu = self.H @ u
        J = 0.5 * u @ Hu + self.q @ u + self.j0
        c = self.G @ u + self.d
        lamf = lam.ravel()
        w = np.maximum(0.0, lamf + rho * c)
        phi = J + (w @ w - lamf @ lamf) / (2.0 * rho)
        C = c.reshape(self.n_constraints)
        if not need_grad:
            return phi, None, C
        g = Hu + self.q + self.G.T @ w
        return phi, g.reshape(U.shape), C

    def gradient(self, U, lam=None, rho=1.0):
        if lam is None:
            lam = np.zeros(self.n_constraints)
        return self.phi_grad(U, lam, rho)[1]

    def polish(self, U, lam, tol=1e-9, max_rounds=20):
        """Refine an approximate minimiser by solving the KKT system on a guessed active set.

        Starting from the constraints that are nearly active at ``U`` (or carry
        a positive multiplier), a primal-dual active-set loop adds violated rows
        and drops rows with negative multipliers.  Returns ``(U, lam)`` of the
        exact QP solution, or ``None`` when the loop does not settle.
        """
        box = self.problem.cons.input_box
        u = U.ravel().copy()
        nu = u.size
        if box is not None:
            lo = np.tile(box[0], self.K)
            hi = np.tile(box[1], self.K)
        else:
            lo = np.full(nu, -np.inf)
            hi = np.full(nu, np.inf)
        H, G, d, q = self.H, self.G, self.d, self.q
        c = G @ u + d
        act = c > -1e-6
        at_lo = u <= lo + 1e-8
        at_hi = u >= hi - 1e-8
        for _ in range(max_rounds):
            fixed = at_lo | at_hi
            free = ~fixed
            ub = np.where(at_lo, lo, np.where(at_hi, hi, 0.0))
            nf, na = int(free.sum()), int(act.sum())
            Ga = G[act]
            kkt = np.block([[H[np.ix_(free, free)], Ga[:, free].T],
                            [Ga[:, free], np.zeros((na, na))]])
            rhs = np.concatenate([-(q[free] + H[np.ix_(free, fixed)] @ ub[fixed]),
                                  -(d[act] + Ga[:, fixed] @ ub[fixed])])
            sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
            u_new = ub.copy()
            u_new[free] = sol[:nf]
            mu = np.zeros(G.shape[0])
            mu[act] = sol[nf:]
            grad = H @ u_new + q + G.T @ mu
            c = G @ u_new + d
            add_rows = ~act & (c > tol)
            drop_rows = act & (mu < -tol)
            below = free & (u_new < lo - tol)
            above = free & (u_new > hi + tol)
            # a bound stays active only if the gradient pushes against it
            release_lo = at_lo & (grad < -tol)
            release_hi = at_hi & (grad > tol)
            if not (add_rows.any() or drop_rows.any() or below.any() or above.any()
                    or release_lo.any() or release_hi.any()):
                if na and np.max(np.abs(c[act])) > 1e-7:
                    return None  # inconsistent active set
                return u_new.reshape(U.shape), np.maximum(mu, 0.0).reshape(self.n_constraints)
            act = (act | add_rows) & ~drop_rows
            at_lo = (at_lo & ~release_lo) | below
            at_hi = (at_hi & ~release_hi) | above
        return None



def make_transcription(problem: OcpProblem, condensed: bool = True, nodes: str = "substep"):
    if condensed and CondensedTranscription.applicable(problem):
        return CondensedTranscription(problem, nodes)
    return ShootingTranscription(problem, nodes)


def spg(fun, x, project, tol, max_iter, memory=8, armijo=1e-4):
    """Spectral projected gradient with nonmonotone Armijo backtracking.

    ``fun(x) -> (value, gradient)``.  Returns ``(x, value, gradient,
    iterations, projected_gradient_norm)``; the norm is the sup-norm of
    ``P(x - g) - x``.
    """
    f, g = fun(x)
    pg = project(x - g) - x
    pgn = float(np.max(np.abs(pg))) if pg.size else 0.0
    if pgn <= tol:
        return x, f, g, 0, pgn
    alpha = 1.0 / max(pgn, 1e-12)
    hist = [f]
    it = 0
    for it in range(1, max_iter + 1):
        d = project(x - alpha * g) - x
        gd = float(np.sum(g * d))
        if gd >= 0:
            d = pg
            gd = float(np.sum(g * d))
        fref = max(hist[-memory:])
        t = 1.0
        while True:
            xn = x + t * d
            fn, gn = fun(xn)
            if fn <= fref + armijo * t * gd or t < 1e-14:
                break
            # safeguarded quadratic interpolation
            denom = 2.0 * (fn - f - t * gd)
            tq = -gd * t * t / denom if denom > 0 else 0.5 * t
            t = min(max(tq, 0.1 * t), 0.5 * t)
        s = xn - x
        y = gn - g
        sy = float(np.sum(s * y))
        ss = float(np.sum(s * s))
        alpha = min(max(ss / sy, 1e-12), 1e12) if sy > 0 else 1e12
        x, f, g = xn, fn, gn
        hist.append(f)
        pg = project(x - g) - x
        pgn = float(np.max(np.abs(pg)))
        if pgn <= tol or ss == 0.0:
            break
    return x, f, g, it, pgn


def solve(problem: OcpProblem, warm_start=None, options: Optional[SolverOptions] = None,
          multipliers=None) -> OcpSolution:
    """Minimise ``J_T(x0, u)`` over admissible piecewise-constant inputs.

    Parameters
    ----------
    problem : OcpProblem
    warm_start : array_like, optional
        Initial inputs, shape ``(N * substeps, m)``; zeros (projected) when omitted.
    options : SolverOptions, optional
    multipliers : array_like, optional
        Initial multiplier estimates, one row per constrained node (see
        ``SolverOptions.constraint_nodes``) and one column per non-input-box row.

    Raises
    ------
    InfeasibleOCPError
        When the constraint residual stays above ``infeasible_tol`` after the
        penalty has been escalated to ``rho_max``.
    """
    opts = options or SolverOptions()
    cons = problem.cons
    K = problem.grid.n_steps
    m = problem.sys.input_dim
    if warm_start is None:
        U = np.zeros((K, m))
    else:
        U = np.array(warm_start, float).reshape(K, m)
    U = cons.project_input(U)
    tr = make_transcription(problem, opts.condensed, opts.constraint_nodes)
    shape = tr.n_constraints
    lam = np.zeros(shape) if multipliers is None else np.maximum(0.0, np.array(multipliers, float).reshape(shape))
    rho = opts.rho_init
    prev_kkt = math.inf
    total_it = 0
    converged = False
    pgn = math.nan
    outer = 0
    best = None
    if shape[1] == 0:
        fun = lambda V: tr.phi_grad(V, lam, rho)[:2]  # noqa: E731
        U, _, _, total_it, pgn = spg(fun, U, cons.project_input, opts.grad_tol, opts.max_inner,
                                     opts.memory, opts.armijo)
        converged = pgn <= opts.grad_tol
        viol = 0.0
    else:
        for outer in range(1, opts.max_outer + 1):
            fun = lambda V: tr.phi_grad(V, lam, rho)[:2]  # noqa: E731
            U, _, _, it, pgn = spg(fun, U, cons.project_input, opts.grad_tol, opts.max_inner,
                                   opts.memory, opts.armijo)
            total_it += it
            C = tr.constraints(U)
            viol = max(0.0, float(np.max(C)))
            if best is None or viol < best[1] or (viol <= opts.feas_tol and best[1] <= opts.feas_tol):
                best = (U.copy(), viol, lam.copy(), pgn)
            lam = np.maximum(0.0, lam + rho * C)
            # KKT: the inner gradient is stationarity for the updated multipliers,
            # so complementarity is the remaining condition
            compl = float(np.max(np.abs(np.minimum(-C, lam)), initial=0.0))
            if viol <= opts.feas_tol and pgn <= opts.grad_tol and compl <= opts.feas_tol:
                converged = True
                break
            kkt = max(viol, compl)
            if kkt > 0.25 * prev_kkt:
                if rho >= opts.rho_max:
                    break
                rho = min(rho * opts.rho_factor, opts.rho_max)
            prev_kkt = kkt
        if not converged:
            U, viol, lam_best, pgn = best
            if viol > opts.infeasible_tol:
                raise InfeasibleOCPError(
                    f"no admissible control found: max violation {viol:.3e} at rho = {rho:.1e}",
                    max_violation=viol)
    if opts.polish and hasattr(tr, "polish"):
        refined = tr.polish(U, lam)
        if refined is not None:
            U2, lam2 = refined
            viol2 = max(0.0, float(np.max(tr.constraints(U2), initial=0.0)))
            # a KKT point of a convex QP is its global minimiser
            if viol2 <= opts.feas_tol:
                g = (tr.H @ U2.ravel() + tr.q + tr.G.T @ lam2.ravel()).reshape(U2.shape)
                U, lam, viol = U2, lam2, viol2
                pgn = float(np.max(np.abs(cons.project_input(U - g) - U)))
                converged = pgn <= opts.grad_tol
    traj = propagate(problem.sys, problem.cost, problem.x0, U, problem.grid)
    # input boxes hold by projection; the remaining rows at the constrained nodes
    max_viol = max(0.0, float(np.max(tr.constraints(U), initial=0.0)))
    return OcpSolution(
        controls=U,
        value=traj.cost,
        max_violation=max_viol,
        iterations=total_it,
        converged=converged,
        multipliers=lam,
        projected_gradient=pgn,
        outer_iterations=outer,
        rho=rho,
        transcription=tr.name,
    )


def _lqr_warm_start(sys, cost, cons, x0, grid):
    F = None
    if isinstance(sys, LinearSystem):
        F = sys.stabilizing_gain
        if F is None and cost.is_quadratic:
            from .certify import solve_care  # local import: certify depends on this module
            try:
                F = solve_care(sys, cost).F
            except Exception:
                F = None
    if F is None:
        return None
    U = np.empty((grid.n_steps, sys.input_dim))
    x = np.asarray(x0, float)
    for j in range(grid.n_steps):
        U[j] = cons.project_input(F @ x)
        x, _, _ = rk4_step(sys, cost, x, U[j], grid.h)
    return U


def value_function(sys, cost, cons, x0, T, delta=None, substeps=10,
                   options: Optional[SolverOptions] = None) -> float:
    """Numerical ``V_T(x0)``; ``math.inf`` when no admissible control is found.

    The horizon is split into periods of length ``delta`` (default ``T``),
    each with ``substeps`` RK4 steps.  Two solves are run (zero start and a
    saturated-LQR start when a gain is available) and the smaller value is
    returned.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    delta = T if delta is None else float(delta)
    N = int(round(T / delta))
    if N < 1 or not math.isclose(N * delta, T, rel_tol=1e-9, abs_tol=1e-12):
        raise ValueError("T must be a multiple of delta")
    grid = GridSpec(delta, substeps, N)
    try:
        problem = OcpProblem(sys, cost, cons, grid, x0)
    except InfeasibleOCPError:
        return math.inf
    best = math.inf
    starts = [None, _lqr_warm_start(sys, cost, cons, x0, grid)]
    for ws in starts:
        if ws is None and best < math.inf:
            continue
        try:
            sol = solve(problem, ws, options)
        except (InfeasibleOCPError, DivergenceError):
            continue
        best = min(best, sol.value)
    return best


def gradient_check(problem: OcpProblem, controls, probe_count=10, seed=0, step=1e-6,
                   multipliers=None, rho=10.0) -> float:
    """Worst relative error between adjoint and central-difference gradients.

    The augmented objective uses ``multipliers`` (default: ones) and ``rho``
    so the constraint terms contribute.
    """
    tr = ShootingTranscription(problem)
    U = np.array(controls, float).reshape(problem.grid.n_steps, problem.sys.input_dim)
    lam = np.ones(tr.n_constraints) if multipliers is None else np.asarray(multipliers, float)
    _, g, _ = tr.phi_grad(U, lam, rho)
    rng = np.random.default_rng(seed)
    flat = rng.choice(U.size, size=min(probe_count, U.size), replace=False)
    worst = 0.0
    for k in flat:
        E = np.zeros(U.size)
        E[k] = step
        E = E.reshape(U.shape)
        fp = tr.phi_grad(U + E, lam, rho, need_grad=False)[0]
        fm = tr.phi_grad(U - E, lam, rho, need_grad=False)[0]
        fd = (fp - fm) / (2 * step)
        ad = g.ravel()[k]
        err = abs(ad - fd) / max(abs(ad), abs(fd), 1e-8)
        worst = max(worst, err)
    return worst
