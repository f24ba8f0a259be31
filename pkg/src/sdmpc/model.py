"""Control systems, constraint sets and stage costs.

Everything downstream (integration, optimal control, certification,
viability) consumes the three descriptions defined here:

* :class:`ControlSystem` / :class:`LinearSystem`: the vector field ``f(x, u)``
  together with a controlled equilibrium ``(x_eq, u_eq)``.
* :class:`ConstraintSpec`: the joint state/input set ``E = {g(x, u) <= 0}``.
* :class:`StageCost`: the running cost ``l(x, u) >= 0``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InfeasibleStateError

__all__ = [
    "ControlSystem",
    "LinearSystem",
    "ConstraintSpec",
    "StageCost",
    "StageCostEnvelope",
    "pointwise_min_cost",
    "quadratic_envelope",
    "build_double_integrator",
    "build_scalar_example",
    "REGISTRY",
]

EQUILIBRIUM_TOL = 1e-10


def _frozen(a, shape=None) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if shape is not None:
        arr = arr.reshape(shape)
    arr.setflags(write=False)
    return arr


def _fd_jacobian(fun, x, u, eps=1e-7):
    """Central-difference Jacobians of ``fun(x, u)`` w.r.t. ``x`` and ``u``."""
    y0 = np.atleast_1d(fun(x, u))
    jx = np.empty((y0.size, x.size))
    ju = np.empty((y0.size, u.size))
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = eps
        jx[:, i] = (np.atleast_1d(fun(x + e, u)) - np.atleast_1d(fun(x - e, u))) / (2 * eps)
    for i in range(u.size):
        e = np.zeros_like(u)
        e[i] = eps
        ju[:, i] = (np.atleast_1d(fun(x, u + e)) - np.atleast_1d(fun(x, u - e))) / (2 * eps)
    return jx, ju


class ControlSystem:
    """Continuous-time control system ``x' = f(x, u)``.

    Parameters
    ----------
    state_dim, input_dim : int
        Dimensions ``n`` and ``m``.
    vector_field : callable
        ``f(x, u) -> dx/dt`` for 1-D arrays ``x`` (length n) and ``u`` (length m).
    equilibrium_state, equilibrium_input : array_like, optional
        Controlled equilibrium; defaults to the origin.
    jacobian : callable, optional
        ``jacobian(x, u) -> (df/dx, df/du)``.  Central differences are used
        when omitted.
    """

    def __init__(self, state_dim: int, input_dim: int, vector_field: Callable,
                 equilibrium_state=None, equilibrium_input=None,
                 jacobian: Optional[Callable] = None):
        if state_dim < 1 or input_dim < 1:
            raise ValueError("state_dim and input_dim must be positive")
        self.state_dim = int(state_dim)
        self.input_dim = int(input_dim)
        self.vector_field = vector_field
        self._jacobian = jacobian
        if equilibrium_state is None:
            equilibrium_state = np.zeros(self.state_dim)
        if equilibrium_input is None:
            equilibrium_input = np.zeros(self.input_dim)
        self.equilibrium_state = _frozen(equilibrium_state, (self.state_dim,))
        self.equilibrium_input = _frozen(equilibrium_input, (self.input_dim,))
        residual = np.linalg.norm(self.f(self.equilibrium_state, self.equilibrium_input))
        if residual > EQUILIBRIUM_TOL:
            raise ValueError(f"(x_eq, u_eq) is not an equilibrium: |f| = {residual:.3e}")

    def f(self, x, u) -> np.ndarray:
        return np.asarray(self.vector_field(np.asarray(x, float), np.asarray(u, float)), dtype=float)

    def jacobian(self, x, u):
        """Return ``(df/dx, df/du)`` at ``(x, u)``."""
        x = np.asarray(x, float)
        u = np.asarray(u, float)
        if self._jacobian is not None:
            jx, ju = self._jacobian(x, u)
            return np.asarray(jx, float), np.asarray(ju, float)
        return _fd_jacobian(self.f, x, u)

    def __repr__(self):
        return f"{type(self).__name__}(n={self.state_dim}, m={self.input_dim})"


class LinearSystem(ControlSystem):
    """Linear system ``x' = A x + B u`` with equilibrium at the origin.

    ``stabilizing_gain`` ``F`` is used as ``u = F x`` (so ``A + B F`` must be
    Hurwitz).  ``decay_constants`` ``(Gamma, eta_decay)`` bound the closed loop
    as ``|x(t)| <= Gamma exp(-eta_decay t) |x0|``.
    """

    def __init__(self, A, B, stabilizing_gain=None, decay_constants=None):
        A = np.atleast_2d(np.asarray(A, float))
        B = np.asarray(B, float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        n, m = A.shape[0], B.shape[1]
        if A.shape != (n, n) or B.shape[0] != n:
            raise ValueError(f"incompatible shapes A{A.shape}, B{B.shape}")
        self.A = _frozen(A)
        self.B = _frozen(B)
        super().__init__(n, m, self._linear_field, jacobian=self._linear_jacobian)
        self.stabilizing_gain = None
        if stabilizing_gain is not None:
            F = _frozen(stabilizing_gain, (m, n))
            eig = np.linalg.eigvals(self.A + self.B @ F)
            if np.max(eig.real) >= 0:
                raise ValueError("A + B F is not Hurwitz")
            self.stabilizing_gain = F
        self.decay_constants = None
        if decay_constants is not None:
            gamma, eta = map(float, decay_constants)
            if gamma < 1 or eta <= 0:
                raise ValueError("need Gamma >= 1 and eta_decay > 0")
            self.decay_constants = (gamma, eta)

    def _linear_field(self, x, u):
        return self.A @ x + self.B @ u

    def _linear_jacobian(self, x, u):
        return self.A, self.B

    def with_feedback(self, F, decay_constants=None) -> "LinearSystem":
        return LinearSystem(self.A, self.B, F, decay_constants)

    @property
    def closed_loop_matrix(self) -> np.ndarray:
        if self.stabilizing_gain is None:
            raise ValueError("no stabilizing gain attached")
        return self.A + self.B @ self.stabilizing_gain


class ConstraintSpec:
    """Joint constraint set ``E = {(x, u): g(x, u) <= 0}``.

    Box constraints are stored explicitly (so solvers can project onto the
    input box) and also appear among the components of ``g``.  When every
    component of ``g`` is affine, ``affine = (Gx, Gu, g0)`` with
    ``g(x, u) = Gx x + Gu u + g0``.
    """

    def __init__(self, g: Callable, p: int, state_dim: int, input_dim: int,
                 input_box=None, state_box=None, jacobian: Optional[Callable] = None,
                 affine=None, input_box_rows: Sequence[int] = ()):
        self._g = g
        self.p = int(p)
        self.state_dim = int(state_dim)
        self.input_dim = int(input_dim)
        self.input_box = None if input_box is None else (_frozen(input_box[0]), _frozen(input_box[1]))
        self.state_box = None if state_box is None else (_frozen(state_box[0]), _frozen(state_box[1]))
        self._jacobian = jacobian
        self.affine = None if affine is None else tuple(_frozen(a) for a in affine)
        # rows of g that only restate the input box; projection keeps them satisfied
        self.input_box_rows = tuple(int(i) for i in input_box_rows)

    @classmethod
    def from_boxes(cls, state_box=None, input_box=None, state_dim=None, input_dim=None):
        """Build ``g`` from per-coordinate ``[lo, hi]`` boxes.

        Boxes are given as a pair ``(lo, hi)`` of arrays.  Rows of ``g`` are
        ordered ``x - hi, lo - x, u - hi, lo - u`` (boxes that are absent
        contribute no rows).
        """
        if state_box is not None:
            state_box = (np.asarray(state_box[0], float).ravel(), np.asarray(state_box[1], float).ravel())
            state_dim = state_box[0].size
        if input_box is not None:
            input_box = (np.asarray(input_box[0], float).ravel(), np.asarray(input_box[1], float).ravel())
            input_dim = input_box[0].size
        if state_dim is None or input_dim is None:
            raise ValueError("dimensions must be given for absent boxes")
        n, m = int(state_dim), int(input_dim)
        gx_rows, gu_rows, g0 = [], [], []
        if state_box is not None:
            lo, hi = state_box
            if np.any(lo > hi):
                raise ValueError("state box has lo > hi")
            gx_rows += [np.eye(n), -np.eye(n)]
            gu_rows += [np.zeros((n, m)), np.zeros((n, m))]
            g0 += [-hi, lo]
        n_state_rows = 2 * n if state_box is not None else 0
        if input_box is not None:
            lo, hi = input_box
            if np.any(lo > hi):
                raise ValueError("input box has lo > hi")
            gx_rows += [np.zeros((m, n)), np.zeros((m, n))]
            gu_rows += [np.eye(m), -np.eye(m)]
            g0 += [-hi, lo]
        if not g0:
            raise ValueError("at least one box is required")
        Gx = np.vstack(gx_rows)
        Gu = np.vstack(gu_rows)
        c = np.concatenate(g0)
        input_rows = range(n_state_rows, c.size)

        def g(x, u):
            return Gx @ x + Gu @ u + c

        return cls(g, c.size, n, m, input_box=input_box, state_box=state_box,
                   jacobian=lambda x, u: (Gx, Gu), affine=(Gx, Gu, c),
                   input_box_rows=input_rows)

    def g(self, x, u) -> np.ndarray:
        return np.atleast_1d(np.asarray(self._g(np.asarray(x, float), np.asarray(u, float)), float))

    def jacobian(self, x, u):
        """Return ``(dg/dx, dg/du)`` with shapes ``(p, n)`` and ``(p, m)``."""
        x = np.asarray(x, float)
        u = np.asarray(u, float)
        if self._jacobian is not None:
            jx, ju = self._jacobian(x, u)
            return np.asarray(jx, float), np.asarray(ju, float)
        return _fd_jacobian(self.g, x, u)

    def contains(self, x, u, tol=0.0) -> bool:
        return bool(np.all(self.g(x, u) <= tol))

    def project_input(self, u) -> np.ndarray:
        """Clamp ``u`` (any leading shape) into the input box."""
        u = np.asarray(u, float)
        if self.input_box is None:
            return u.copy()
        return np.clip(u, self.input_box[0], self.input_box[1])

    def state_in_box(self, x, tol=0.0) -> bool:
        if self.state_box is None:
            return True
        x = np.asarray(x, float)
        return bool(np.all(x <= self.state_box[1] + tol) and np.all(x >= self.state_box[0] - tol))

    def state_rows(self) -> np.ndarray:
        """Indices of ``g`` rows that are not plain input-box rows."""
        skip = set(self.input_box_rows)
        return np.array([i for i in range(self.p) if i not in skip], dtype=int)

    def input_set_nonempty(self, x, tol=1e-9) -> bool:
        """Whether ``U(x) = {u : g(x, u) <= 0}`` is nonempty.

        Exact for box specifications.  Otherwise ``U(x)`` is probed on a
        deterministic grid of the input box (or around the origin when there
        is no box).
        """
        x = np.asarray(x, float)
        if self.affine is not None and self.input_box is not None and set(self.input_box_rows):
            rows = self.state_rows()
            Gx, Gu, c = self.affine
            if not np.any(Gu[rows]):
                return bool(np.all(Gx[rows] @ x + c[rows] <= tol))
        for u in self._input_probes():
            if self.contains(x, u, tol):
                return True
        return False

    def _input_probes(self, per_axis=9):
        if self.input_box is not None:
            lo, hi = self.input_box
        else:
            lo, hi = -np.ones(self.input_dim), np.ones(self.input_dim)
        axes = [np.linspace(a, b, per_axis) for a, b in zip(lo, hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


class StageCost:
    """Running cost ``l(x, u) >= 0``.

    Use :meth:`quadratic` for the LQ form
    ``l = dx' Q dx + 2 dx' N du + du' R du`` with ``dx = x - x_eq``,
    ``du = u - u_eq``.
    """

    def __init__(self, ell: Callable, gradient: Optional[Callable] = None, lq_data=None,
                 equilibrium_state=None, equilibrium_input=None):
        self._ell = ell
        self._gradient = gradient
        self.lq_data = lq_data
        self.equilibrium_state = None if equilibrium_state is None else _frozen(equilibrium_state)
        self.equilibrium_input = None if equilibrium_input is None else _frozen(equilibrium_input)

    @classmethod
    def quadratic(cls, Q, R, N_cross=None, equilibrium_state=None, equilibrium_input=None):
        Q = np.atleast_2d(np.asarray(Q, float))
        R = np.atleast_2d(np.asarray(R, float))
        n, m = Q.shape[0], R.shape[0]
        N_cross = np.zeros((n, m)) if N_cross is None else np.asarray(N_cross, float).reshape(n, m)
        W = np.block([[Q, N_cross], [N_cross.T, R]])
        if not np.allclose(W, W.T, atol=1e-12):
            raise ValueError("[[Q, N], [N', R]] must be symmetric")
        if np.min(np.linalg.eigvalsh(W)) <= 0:
            raise ValueError("[[Q, N], [N', R]] must be positive definite")
        xe = np.zeros(n) if equilibrium_state is None else np.asarray(equilibrium_state, float)
        ue = np.zeros(m) if equilibrium_input is None else np.asarray(equilibrium_input, float)

        def ell(x, u):
            dx = x - xe
            du = u - ue
            return float(dx @ Q @ dx + 2.0 * dx @ N_cross @ du + du @ R @ du)

        def grad(x, u):
            dx = x - xe
            du = u - ue
            return 2.0 * (Q @ dx + N_cross @ du), 2.0 * (N_cross.T @ dx + R @ du)

        lq = (_frozen(Q), _frozen(R), _frozen(N_cross))
        return cls(ell, grad, lq, xe, ue)

    def __call__(self, x, u) -> float:
        return float(self._ell(np.asarray(x, float), np.asarray(u, float)))

    def gradient(self, x, u):
        """Return ``(dl/dx, dl/du)``."""
        x = np.asarray(x, float)
        u = np.asarray(u, float)
        if self._gradient is not None:
            gx, gu = self._gradient(x, u)
            return np.asarray(gx, float), np.asarray(gu, float)
        jx, ju = _fd_jacobian(lambda a, b: np.array([self._ell(a, b)]), x, u)
        return jx[0], ju[0]

    @property
    def is_quadratic(self) -> bool:
        return self.lq_data is not None


def pointwise_min_cost(x, cost: StageCost, cons: ConstraintSpec, tol=1e-10, max_iter=200,
                       start=None) -> float:
    """Minimal stage cost ``l*(x) = inf_{u in U(x)} l(x, u)``.

    For quadratic costs without cross term and with ``u_eq`` admissible the
    value is ``dx' Q dx`` exactly.  Otherwise the inner problem is solved by
    projected gradient with Armijo backtracking over the input box, starting
    from the projection of ``start`` (default: ``u_eq`` or zero).

    Raises
    ------
    InfeasibleStateError
        If ``U(x)`` is empty.
    """
    x = np.asarray(x, float)
    if not cons.input_set_nonempty(x):
        raise InfeasibleStateError(f"U(x) is empty at x = {x}")
    m = cons.input_dim
    u_eq = cost.equilibrium_input if cost.equilibrium_input is not None else np.zeros(m)
    if cost.is_quadratic:
        Q, R, N = cost.lq_data
        if not np.any(N) and cons.contains(x, u_eq, tol=1e-12):
            dx = x - (cost.equilibrium_state if cost.equilibrium_state is not None else 0.0)
            return float(dx @ Q @ dx)
    u = cons.project_input(u_eq if start is None else start)
    val = cost(x, u)
    for _ in range(max_iter):
        _, gu = cost.gradient(x, u)
        pg = cons.project_input(u - gu) - u
        if np.max(np.abs(pg)) <= tol:
            break
        step = 1.0
        while True:
            trial = cons.project_input(u - step * gu)
            tval = cost(x, trial)
            if tval <= val + 1e-4 * gu @ (trial - u) or step < 1e-12:
                break
            step *= 0.5
        u, val = trial, tval
    return float(max(val, 0.0))


@dataclass(frozen=True)
class StageCostEnvelope:
    """Class-K-infinity candidates sandwiching ``l*``."""

    eta_lower: Callable[[float], float]
    eta_upper: Callable[[float], float]
    validation_radius: float

    def validate(self, cost: StageCost, cons: ConstraintSpec, x_eq=None, samples=2000,
                 seed=0, slack=1e-12) -> bool:
        """Check ``eta_lower(|dx|) <= l*(x) <= eta_upper(|dx|)`` on random samples."""
        n = cons.state_dim
        x_eq = np.zeros(n) if x_eq is None else np.asarray(x_eq, float)
        rng = np.random.default_rng(seed)
        dirs = rng.normal(size=(samples, n))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        radii = self.validation_radius * rng.uniform(1e-3, 1.0, size=samples)
        for d, r in zip(dirs, radii):
            x = x_eq + r * d
            if not cons.input_set_nonempty(x):
                continue
            v = pointwise_min_cost(x, cost, cons)
            if v < self.eta_lower(r) - slack or v > self.eta_upper(r) + slack:
                return False
        return True


def quadratic_envelope(cost: StageCost, validation_radius=1.0) -> StageCostEnvelope:
    """``sigma_min(Q) r^2 <= l*(x) <= sigma_max(Q) r^2`` for quadratic costs."""
    if not cost.is_quadratic:
        raise ValueError("quadratic envelope needs a quadratic stage cost")
    ev = np.linalg.eigvalsh(cost.lq_data[0])
    lo, hi = float(ev[0]), float(ev[-1])
    return StageCostEnvelope(lambda r: lo * r * r, lambda r: hi * r * r, float(validation_radius))


def build_double_integrator():
    """``x1' = x2, x2' = u`` with ``|u|, |x1|, |x2| <= 1`` and ``l = |x|^2 + u^2``."""
    sys = LinearSystem([[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]])
    cons = ConstraintSpec.from_boxes(state_box=([-1.0, -1.0], [1.0, 1.0]),
                                     input_box=([-1.0], [1.0]))
    cost = StageCost.quadratic(np.eye(2), np.eye(1))
    return sys, cons, cost


def build_scalar_example():
    """Unstable scalar system ``x' = x + u`` with ``|x| <= 2``, ``|u| <= 1``, ``l = x^2 + u^2``.

    Its viability kernel is ``[-1, 1]``; at ``x0 = +-1`` the only admissible
    control is ``u = -x0``.
    """
    sys = LinearSystem([[1.0]], [[1.0]])
    cons = ConstraintSpec.from_boxes(state_box=([-2.0], [2.0]), input_box=([-1.0], [1.0]))
    cost = StageCost.quadratic(np.eye(1), np.eye(1))
    return sys, cons, cost


REGISTRY = {
    "double_integrator": build_double_integrator,
    "scalar_example": build_scalar_example,
}
