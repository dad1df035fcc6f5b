"""N-horizon constrained quadratic program for the receding-horizon controller.

Given a plant spec and a measured state x, the instance built here is

    minimize    sum_{t=0}^{N-1} (x_t' P x_t + u_t' Q u_t) + x_N' P x_N
    subject to  x_{t+1} = A x_t + B u_t,    x_0 = x,
                x_{t+1}' Pbar x_{t+1} <= c  (ellipsoidal state set),
                |u_t|_inf <= u_max          (input box),

whose optimal value V_N(x) doubles as the closed-loop Lyapunov function.
The terminal weight equals the running state weight P on purpose.

The solver splits the stacked trajectory: an equality-constrained quadratic
step (dynamics enforced through one pre-factorized KKT system per plant and
horizon) alternates with independent projections of states onto the
ellipsoid and inputs onto the box.  A presolve shortcut returns the
dynamics-only minimizer whenever it already satisfies the inequality
constraints, which is the common case away from the set boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DomainError, InfeasibleError, NumericsError
from .matrixcore import quad_form
from .plant import SystemSpec, aux_rollout, in_X0

_DENSE_KKT_LIMIT = 700
_PROJECTION_NEWTON_MAX = 80


@dataclass(frozen=True)
class SolverSettings:
    """Operator-splitting parameters; defaults suit desk-scale problems."""

    rho_admm: float = 1.0
    eps_feas: float = 1e-7
    eps_opt: float = 1e-8
    max_iterations: int = 50_000
    warm_start: bool = True
    presolve_unconstrained: bool = True

    def __post_init__(self):
        for name in ("rho_admm", "eps_feas", "eps_opt", "max_iterations"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")


DEFAULT_SETTINGS = SolverSettings()


@dataclass(frozen=True)
class QPSolution:
    """Solved trajectory plan plus solver diagnostics.

    ``states`` has N+1 rows (the measured state first).  States and inputs
    come from the same equality-constrained solve, so the dynamics
    recursion holds to ``dynamics_residual`` (checked below 1e-7 for an
    optimal status).  Re-rolling the states open loop from the inputs is
    deliberately avoided: with an unstable A it amplifies roundoff by
    rho(A)^N, which overflows at certified horizons.  ``value`` is the
    objective evaluated on these sequences.
    """

    inputs: np.ndarray
    states: np.ndarray
    value: float
    status: str
    primal_residual: float
    dual_residual: float
    iterations: int
    constraint_violation: float
    dynamics_residual: float


class EllipsoidProjector:
    """Euclidean projection onto {x : x' Pbar x <= c}.

    Works in the eigenbasis of Pbar, where the projection is
    x(mu) = y / (1 + mu * lam) and the scalar mu >= 0 solves the secular
    equation sum lam_i y_i^2 / (1 + mu lam_i)^2 = c.  Solved by Newton
    with a doubling/bisection safeguard to |residual| <= 1e-10 * c.
    """

    def __init__(self, Pbar: np.ndarray, c: float):
        if c <= 0:
            raise DomainError("ellipsoid level must be positive")
        lam, V = np.linalg.eigh(Pbar)
        if lam[0] <= 0:
            raise DomainError("ellipsoid shape matrix must be positive definite")
        self.lam = lam
        self.V = V
        self.c = float(c)
        self.tol = 1e-10 * float(c)

    def project(self, Z: np.ndarray) -> np.ndarray:
        """Project each row of Z; rows already inside are returned unchanged."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        Y = Z @ self.V
        lam = self.lam
        vals = (Y * Y) @ lam
        out = Z.copy()
        todo = np.nonzero(vals > self.c)[0]
        if todo.size == 0:
            return out
        Yt = Y[todo]
        w = lam * Yt * Yt
        mu = np.zeros(todo.size)
        hi = np.full(todo.size, 1.0)
        # grow upper brackets until g(hi) < 0
        for _ in range(200):
            g_hi = (w / (1.0 + np.outer(hi, lam)) ** 2).sum(axis=1) - self.c
            grow = g_hi > 0
            if not grow.any():
                break
            hi[grow] *= 4.0
        lo = np.zeros(todo.size)
        for _ in range(_PROJECTION_NEWTON_MAX):
            denom = 1.0 + np.outer(mu, lam)
            g = (w / denom**2).sum(axis=1) - self.c
            if np.all(np.abs(g) <= self.tol):
                break
            gp = -2.0 * (w * lam / denom**3).sum(axis=1)
            lo = np.where(g > 0, mu, lo)
            hi = np.where(g < 0, mu, hi)
            step = mu - g / gp
            bad = (step <= lo) | (step >= hi) | ~np.isfinite(step)
            mu = np.where(bad, 0.5 * (lo + hi), step)
        else:
            raise NumericsError("ellipsoid projection did not reach tolerance")
        out[todo] = (Yt / (1.0 + np.outer(mu, lam))) @ self.V.T
        return out


def project_ellipsoid(z: np.ndarray, Pbar: np.ndarray, c: float) -> np.ndarray:
    """Nearest point of {x : x' Pbar x <= c} to z."""
    z = np.asarray(z, dtype=float).reshape(-1)
    return EllipsoidProjector(Pbar, c).project(z[None, :])[0]


class _Factor:
    """LU factorization holder, dense below _DENSE_KKT_LIMIT, sparse above."""

    def __init__(self, M: sp.spmatrix):
        if M.shape[0] <= _DENSE_KKT_LIMIT:
            self._lu = scipy.linalg.lu_factor(M.toarray())
            self._dense = True
        else:
            self._lu = spla.splu(M.tocsc())
            self._dense = False

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self._dense:
            return scipy.linalg.lu_solve(self._lu, rhs)
        return self._lu.solve(rhs)


class _Workspace:
    """Per-(spec, N) matrices and factorizations shared across solves."""

    def __init__(self, spec: SystemSpec, N: int):
        n, m = spec.n, spec.m
        self.spec = spec
        self.N = N
        self.nx = N * n
        self.nu = N * m
        self.nz = self.nx + self.nu
        eye_N = sp.identity(N, format="csr")
        sub = sp.diags([np.ones(N - 1)], [-1], format="csr") if N > 1 else sp.csr_matrix((N, N))
        Cx = sp.kron(eye_N, sp.identity(n)) - sp.kron(sub, spec.A)
        Cu = -sp.kron(eye_N, spec.B)
        self.C = sp.hstack([Cx, Cu], format="csr")
        self.H = sp.block_diag(
            [sp.kron(eye_N, 2.0 * spec.P), sp.kron(eye_N, 2.0 * spec.Q)], format="csr"
        )
        self._factors: dict[float, _Factor] = {}
        self.projector = EllipsoidProjector(spec.Pbar, spec.c)

    def _factor(self, rho: float) -> _Factor:
        fac = self._factors.get(rho)
        if fac is None:
            top = self.H + rho * sp.identity(self.nz) if rho else self.H
            kkt = sp.bmat([[top, self.C.T], [self.C, None]], format="csc")
            fac = _Factor(kkt)
            self._factors[rho] = fac
        return fac

    def solve_kkt(self, rho: float, top_rhs: np.ndarray, x: np.ndarray) -> np.ndarray:
        rhs = np.zeros(self.nz + self.nx)
        rhs[: self.nz] = top_rhs
        rhs[self.nz : self.nz + self.spec.n] = self.spec.A @ x
        return self._factor(rho).solve(rhs)[: self.nz]


@lru_cache(maxsize=128)
def _workspace(spec: SystemSpec, N: int) -> _Workspace:
    return _Workspace(spec, N)


@dataclass(frozen=True)
class QPInstance:
    """One horizon problem: plant, initial state, horizon, cached operators."""

    spec: SystemSpec
    x: np.ndarray
    N: int

    def __post_init__(self):
        if self.N < 1:
            raise DomainError(f"horizon must be at least 1, got {self.N}")
        x = np.asarray(self.x, dtype=float).reshape(-1)
        if x.size != self.spec.n:
            raise DomainError(f"state has size {x.size}, expected {self.spec.n}")
        if not np.all(np.isfinite(x)):
            raise DomainError("initial state contains non-finite entries")
        object.__setattr__(self, "x", x)

    @property
    def workspace(self) -> _Workspace:
        return _workspace(self.spec, self.N)

    @cached_property
    def Phi(self) -> np.ndarray:
        """Stacked free response: predicted states = Phi x + Gamma inputs."""
        n, N = self.spec.n, self.N
        Phi = np.empty((N * n, n))
        Ak = np.eye(n)
        for t in range(N):
            Ak = self.spec.A @ Ak
            Phi[t * n : (t + 1) * n] = Ak
        return Phi

    @cached_property
    def Gamma(self) -> np.ndarray:
        """Stacked forced response (block lower-triangular impulse map)."""
        n, m, N = self.spec.n, self.spec.m, self.N
        Gamma = np.zeros((N * n, N * m))
        block = self.spec.B.copy()
        for diag in range(N):
            for t in range(diag, N):
                Gamma[t * n : (t + 1) * n, (t - diag) * m : (t - diag + 1) * m] = block
            block = self.spec.A @ block
        return Gamma


def build_nqp(spec: SystemSpec, x: np.ndarray, N: int) -> QPInstance:
    """Assemble the horizon problem for state x (factorizations are cached)."""
    return QPInstance(spec=spec, x=x, N=N)


def objective_value(spec: SystemSpec, states: np.ndarray, inputs: np.ndarray) -> float:
    """Horizon cost of a trajectory, running weights P/Q and terminal weight P."""
    total = 0.0
    N = inputs.shape[0]
    for t in range(N):
        total += quad_form(states[t], spec.P) + quad_form(inputs[t], spec.Q)
    return total + quad_form(states[N], spec.P)


def _violation(spec: SystemSpec, states: np.ndarray, inputs: np.ndarray) -> float:
    """Worst inequality-constraint violation along a planned trajectory."""
    q = np.einsum("ki,ij,kj->k", states[1:], spec.Pbar, states[1:])
    state_viol = float(np.max(q - spec.c, initial=0.0))
    input_viol = float(np.max(np.abs(inputs) - spec.u_max, initial=0.0))
    return max(state_viol, input_viol, 0.0)


def _split(ws: _Workspace, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    N, n, m = ws.N, ws.spec.n, ws.spec.m
    return w[: ws.nx].reshape(N, n), w[ws.nx :].reshape(N, m)


def _solution(instance: QPInstance, w, status, r, s, iterations) -> QPSolution:
    spec = instance.spec
    plan_states, inputs = _split(instance.workspace, w)
    states = np.vstack([instance.x, plan_states])
    gaps = states[1:] - states[:-1] @ spec.A.T - inputs @ spec.B.T
    dyn_residual = float(np.max(np.abs(gaps)))
    if status == "optimal" and dyn_residual > 1e-7:
        raise NumericsError(f"dynamics residual {dyn_residual:.3e} after KKT solve")
    return QPSolution(
        inputs=inputs,
        states=states,
        value=objective_value(spec, states, inputs),
        status=status,
        primal_residual=float(r),
        dual_residual=float(s),
        iterations=iterations,
        constraint_violation=_violation(spec, states, inputs),
        dynamics_residual=dyn_residual,
    )


def solve_nqp(
    instance: QPInstance,
    settings: SolverSettings = DEFAULT_SETTINGS,
    warm: tuple[np.ndarray, np.ndarray] | None = None,
) -> QPSolution:
    """Solve the horizon problem for a state inside the ellipsoidal set.

    ``warm`` optionally provides (states, inputs) to seed the splitting
    iteration; otherwise the stabilizing-gain rollout is used, which is
    feasible whenever the plant invariants hold.  Raises InfeasibleError
    for seeds outside the state set.  A returned status of ``optimal``
    guarantees residuals below ``eps_opt`` and constraint violations below
    ``eps_feas`` on the rebuilt trajectory.
    """
    spec = instance.spec
    ws = instance.workspace
    inside, margin = in_X0(spec, instance.x)
    if not inside:
        raise InfeasibleError(
            f"initial state outside the ellipsoidal set (margin {margin:.3e}); "
            "feasibility is only guaranteed on it"
        )

    if settings.presolve_unconstrained:
        w = ws.solve_kkt(0.0, np.zeros(ws.nz), instance.x)
        sol = _solution(instance, w, "optimal", 0.0, 0.0, 0)
        if sol.constraint_violation <= settings.eps_feas:
            return sol

    # operator-splitting iteration
    rho = settings.rho_admm
    if warm is not None and settings.warm_start:
        warm_states, warm_inputs = warm
        z = np.concatenate([np.asarray(warm_states)[1:].reshape(-1),
                            np.asarray(warm_inputs).reshape(-1)])
    elif settings.warm_start:
        rstates, rinputs = aux_rollout(spec, instance.x, instance.N)
        z = np.concatenate([rstates[1:].reshape(-1), rinputs.reshape(-1)])
    else:
        z = np.zeros(ws.nz)
    y = np.zeros(ws.nz)

    r_norm = s_norm = np.inf
    for it in range(1, settings.max_iterations + 1):
        w = ws.solve_kkt(rho, rho * (z - y), instance.x)
        wy = w + y
        states_part = ws.projector.project(wy[: ws.nx].reshape(instance.N, spec.n))
        inputs_part = np.clip(wy[ws.nx :], -spec.u_max, spec.u_max)
        z_new = np.concatenate([states_part.reshape(-1), inputs_part])
        y = wy - z_new
        r_norm = float(np.max(np.abs(w - z_new)))
        s_norm = float(rho * np.max(np.abs(z - z_new)))
        z = z_new
        if r_norm <= settings.eps_opt and s_norm <= settings.eps_opt:
            sol = _solution(instance, w, "optimal", r_norm, s_norm, it)
            if sol.constraint_violation <= settings.eps_feas:
                return sol

    status = "infeasible" if r_norm > 1e-3 else "max-iterations"
    return _solution(instance, w, status, r_norm, s_norm, settings.max_iterations)


def value_VN(
    spec: SystemSpec,
    x: np.ndarray,
    N: int,
    settings: SolverSettings = DEFAULT_SETTINGS,
    warm: tuple[np.ndarray, np.ndarray] | None = None,
) -> float:
    """Optimal horizon cost V_N(x); raises on non-optimal solver status."""
    sol = solve_nqp(build_nqp(spec, x, N), settings, warm=warm)
    if sol.status != "optimal":
        raise NumericsError(f"horizon solve ended with status {sol.status!r}")
    return sol.value
