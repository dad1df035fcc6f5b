"""Constrained discrete-time LTI plant with an auxiliary stabilizing gain.

A :class:`SystemSpec` bundles the plant matrices x(k+1) = A x(k) + B u(k),
the running-cost weights P (state) and Q (input), an auxiliary linear gain
K making A + B K Schur stable, and the two constraint sets used by the
receding-horizon controller:

* an ellipsoidal state set ``X0 = {x : x' Pbar x <= c}``, where Pbar solves
  the discrete Lyapunov equation for (A + B K, Qbar), and
* an input box ``U = {u : |u_j| <= u_max}``.

X0 is forward invariant under u = K x, and the gain keeps every input
inside the box on X0 whenever ``sqrt(c * K_j Pbar^-1 K_j') <= u_max`` per
input row; both facts are validated at construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError, InfeasibleError, InstabilityError
from .matrixcore import (
    quad_form,
    require_symmetric,
    solve_discrete_lyapunov,
    spectral_radius,
    sym_eig_extremes,
)

X0_MEMBERSHIP_SLACK = 1e-9

_RICCATI_TOL = 1e-12
_RICCATI_MAX_ITER = 200_000


def lq_gain(A: np.ndarray, B: np.ndarray, P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Infinite-horizon LQ gain for state weight P and input weight Q.

    Iterates the Riccati recursion to a 1e-12 fixed point and returns K
    such that u = K x minimizes the accumulated quadratic cost; raises
    InstabilityError when the iteration fails to settle.
    """
    Pi = P.copy()
    for _ in range(_RICCATI_MAX_ITER):
        gain_lhs = Q + B.T @ Pi @ B
        Pi_next = A.T @ Pi @ A - A.T @ Pi @ B @ np.linalg.solve(gain_lhs, B.T @ Pi @ A) + P
        Pi_next = 0.5 * (Pi_next + Pi_next.T)
        if np.max(np.abs(Pi_next - Pi)) <= _RICCATI_TOL:
            Pi = Pi_next
            break
        Pi = Pi_next
    else:
        raise InstabilityError("Riccati iteration did not converge; is (A, B) stabilizable?")
    return -np.linalg.solve(Q + B.T @ Pi @ B, B.T @ Pi @ A)


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """Validated plant description; immutable after construction.

    Build through :meth:`SystemSpec.build` (or :func:`load_system_spec`),
    which solves for Pbar and checks every invariant.  ``repair=True``
    replaces a non-stabilizing K by the LQ gain synthesized from (P, Q);
    the requested gain is kept in ``K_requested`` for reporting.
    """

    A: np.ndarray
    B: np.ndarray
    K: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    Qbar: np.ndarray
    c: float
    u_max: float
    Pbar: np.ndarray = field(repr=False)
    Pbar_inv: np.ndarray = field(repr=False)
    Abar: np.ndarray = field(repr=False)
    K_requested: np.ndarray | None = None
    repaired: bool = False

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @classmethod
    def build(
        cls,
        A,
        B,
        K=None,
        *,
        P,
        Q,
        Qbar,
        c: float,
        u_max: float,
        repair: bool = False,
        strict: bool = True,
    ) -> "SystemSpec":
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.asarray(B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        n = A.shape[0]
        if A.shape != (n, n):
            raise DomainError(f"A must be square, got {A.shape}")
        if B.shape[0] != n:
            raise DomainError(f"B has {B.shape[0]} rows, expected {n}")
        m = B.shape[1]

        P = require_symmetric(np.atleast_2d(np.asarray(P, dtype=float)), "P")
        Q = require_symmetric(np.atleast_2d(np.asarray(Q, dtype=float)), "Q")
        Qbar = require_symmetric(np.atleast_2d(np.asarray(Qbar, dtype=float)), "Qbar")
        for name, W, dim in (("P", P, n), ("Q", Q, m), ("Qbar", Qbar, n)):
            if W.shape != (dim, dim):
                raise DomainError(f"{name} must be {dim}x{dim}, got {W.shape}")
            lo, _ = sym_eig_extremes(W)
            if lo <= 0.0:
                raise DomainError(f"{name} must be positive definite (min eigenvalue {lo:.3e})")
        if not c > 0.0:
            raise DomainError(f"c must be positive, got {c}")
        if not u_max > 0.0:
            raise DomainError(f"u_max must be positive, got {u_max}")

        K_requested = None
        repaired = False
        if K is None:
            K = lq_gain(A, B, P, Q)
        else:
            K = np.atleast_2d(np.asarray(K, dtype=float))
            if K.shape != (m, n):
                raise DomainError(f"K must be {m}x{n}, got {K.shape}")
            rho = spectral_radius(A + B @ K)
            if rho >= 1.0:
                if not repair:
                    raise InstabilityError(
                        f"A + B K has spectral radius {rho:.4f} >= 1; the configured gain "
                        "does not stabilize the plant (enable repair to synthesize an LQ gain)"
                    )
                K_requested = K
                K = lq_gain(A, B, P, Q)
                repaired = True

        Abar = A + B @ K
        rho = spectral_radius(Abar)
        if rho >= 1.0:
            raise InstabilityError(f"closed loop still unstable after synthesis (rho={rho:.4f})")
        Pbar = solve_discrete_lyapunov(Abar, Qbar)
        Pbar_inv = np.linalg.inv(Pbar)
        Pbar_inv = 0.5 * (Pbar_inv + Pbar_inv.T)

        spec = cls(
            A=A, B=B, K=K, P=P, Q=Q, Qbar=Qbar, c=float(c), u_max=float(u_max),
            Pbar=Pbar, Pbar_inv=Pbar_inv, Abar=Abar,
            K_requested=K_requested, repaired=repaired,
        )
        if strict:
            worst = np.max(max_aux_input_over_X0(spec))
            if worst > u_max * (1.0 + 1e-12):
                raise DomainError(
                    f"auxiliary gain exceeds the input box on X0: max |K_j x| = {worst:.6g} "
                    f"> u_max = {u_max:.6g}; shrink c or K"
                )
        return spec

    def to_dict(self) -> dict:
        return {
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "K": (self.K_requested if self.repaired else self.K).tolist(),
            "P": self.P.tolist(),
            "Q": self.Q.tolist(),
            "Qbar": self.Qbar.tolist(),
            "c": self.c,
            "u_max": self.u_max,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def load_system_spec(source, *, repair: bool = False, strict: bool = True) -> SystemSpec:
    """Build a SystemSpec from a JSON file path or an already-parsed dict.

    Pbar is always recomputed from (A + B K, Qbar); any Pbar entry in the
    file is ignored.
    """
    if isinstance(source, (str, Path)):
        data = json.loads(Path(source).read_text())
    else:
        data = dict(source)
    missing = [k for k in ("A", "B", "P", "Q", "Qbar", "c", "u_max") if k not in data]
    if missing:
        raise DomainError(f"system spec is missing fields: {', '.join(missing)}")
    return SystemSpec.build(
        data["A"], data["B"], data.get("K"),
        P=data["P"], Q=data["Q"], Qbar=data["Qbar"],
        c=data["c"], u_max=data["u_max"],
        repair=repair, strict=strict,
    )


def step(spec: SystemSpec, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """One plant step: A x + B u."""
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    if x.size != spec.n or u.size != spec.m:
        raise DomainError(f"expected state of size {spec.n} and input of size {spec.m}")
    return spec.A @ x + spec.B @ u


def in_X0(spec: SystemSpec, x: np.ndarray) -> tuple[bool, float]:
    """Membership test for the ellipsoidal state set, with signed margin c - x' Pbar x."""
    margin = spec.c - quad_form(x, spec.Pbar)
    return margin >= -X0_MEMBERSHIP_SLACK, float(margin)


def aux_rollout(spec: SystemSpec, x: np.ndarray, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Roll the auxiliary loop u = K x for N steps from x in X0.

    Returns (states, inputs) with states.shape (N+1, n) and inputs.shape
    (N, m); states[t+1] = Abar states[t].  Raises InfeasibleError when the
    seed lies outside X0.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    inside, margin = in_X0(spec, x)
    if not inside:
        raise InfeasibleError(f"rollout seed outside X0 (margin {margin:.3e})")
    states = np.empty((N + 1, spec.n))
    inputs = np.empty((N, spec.m))
    states[0] = x
    for t in range(N):
        inputs[t] = spec.K @ states[t]
        states[t + 1] = spec.Abar @ states[t]
    return states, inputs


def max_aux_input_over_X0(spec: SystemSpec) -> np.ndarray:
    """Per-row maximum of |K_j x| over X0: sqrt(c * K_j Pbar^-1 K_j')."""
    vals = np.einsum("ji,ik,jk->j", spec.K, spec.Pbar_inv, spec.K)
    if np.any(vals < -1e-12):
        raise DomainError("Pbar inverse is not positive semidefinite")
    return np.sqrt(spec.c * np.clip(vals, 0.0, None))


def sample_X0(
    spec: SystemSpec,
    n_samples: int,
    rng: np.random.Generator,
    *,
    radius: float = 1.0,
    boundary: bool = False,
) -> np.ndarray:
    """Uniform samples of the X0 ellipsoid (or its boundary shell).

    Directions are drawn on the unit sphere, radii as U(0,1)^(1/n), and the
    result is mapped through the inverse Cholesky factor of Pbar so that
    x' Pbar x = c r^2.
    """
    L = np.linalg.cholesky(spec.Pbar)
    z = rng.normal(size=(n_samples, spec.n))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    if boundary:
        r = np.full(n_samples, radius)
    else:
        r = radius * rng.uniform(size=n_samples) ** (1.0 / spec.n)
    pts = np.sqrt(spec.c) * z * r[:, None]
    return np.linalg.solve(L.T, pts.T).T
