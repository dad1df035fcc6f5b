"""Small dense symmetric-matrix numerics used throughout the package.

Everything here operates on plain ``numpy`` arrays at desk scale (n <= 10):
eigenvalue extremes of symmetric matrices, discrete Lyapunov solves,
spectral radii and quadratic forms.  Symmetric eigenvalues use closed forms
for n <= 2 and a cyclic Jacobi iteration for n >= 3; the Lyapunov equation
is solved through its Kronecker-vectorized linear system.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError, InstabilityError, NumericsError

SYMMETRY_RTOL = 1e-12
LYAPUNOV_RESIDUAL_TOL = 1e-9

_JACOBI_SWEEPS = 60
_JACOBI_OFF_TOL = 1e-15


def as_square(M: np.ndarray, name: str = "matrix") -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DomainError(f"{name} must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise DomainError(f"{name} contains non-finite entries")
    return M


def require_symmetric(M: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Validate |M_ij - M_ji| <= 1e-12 * (1 + |M_ij|) entrywise."""
    M = as_square(M, name)
    gap = np.abs(M - M.T)
    tol = SYMMETRY_RTOL * (1.0 + np.abs(M))
    if np.any(gap > tol):
        i, j = np.unravel_index(np.argmax(gap - tol), M.shape)
        raise DomainError(
            f"{name} is not symmetric: entry ({i},{j}) differs from its "
            f"transpose by {gap[i, j]:.3e}"
        )
    return M


def _jacobi_eigenvalues(M: np.ndarray) -> np.ndarray:
    """All eigenvalues of a symmetric matrix by cyclic Jacobi rotations."""
    A = M.copy()
    n = A.shape[0]
    scale = np.linalg.norm(A, "fro")
    if scale == 0.0:
        return np.zeros(n)
    converged = False
    for _ in range(_JACOBI_SWEEPS):
        off = np.sqrt(np.sum(np.tril(A, -1) ** 2) * 2.0)
        if off <= _JACOBI_OFF_TOL * scale:
            converged = True
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= _JACOBI_OFF_TOL * scale:
                    continue
                # classic stable rotation: tan(2*theta) = 2 a_pq / (a_qq - a_pp)
                tau = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = np.sign(tau) / (abs(tau) + np.hypot(1.0, tau)) if tau != 0.0 else 1.0
                c = 1.0 / np.hypot(1.0, t)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = c
                rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                A = rot.T @ A @ rot
                A = 0.5 * (A + A.T)
    if not converged:
        off = np.sqrt(np.sum(np.tril(A, -1) ** 2) * 2.0)
        if off > _JACOBI_OFF_TOL * scale:
            raise NumericsError("Jacobi eigenvalue iteration did not converge")
    return np.sort(np.diag(A))


def sym_eig_extremes(M: np.ndarray) -> tuple[float, float]:
    """Smallest and largest eigenvalue of a symmetric matrix.

    Closed form for n <= 2, cyclic Jacobi iteration otherwise.
    Raises DomainError on non-symmetric input.
    """
    M = require_symmetric(M)
    n = M.shape[0]
    if n == 1:
        v = float(M[0, 0])
        return v, v
    if n == 2:
        mean = 0.5 * (M[0, 0] + M[1, 1])
        radius = np.hypot(0.5 * (M[0, 0] - M[1, 1]), M[0, 1])
        return float(mean - radius), float(mean + radius)
    eigs = _jacobi_eigenvalues(M)
    return float(eigs[0]), float(eigs[-1])


def is_positive_definite(M: np.ndarray) -> bool:
    lo, _ = sym_eig_extremes(M)
    return lo > 0.0


def spectral_radius(M: np.ndarray) -> float:
    """Largest eigenvalue modulus, via LAPACK's Hessenberg QR iteration."""
    M = as_square(M)
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def solve_discrete_lyapunov(Abar: np.ndarray, Qbar: np.ndarray) -> np.ndarray:
    """Solve Abar' P Abar - P = -Qbar for symmetric positive definite P.

    Uses the Kronecker-vectorized linear system
    (I - Abar' (x) Abar') vec(P) = vec(Qbar), solved by partial-pivoted
    Gaussian elimination.  Requires spectral_radius(Abar) < 1 and Qbar
    symmetric positive definite; the returned P satisfies the equation to
    a max-norm residual of 1e-9.
    """
    Abar = as_square(Abar, "Abar")
    Qbar = require_symmetric(Qbar, "Qbar")
    if Abar.shape != Qbar.shape:
        raise DomainError(
            f"dimension mismatch: Abar is {Abar.shape}, Qbar is {Qbar.shape}"
        )
    if not is_positive_definite(Qbar):
        raise DomainError("Qbar must be positive definite")
    rho = spectral_radius(Abar)
    if rho >= 1.0:
        raise InstabilityError(f"spectral radius {rho:.6f} >= 1; Lyapunov equation has no PD solution")
    n = Abar.shape[0]
    lhs = np.eye(n * n) - np.kron(Abar.T, Abar.T)
    P = np.linalg.solve(lhs, Qbar.reshape(-1)).reshape(n, n)
    P = 0.5 * (P + P.T)
    residual = float(np.max(np.abs(Abar.T @ P @ Abar - P + Qbar)))
    if residual > LYAPUNOV_RESIDUAL_TOL:
        raise NumericsError(f"Lyapunov residual {residual:.3e} exceeds {LYAPUNOV_RESIDUAL_TOL}")
    if not is_positive_definite(P):
        raise NumericsError("Lyapunov solution is not positive definite")
    return P


def quad_form(x: np.ndarray, M: np.ndarray) -> float:
    """x' M x, evaluated in a fixed order (x . (M x))."""
    x = np.asarray(x, dtype=float).reshape(-1)
    M = np.asarray(M, dtype=float)
    if M.shape != (x.size, x.size):
        raise DomainError(f"dimension mismatch: x has size {x.size}, M is {M.shape}")
    return float(x @ (M @ x))
