"""Decay-rate certificates for the attack-resilient receding-horizon loop.

From a validated plant spec this module derives, in closed form:

* ``lam``        -- per-step contraction factor of the auxiliary-loop
                    Lyapunov function W(x) = x' Pbar x,
* ``phi_N``      -- quadratic upper-bound coefficient on the horizon value
                    function, V_N(x) <= phi_N |x|^2, increasing to phi_inf,
* ``alpha_N``    -- bound on the relative growth (V_{N+1} - V_N) / V_N,
                    strictly decreasing to zero,
* ``rho_N``      -- one-step discount of V_N along the controlled plant,
* ``gamma(N,S)`` / ``gamma_hat(N,S)`` -- contraction rates certifying
                    exponential / asymptotic closed-loop stability under at
                    most S consecutive replay attacks,
* ``Nstar(S)`` / ``Nhat_star(S)`` -- minimal horizons making those rates
                    less than one (verified by exhaustive scan to a cap),
* ``PiE(S)`` / ``PiA(S)`` -- closed-form upper bounds on the two thresholds,
* ``Sstar(N)`` / ``Shat_star(N)`` -- the largest certified attack burst for
                    a fixed horizon,
* the infinite-horizon cost bound V_N(x0) / (1 - gamma(N,S)).

Two variants of ``lam`` circulate for this construction; they differ in
which extreme eigenvalues of Qbar and Pbar enter.  The default ``proof``
mode uses 1 - eig_min(Qbar)/eig_max(Pbar), the value for which the
contraction chain is provable; ``table`` mode uses
1 - eig_max(Qbar)/eig_min(Pbar) for comparison.  Products of many (1 +
alpha) factors are accumulated in log space.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import CertificateError, DomainError
from .horizonqp import DEFAULT_SETTINGS, SolverSettings, value_VN
from .matrixcore import sym_eig_extremes
from .plant import SystemSpec

LAMBDA_MODES = ("proof", "table")
DEFAULT_N_CAP = 500


def compute_lambda(spec: SystemSpec, mode: str = "proof") -> float:
    """Contraction factor of W along the auxiliary loop, in (0, 1)."""
    if mode not in LAMBDA_MODES:
        raise DomainError(f"lambda mode must be one of {LAMBDA_MODES}, got {mode!r}")
    qlo, qhi = sym_eig_extremes(spec.Qbar)
    plo, phi = sym_eig_extremes(spec.Pbar)
    lam = 1.0 - qlo / phi if mode == "proof" else 1.0 - qhi / plo
    if not 0.0 < lam < 1.0:
        raise CertificateError(
            f"contraction factor {lam:.6g} outside (0, 1) in {mode!r} mode; "
            "the Lyapunov weights leave no certified margin"
        )
    return lam


class CertificateTable:
    """Cached certificate quantities for one (spec, lambda-mode) pair.

    Arrays indexed by horizon are grown on demand; every rate query is O(1)
    afterwards thanks to prefix sums of log(1 + alpha).
    """

    def __init__(self, spec: SystemSpec, lambda_mode: str = "proof"):
        self.spec = spec
        self.lambda_mode = lambda_mode
        self.lam = compute_lambda(spec, lambda_mode)
        p_lo, _ = sym_eig_extremes(spec.P)
        pb_lo, pb_hi = sym_eig_extremes(spec.Pbar)
        _, pk_hi = sym_eig_extremes(spec.P + spec.K.T @ spec.Q @ spec.K)
        _, growth_hi = sym_eig_extremes(spec.K.T @ spec.Q @ spec.K + spec.Abar.T @ spec.P @ spec.Abar)
        self.p_min = p_lo
        self.prefactor = pb_hi * pk_hi / pb_lo
        self.phi_inf = self.prefactor / (1.0 - self.lam)
        self.chi = 1.0 - p_lo / self.phi_inf
        self.psi = growth_hi / p_lo
        if not 0.0 < self.chi < 1.0:
            raise CertificateError(f"chi = {self.chi:.6g} outside (0, 1)")
        # arrays over N = 1..len: phi values, log(alpha_N), prefix sums of log1p(alpha)
        self._phi = np.empty(0)
        self._log_alpha = np.empty(0)
        self._prefix_log1p_alpha = np.zeros(1)

    def _ensure(self, N: int) -> None:
        have = self._phi.size
        if N <= have:
            return
        size = max(N, 2 * have, 64)
        ns = np.arange(have + 1, size + 1, dtype=float)
        phi_new = self.prefactor * (-np.expm1((ns + 1) * np.log(self.lam))) / (1.0 - self.lam)
        self._phi = np.concatenate([self._phi, phi_new])
        factors = 1.0 - self.p_min / self._phi[have:size]
        if np.any(factors <= 0.0) or np.any(factors >= 1.0):
            raise CertificateError("a horizon contraction factor left (0, 1)")
        log_fac = np.log(factors)
        base = self._log_alpha[-1] - np.log(self.psi) if have else 0.0
        log_alpha_new = np.log(self.psi) + base + np.cumsum(log_fac)
        self._log_alpha = np.concatenate([self._log_alpha, log_alpha_new])
        log1p_new = np.log1p(np.exp(log_alpha_new))
        self._prefix_log1p_alpha = np.concatenate(
            [self._prefix_log1p_alpha, self._prefix_log1p_alpha[-1] + np.cumsum(log1p_new)]
        )

    # -- scalar quantities, 1-indexed by horizon --

    def phi(self, N: int) -> float:
        if N < 1:
            raise DomainError(f"phi requires N >= 1, got {N}")
        self._ensure(N)
        return float(self._phi[N - 1])

    def alpha(self, N: int) -> float:
        if N < 1:
            raise DomainError(f"alpha requires N >= 1, got {N}")
        self._ensure(N)
        return float(np.exp(self._log_alpha[N - 1]))

    def _log1p_alpha(self, N: int) -> float:
        self._ensure(N)
        return float(self._prefix_log1p_alpha[N] - self._prefix_log1p_alpha[N - 1])

    def _log1p_alpha_range(self, lo: int, hi: int) -> float:
        """Sum of log(1 + alpha_l) for l in [lo, hi]; empty ranges give 0."""
        if hi < lo:
            return 0.0
        self._ensure(hi)
        return float(self._prefix_log1p_alpha[hi] - self._prefix_log1p_alpha[lo - 1])

    def rho(self, N: int) -> float:
        if N < 2:
            raise DomainError(f"rho requires N >= 2, got {N}")
        return float(np.exp(self._log1p_alpha(N - 1)) * (1.0 - self.p_min / self.phi(N)))

    def log_gamma(self, N: int, S: int) -> float:
        if S < 0:
            raise DomainError(f"S must be non-negative, got {S}")
        if N < S + 2:
            raise DomainError(f"gamma requires N >= S + 2, got N={N}, S={S}")
        arm_single = self._log1p_alpha(N - S - 1)
        arm_chain = self._log1p_alpha(N - 1) + self._log1p_alpha_range(N - S, N - 1)
        return float(np.log(self.chi) + max(arm_single, arm_chain))

    def gamma(self, N: int, S: int) -> float:
        return float(np.exp(self.log_gamma(N, S)))

    def log_gamma_hat(self, N: int, S: int) -> float:
        if S < 1:
            raise DomainError(f"gamma_hat requires S >= 1, got {S}")
        if N < S + 3:
            raise DomainError(f"gamma_hat requires N >= S + 3, got N={N}, S={S}")
        log_chi = np.log(self.chi)
        inner_best = 0.0  # empty product at s = 1
        inner = 0.0
        for ell in range(2, S + 1):
            inner += log_chi + self._log1p_alpha(N - ell - 1)
            inner_best = max(inner_best, inner)
        return float(
            2.0 * log_chi
            + self._log1p_alpha(N - 1)
            + self._log1p_alpha(N - 2)
            + inner_best
            + self._log1p_alpha_range(N - S, N - 1)
        )

    def gamma_hat(self, N: int, S: int) -> float:
        return float(np.exp(self.log_gamma_hat(N, S)))

    def log_beta(self, N: int, S: int) -> float:
        if N < S + 2:
            raise DomainError(f"beta requires N >= S + 2, got N={N}, S={S}")
        return float(
            np.log(self.chi) + (S + 2) * np.log1p(self.psi * self.chi ** (N - S - 1))
        )

    def beta(self, N: int, S: int) -> float:
        return float(np.exp(self.log_beta(N, S)))

    # -- threshold scans --

    def Nstar(self, S: int, N_cap: int = DEFAULT_N_CAP) -> int:
        return self._threshold_scan(self.log_gamma, S, S + 2, N_cap, "gamma")

    def Nhat_star(self, S: int, N_cap: int = DEFAULT_N_CAP) -> int:
        if S < 1:
            raise DomainError(f"Nhat_star requires S >= 1, got {S}")
        return self._threshold_scan(self.log_gamma_hat, S, S + 3, N_cap, "gamma_hat")

    def _threshold_scan(self, log_rate, S: int, floor: int, N_cap: int, name: str) -> int:
        if S < 1:
            raise DomainError(f"threshold scans require S >= 1, got {S}")
        if N_cap < floor:
            raise DomainError(f"N_cap={N_cap} is below the scan floor {floor}")
        self._ensure(N_cap)
        logs = np.array([log_rate(N, S) for N in range(floor, N_cap + 1)])
        if logs[-1] >= 0.0:
            raise CertificateError(
                f"{name} never drops below 1 up to N_cap={N_cap} "
                f"(minimum rate {np.exp(logs.min()):.6g}); raise the cap"
            )
        above = np.nonzero(logs >= 0.0)[0]
        return floor + (int(above[-1]) + 1 if above.size else 0)

    def Sstar(self, N: int) -> int:
        if N < 3:
            raise DomainError(f"Sstar requires N >= 3, got {N}")
        S = 0
        while S + 1 <= N - 2 and self.log_gamma(N, S + 1) < 0.0:
            S += 1
        return S

    def Shat_star(self, N: int) -> int:
        if N < 3:
            raise DomainError(f"Shat_star requires N >= 3, got {N}")
        S = 0
        while S + 1 <= N - 3 and self.log_gamma_hat(N, S + 1) < 0.0:
            S += 1
        return S

    # -- closed-form threshold bounds --

    def PiE(self, S: int) -> float:
        if S < 2:
            raise DomainError(f"PiE requires S >= 2, got {S}")
        log_chi = np.log(self.chi)
        return float(
            S + 1 + (np.log(self.chi ** (-1.0 / (S + 2)) - 1.0) - np.log(self.psi)) / log_chi
        )

    def PiA(self, S: int) -> float:
        if S < 2:
            raise DomainError(f"PiA requires S >= 2, got {S}")
        log_chi = np.log(self.chi)
        expo = (S + 1.0) / (2.0 * S + 1.0)
        return float(
            S + 1 + (np.log(self.chi ** (-expo) - 1.0) - np.log(self.psi)) / log_chi
        )


@lru_cache(maxsize=32)
def _table(spec: SystemSpec, mode: str) -> CertificateTable:
    return CertificateTable(spec, mode)


def table_for(spec: SystemSpec, lambda_mode: str = "proof") -> CertificateTable:
    """Shared per-spec certificate table (memoized)."""
    return _table(spec, lambda_mode)


def compute_phi(spec: SystemSpec, N: int, lam: float | None = None,
                lambda_mode: str = "proof") -> float:
    """Quadratic upper-bound coefficient on V_N: prefactor * (1-lam^(N+1))/(1-lam)."""
    if lam is None:
        return table_for(spec, lambda_mode).phi(N)
    if not 0.0 < lam < 1.0:
        raise DomainError(f"lam must lie in (0, 1), got {lam}")
    if N < 1:
        raise DomainError(f"phi requires N >= 1, got {N}")
    t = table_for(spec, lambda_mode)
    return float(t.prefactor * (-np.expm1((N + 1) * np.log(lam))) / (1.0 - lam))


def compute_phi_inf(spec: SystemSpec, lam: float | None = None,
                    lambda_mode: str = "proof") -> float:
    t = table_for(spec, lambda_mode)
    if lam is None:
        return t.phi_inf
    if not 0.0 < lam < 1.0:
        raise DomainError(f"lam must lie in (0, 1), got {lam}")
    return float(t.prefactor / (1.0 - lam))


def compute_alpha(spec: SystemSpec, N: int, phi_sequence=None,
                  lambda_mode: str = "proof") -> float:
    """Relative-growth coefficient alpha_N = psi * prod_k (1 - eig_min(P)/phi_k)."""
    t = table_for(spec, lambda_mode)
    if phi_sequence is None:
        return t.alpha(N)
    if N < 1 or len(phi_sequence) < N:
        raise DomainError("phi_sequence must cover horizons 1..N")
    factors = 1.0 - t.p_min / np.asarray(phi_sequence[:N], dtype=float)
    if np.any(factors <= 0.0) or np.any(factors >= 1.0):
        raise CertificateError("a horizon contraction factor left (0, 1)")
    return float(t.psi * np.exp(np.sum(np.log(factors))))


def compute_rho(spec: SystemSpec, N: int, lambda_mode: str = "proof") -> float:
    return table_for(spec, lambda_mode).rho(N)


def compute_gamma(spec: SystemSpec, N: int, S: int, lambda_mode: str = "proof") -> float:
    return table_for(spec, lambda_mode).gamma(N, S)


def compute_gamma_hat(spec: SystemSpec, N: int, S: int, lambda_mode: str = "proof") -> float:
    return table_for(spec, lambda_mode).gamma_hat(N, S)


def find_Nstar(spec: SystemSpec, S: int, N_cap: int = DEFAULT_N_CAP,
               lambda_mode: str = "proof") -> int:
    """Smallest horizon from which gamma stays below 1, scanned up to N_cap."""
    return table_for(spec, lambda_mode).Nstar(S, N_cap)


def find_Nhat_star(spec: SystemSpec, S: int, N_cap: int = DEFAULT_N_CAP,
                   lambda_mode: str = "proof") -> int:
    return table_for(spec, lambda_mode).Nhat_star(S, N_cap)


def find_Sstar(spec: SystemSpec, N: int, lambda_mode: str = "proof") -> int:
    """Largest attack burst S with gamma(N, S') < 1 for every S' <= S."""
    return table_for(spec, lambda_mode).Sstar(N)


def find_Shat_star(spec: SystemSpec, N: int, lambda_mode: str = "proof") -> int:
    return table_for(spec, lambda_mode).Shat_star(N)


def bound_PiE(spec: SystemSpec, S: int, lambda_mode: str = "proof") -> float:
    """Closed-form upper bound on Nstar(S)."""
    return table_for(spec, lambda_mode).PiE(S)


def bound_PiA(spec: SystemSpec, S: int, lambda_mode: str = "proof") -> float:
    """Closed-form upper bound on Nhat_star(S)."""
    return table_for(spec, lambda_mode).PiA(S)


def chi_psi(spec: SystemSpec, lambda_mode: str = "proof") -> tuple[float, float]:
    t = table_for(spec, lambda_mode)
    return t.chi, t.psi


def cost_bound(
    spec: SystemSpec,
    x0: np.ndarray,
    N: int,
    S: int,
    lambda_mode: str = "proof",
    settings: SolverSettings = DEFAULT_SETTINGS,
) -> float:
    """Certified infinite-horizon cost bound V_N(x0) / (1 - gamma(N, S))."""
    t = table_for(spec, lambda_mode)
    log_g = t.log_gamma(N, S)
    if log_g >= 0.0:
        raise CertificateError(
            f"gamma({N}, {S}) = {np.exp(log_g):.6g} >= 1: no certified cost bound"
        )
    return value_VN(spec, x0, N, settings) / (1.0 - np.exp(log_g))


@dataclass(frozen=True)
class CertificateSet:
    """Snapshot of every certificate quantity for one (spec, N, S) cell."""

    lambda_mode: str
    lam: float
    phi_N: float
    phi_inf: float
    alpha_N: float
    rho_N: float | None
    gamma: float | None
    gamma_hat: float | None
    beta: float | None
    chi: float
    psi: float

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def certificate_set(spec: SystemSpec, N: int, S: int, lambda_mode: str = "proof") -> CertificateSet:
    t = table_for(spec, lambda_mode)
    return CertificateSet(
        lambda_mode=lambda_mode,
        lam=t.lam,
        phi_N=t.phi(N),
        phi_inf=t.phi_inf,
        alpha_N=t.alpha(N),
        rho_N=t.rho(N) if N >= 2 else None,
        gamma=t.gamma(N, S) if N >= S + 2 else None,
        gamma_hat=t.gamma_hat(N, S) if (S >= 1 and N >= S + 3) else None,
        beta=t.beta(N, S) if N >= S + 2 else None,
        chi=t.chi,
        psi=t.psi,
    )
