"""Security-investment allocation over a shared network.

Each player runs its own receding-horizon loop (fixed horizon ``N_i``,
per-plant constants ``chi_i`` and ``psi_i``) and chooses an investment
``M_i`` in a private box.  The network-wide security level ``smap(sum M)``
feeds every player's attack-exposure term

    C_i(M) = (1 + psi_i chi_i^(N_i - smap(y)))^(smap(y) + 1) + a_i M_i^2 / 2,
    y = sum_j M_j,

and is capped by the smallest certified attack tolerance among the
players: ``smap(y) <= cap``.  The security level enters the exposure term
as a real number (no rounding).  Two solvers are provided: a cyclic
best-response iteration for the competitive game, and projected gradient
descent for the cooperative sum-of-costs program.  Gradients are the
analytic derivatives of the cost as implemented.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, InfeasibleError
from .certificates import chi_psi, find_Sstar
from .plant import load_system_spec

_BISECT_STEPS = 200


@dataclass(frozen=True)
class SecurityMap:
    """Convex, non-decreasing, smooth map from total investment to security level.

    ``affine``:   sigma0 + sigma1 * y
    ``softplus``: sigma0 + sigma1 * log(1 + exp(beta (y - y0))) / beta
    """

    kind: str = "affine"
    sigma0: float = 0.0
    sigma1: float = 1.0
    beta: float = 1.0
    y0: float = 0.0

    def __post_init__(self):
        if self.kind not in ("affine", "softplus"):
            raise DomainError(f"unknown security map kind {self.kind!r}")
        if self.sigma0 < 0 or self.sigma1 < 0:
            raise DomainError("security map coefficients must be non-negative")
        if self.kind == "softplus" and self.beta <= 0:
            raise DomainError("softplus sharpness beta must be positive")

    def value(self, y: float) -> float:
        if y < 0:
            raise DomainError(f"total investment must be non-negative, got {y}")
        if self.kind == "affine":
            return self.sigma0 + self.sigma1 * y
        return self.sigma0 + self.sigma1 * np.logaddexp(0.0, self.beta * (y - self.y0)) / self.beta

    def deriv(self, y: float) -> float:
        if y < 0:
            raise DomainError(f"total investment must be non-negative, got {y}")
        if self.kind == "affine":
            return self.sigma1
        from scipy.special import expit

        return self.sigma1 * float(expit(self.beta * (y - self.y0)))

    def deriv2(self, y: float) -> float:
        if y < 0:
            raise DomainError(f"total investment must be non-negative, got {y}")
        if self.kind == "affine":
            return 0.0
        from scipy.special import expit

        sig = float(expit(self.beta * (y - self.y0)))
        return self.sigma1 * self.beta * sig * (1.0 - sig)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "sigma0": self.sigma0, "sigma1": self.sigma1}
        if self.kind == "softplus":
            d.update(beta=self.beta, y0=self.y0)
        return d


def security_level(problem: "AllocationProblem", y: float) -> tuple[float, float, float]:
    """Security level with its first two derivatives at y >= 0."""
    smap = problem.smap
    return smap.value(y), smap.deriv(y), smap.deriv2(y)


@dataclass(frozen=True)
class Player:
    psi: float
    chi: float
    N: int
    a: float
    M_min: float
    M_max: float

    def __post_init__(self):
        if not 0.0 < self.chi < 1.0:
            raise DomainError(f"chi must lie in (0, 1), got {self.chi}")
        if self.psi < 0.0:
            raise DomainError(f"psi must be non-negative, got {self.psi}")
        if self.a <= 0.0:
            raise DomainError(f"investment weight must be positive, got {self.a}")
        if not 0.0 < self.M_min < self.M_max:
            raise DomainError(
                f"investment box must satisfy 0 < M_min < M_max, got [{self.M_min}, {self.M_max}]"
            )
        if self.N < 1:
            raise DomainError(f"horizon must be at least 1, got {self.N}")


@dataclass(frozen=True)
class AllocationProblem:
    players: tuple[Player, ...]
    smap: SecurityMap
    cap: float

    def __post_init__(self):
        if not self.players:
            raise DomainError("an allocation problem needs at least one player")
        if self.cap < 0:
            raise DomainError(f"security cap must be non-negative, got {self.cap}")
        # convexity and monotonicity of the map, probed on a grid
        ys = np.linspace(0.0, self.total_max, 257)
        vals = np.array([self.smap.value(y) for y in ys])
        d1 = np.diff(vals)
        d2 = np.diff(vals, 2)
        if np.any(d1 < -1e-12) or np.any(d2 < -1e-12):
            raise DomainError("security map must be non-decreasing and convex")

    @property
    def V(self) -> int:
        return len(self.players)

    @property
    def total_min(self) -> float:
        return sum(p.M_min for p in self.players)

    @property
    def total_max(self) -> float:
        return sum(p.M_max for p in self.players)

    def box(self) -> tuple[np.ndarray, np.ndarray]:
        return (
            np.array([p.M_min for p in self.players]),
            np.array([p.M_max for p in self.players]),
        )

    def check_feasible_exists(self) -> None:
        if self.smap.value(self.total_min) > self.cap + 1e-9:
            raise InfeasibleError(
                f"even the minimal investments reach security level "
                f"{self.smap.value(self.total_min):.6g} > cap {self.cap:.6g}"
            )

    def feasibility_margin(self, M: np.ndarray) -> float:
        return self.cap - self.smap.value(float(np.sum(M)))

    def y_cap(self) -> float:
        """Largest total investment keeping the security level within the cap."""
        if self.smap.value(self.total_max) <= self.cap:
            return math.inf
        lo, hi = 0.0, self.total_max
        for _ in range(_BISECT_STEPS):
            mid = 0.5 * (lo + hi)
            if self.smap.value(mid) <= self.cap:
                lo = mid
            else:
                hi = mid
        return lo

    def to_dict(self) -> dict:
        return {
            "players": [
                {"psi": p.psi, "chi": p.chi, "N": p.N, "a": p.a,
                 "M_min": p.M_min, "M_max": p.M_max}
                for p in self.players
            ],
            "security_map": self.smap.to_dict(),
            "cap": self.cap,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def load_allocation_problem(source, base_dir=None) -> AllocationProblem:
    """Build a problem from JSON (path or dict).

    Players carry constants directly, or reference a plant spec file from
    which (psi, chi) and the certified attack tolerance are derived; in the
    latter case the cap defaults to the smallest tolerance among players.
    """
    if isinstance(source, (str, Path)):
        base_dir = Path(source).parent
        data = json.loads(Path(source).read_text())
    else:
        data = dict(source)
        base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
    smap = SecurityMap(**data.get("security_map", {}))
    lambda_mode = data.get("lambda_mode", "proof")
    players = []
    tolerances = []
    for entry in data["players"]:
        entry = dict(entry)
        if "spec" in entry:
            spec = load_system_spec(base_dir / entry.pop("spec"), repair=True)
            chi, psi = chi_psi(spec, lambda_mode)
            entry.setdefault("chi", chi)
            entry.setdefault("psi", psi)
            tolerances.append(find_Sstar(spec, entry["N"], lambda_mode))
        players.append(Player(**entry))
    if "cap" in data and data["cap"] is not None:
        cap = float(data["cap"])
    elif tolerances and len(tolerances) == len(players):
        cap = float(min(tolerances))
    else:
        raise DomainError("either a cap or a spec for every player is required")
    return AllocationProblem(players=tuple(players), smap=smap, cap=cap)


def _exposure_log(player: Player, level: float) -> tuple[float, float]:
    """log of the attack-exposure term and the inner log(psi chi^(N - level))."""
    g_log = math.log(player.psi) + (player.N - level) * math.log(player.chi) \
        if player.psi > 0 else -math.inf
    return (level + 1.0) * np.logaddexp(0.0, g_log), g_log


def cost_Ci(problem: AllocationProblem, i: int, M: np.ndarray) -> float:
    """Player i's cost at investment vector M."""
    player = problem.players[i]
    level = problem.smap.value(float(np.sum(M)))
    t_log, _ = _exposure_log(player, level)
    return float(np.exp(t_log) + 0.5 * player.a * M[i] ** 2)


def grad_Ci(problem: AllocationProblem, i: int, M: np.ndarray) -> float:
    """Analytic partial derivative of cost_Ci with respect to M_i."""
    player = problem.players[i]
    y = float(np.sum(M))
    level = problem.smap.value(y)
    slope = problem.smap.deriv(y)
    t_log, g_log = _exposure_log(player, level)
    if player.psi > 0:
        sig = 1.0 / (1.0 + np.exp(-g_log))
        inner = np.logaddexp(0.0, g_log) - (level + 1.0) * math.log(player.chi) * sig
        attack = float(np.exp(t_log) * slope * inner)
    else:
        attack = 0.0
    return attack + player.a * float(M[i])


def total_cost(problem: AllocationProblem, M: np.ndarray) -> float:
    return sum(cost_Ci(problem, i, M) for i in range(problem.V))


def _total_grad(problem: AllocationProblem, M: np.ndarray) -> np.ndarray:
    y = float(np.sum(M))
    level = problem.smap.value(y)
    slope = problem.smap.deriv(y)
    shared = 0.0
    for player in problem.players:
        if player.psi <= 0:
            continue
        t_log, g_log = _exposure_log(player, level)
        sig = 1.0 / (1.0 + np.exp(-g_log))
        inner = np.logaddexp(0.0, g_log) - (level + 1.0) * math.log(player.chi) * sig
        shared += float(np.exp(t_log) * slope * inner)
    own = np.array([p.a for p in problem.players]) * M
    return shared + own


@dataclass(frozen=True)
class ConvexityReport:
    player: int
    checked: int
    worst_second_difference: float
    violations: tuple

    @property
    def ok(self) -> bool:
        return not self.violations


def check_convexity(problem: AllocationProblem, i: int, grid: np.ndarray) -> ConvexityReport:
    """Numerical second differences of C_i along M_i over the given grid."""
    grid = np.asarray(grid, dtype=float)
    lo, hi = problem.box()
    base = 0.5 * (lo + hi)
    h = max(1e-5, 1e-5 * (hi[i] - lo[i]))
    worst = math.inf
    violations = []
    for mi in grid:
        M = base.copy()
        second = None
        vals = []
        for offset in (-h, 0.0, h):
            M[i] = mi + offset
            vals.append(cost_Ci(problem, i, M))
        second = (vals[0] - 2.0 * vals[1] + vals[2]) / h**2
        worst = min(worst, second)
        if second < -1e-8:
            violations.append((float(mi), float(second)))
    return ConvexityReport(
        player=i, checked=grid.size, worst_second_difference=worst,
        violations=tuple(violations),
    )


def _best_response(problem, i, M, lo, hi, tol):
    """Scalar min of C_i over [lo, hi]: derivative bisection, golden fallback."""
    g = lambda mi: grad_Ci(problem, i, _with(M, i, mi))
    f = lambda mi: cost_Ci(problem, i, _with(M, i, mi))
    g_lo, g_hi = g(lo), g(hi)
    if g_lo >= 0.0 and g_hi >= g_lo:
        return lo
    if g_hi <= 0.0 and g_lo <= g_hi:
        return hi
    if g_lo < 0.0 < g_hi:
        a, b = lo, hi
        for _ in range(_BISECT_STEPS):
            mid = 0.5 * (a + b)
            if b - a <= 1e-13 * (1.0 + abs(mid)):
                return mid
            if g(mid) < 0.0:
                a = mid
            else:
                b = mid
        return 0.5 * (a + b)
    # derivative signs inconsistent with convexity: golden-section on the cost
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > 1e-12 * (1.0 + abs(a)):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def _with(M: np.ndarray, i: int, mi: float) -> np.ndarray:
    out = M.copy()
    out[i] = mi
    return out


def _stationarity_residual(problem, M, y_cap) -> float:
    """Worst projected-derivative magnitude over players at M."""
    lo, hi = problem.box()
    y_others = np.sum(M) - M
    worst = 0.0
    for i in range(problem.V):
        g = grad_Ci(problem, i, M)
        upper = min(hi[i], y_cap - y_others[i]) if math.isfinite(y_cap) else hi[i]
        if M[i] <= lo[i] + 1e-12:
            r = max(0.0, -g)
        elif M[i] >= upper - 1e-12:
            r = max(0.0, g)
        else:
            r = abs(g)
        worst = max(worst, r)
    return worst


@dataclass(frozen=True)
class NashResult:
    investments: np.ndarray
    residual: float
    rounds: int
    converged: bool


def solve_nash(problem: AllocationProblem, tol: float = 1e-8, max_rounds: int = 10_000) -> NashResult:
    """Cyclic best responses from the box midpoint, projected into the coupled cap.

    Each player minimizes its own cost over its box intersected with the
    largest investment keeping the shared security level below the cap
    given the others.  Terminates when no player moves more than tol.
    """
    problem.check_feasible_exists()
    lo, hi = problem.box()
    y_cap = problem.y_cap()
    M = 0.5 * (lo + hi)
    if math.isfinite(y_cap) and np.sum(M) > y_cap:
        # start from the guaranteed-feasible corner instead
        M = lo.copy()
    rounds = 0
    for rounds in range(1, max_rounds + 1):
        delta = 0.0
        for i in range(problem.V):
            upper = hi[i]
            if math.isfinite(y_cap):
                upper = min(upper, y_cap - (float(np.sum(M)) - float(M[i])))
            upper = max(upper, lo[i])
            new = _best_response(problem, i, M, lo[i], upper, tol)
            delta = max(delta, abs(new - M[i]))
            M[i] = new
        if delta < tol:
            break
    residual = _stationarity_residual(problem, M, y_cap)
    return NashResult(investments=M, residual=residual, rounds=rounds,
                      converged=residual <= 1e-6)


def project_feasible(problem: AllocationProblem, z: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the box intersected with the investment cap.

    Box-clips first; if the total still exceeds the cap's inverse image,
    shifts along the all-ones direction by a bisected multiplier (the
    constraint normal), re-clipping into the box at every trial.
    """
    lo, hi = problem.box()
    y_cap = problem.y_cap()
    M = np.clip(z, lo, hi)
    if not math.isfinite(y_cap) or np.sum(M) <= y_cap:
        return M
    mu_lo, mu_hi = 0.0, float(np.max(z - lo)) + 1.0
    for _ in range(_BISECT_STEPS):
        mu = 0.5 * (mu_lo + mu_hi)
        M = np.clip(z - mu, lo, hi)
        if np.sum(M) > y_cap:
            mu_lo = mu
        else:
            mu_hi = mu
    return np.clip(z - mu_hi, lo, hi)


@dataclass(frozen=True)
class SocialResult:
    investments: np.ndarray
    value: float
    residual: float
    iterations: int
    converged: bool


def solve_social(problem: AllocationProblem, tol: float = 1e-8, max_iter: int = 20_000) -> SocialResult:
    """Projected gradient descent with backtracking on the sum of costs.

    Returns once the unit-step projected-gradient residual drops below
    min(tol, 1e-7), which certifies first-order optimality of the convex
    program to that accuracy.
    """
    problem.check_feasible_exists()
    target = min(tol, 1e-7)
    M = project_feasible(problem, 0.5 * np.add(*problem.box()))
    f = total_cost(problem, M)
    t = 1.0
    iterations = 0
    for iterations in range(1, max_iter + 1):
        grad = _total_grad(problem, M)
        residual = float(np.max(np.abs(M - project_feasible(problem, M - grad))))
        if residual <= target:
            break
        for _ in range(60):
            cand = project_feasible(problem, M - t * grad)
            step = cand - M
            f_cand = total_cost(problem, cand)
            if f_cand <= f + float(grad @ step) + float(step @ step) / (2.0 * t) + 1e-15:
                break
            t *= 0.5
        M, f = cand, f_cand
        t = min(t * 1.25, 1e6)
    grad = _total_grad(problem, M)
    residual = float(np.max(np.abs(M - project_feasible(problem, M - grad))))
    return SocialResult(investments=M, value=f, residual=residual,
                        iterations=iterations, converged=residual <= 1e-6)
