"""Closed-loop protocol: plan-buffering actuator under a replay channel.

Each step the operator solves the N-horizon problem from the measured
state and transmits the whole input plan.  The actuator keeps the last
plan it received; when the channel replays an old message (detected by
timestamp, modeled as a flag) the actuator ignores the delivery and plays
the buffered plan entry scheduled for the current instant.  With at most
S consecutive attacks and N >= S + 1 the buffer never runs dry.

The trace records, per step, the state, applied input, attack flags, the
monitored Lyapunov value V_{N - s(k-1)}(x(k)), the running cost and the
certified envelope gamma^k V_N(x(0)), plus enough metadata to check the
decay and accumulated-cost certificates afterwards.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .certificates import table_for
from .errors import (
    CertificateError,
    DomainError,
    InfeasibleError,
    NumericsError,
    ResilienceViolationError,
)
from .horizonqp import DEFAULT_SETTINGS, SolverSettings, build_nqp, solve_nqp
from .matrixcore import quad_form
from .plant import SystemSpec, in_X0, step
from .replay import AttackerState, AttackSchedule, channel_step, update_counter


@dataclass(frozen=True)
class ActuatorState:
    """Buffered input plan, its creation step, and its age in steps."""

    plan: np.ndarray
    created_at: int
    age: int = 0


def actuator_step(
    state: ActuatorState | None,
    delivered: np.ndarray,
    attacked: bool,
    now: int | None = None,
) -> tuple[np.ndarray, ActuatorState]:
    """Apply one actuator decision.

    Fresh delivery: buffer the plan, apply its first input.  Replayed
    delivery: keep the buffer, apply the entry planned for the current
    instant (index = age).  Raises ResilienceViolationError when the
    buffer is exhausted, which means the horizon was shorter than the
    attack run plus one.
    """
    if not attacked:
        new = ActuatorState(plan=np.asarray(delivered, dtype=float),
                            created_at=now if now is not None else 0, age=0)
        return new.plan[0], new
    if state is None:
        raise ResilienceViolationError("attacked before any plan was buffered")
    age = state.age + 1
    if age >= state.plan.shape[0]:
        raise ResilienceViolationError(
            f"plan buffer exhausted after {age} consecutive attacks; "
            f"horizon {state.plan.shape[0]} is too short"
        )
    if now is not None and state.created_at + age != now:
        raise NumericsError(
            f"buffer index drift: plan from step {state.created_at} asked for "
            f"offset {age} at step {now}"
        )
    new = ActuatorState(plan=state.plan, created_at=state.created_at, age=age)
    return new.plan[age], new


@dataclass
class ClosedLoopTrace:
    """Per-step closed-loop record plus certificate metadata."""

    N: int
    S: int
    theta: np.ndarray
    s: np.ndarray
    states: np.ndarray       # x(k), one row per recorded step
    inputs: np.ndarray       # applied input at step k
    lyap: np.ndarray         # V_{N - s(k-1)}(x(k)); nan when monitoring is off
    stage_cost: np.ndarray   # |x(k)|_P^2 + |u(k)|_Q^2
    envelope: np.ndarray     # gamma^k V_N(x(0)); nan when gamma is undefined
    final_state: np.ndarray  # x(T)
    V0: float                # V_N(x(0))
    gamma: float             # nan when undefined for (N, S)
    phi_N: float
    lambda_mode: str = "proof"
    stopped_early: bool = False

    @property
    def T(self) -> int:
        return self.theta.shape[0]


def _shift_warm(spec: SystemSpec, sol) -> tuple[np.ndarray, np.ndarray]:
    """Shift a solved plan one step and extend it with the auxiliary gain."""
    last = sol.states[-1]
    states = np.vstack([sol.states[1:], spec.Abar @ last])
    inputs = np.vstack([sol.inputs[1:], spec.K @ last])
    return states, inputs


def run_closed_loop(
    spec: SystemSpec,
    N: int,
    schedule: AttackSchedule,
    x0: np.ndarray,
    settings: SolverSettings = DEFAULT_SETTINGS,
    *,
    lyapunov_monitor: bool = True,
    lambda_mode: str = "proof",
    stop_tol: float = 1e-12,
) -> ClosedLoopTrace:
    """Simulate the protocol over an attack schedule.

    The operator re-solves and transmits every step (it has no attack
    knowledge); the channel decides what the actuator sees.  The run stops
    early once |x|_P^2 falls below stop_tol times its initial value; the
    tail is covered by the certificate arithmetic in accumulated_cost.
    Raises on solver failures rather than applying a non-optimal input.
    """
    S = schedule.S
    if N < S + 1:
        raise DomainError(f"horizon N={N} must be at least S+1={S + 1}")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    inside, margin = in_X0(spec, x0)
    if not inside:
        raise InfeasibleError(f"x0 outside the ellipsoidal set (margin {margin:.3e})")

    gamma = math.nan
    phi_N = math.nan
    try:
        table = table_for(spec, lambda_mode)
        phi_N = table.phi(N)
        if N >= S + 2:
            gamma = table.gamma(N, S)
    except CertificateError:
        pass

    T = len(schedule)
    theta_arr = np.zeros(T, dtype=int)
    s_arr = np.zeros(T, dtype=int)
    states = np.zeros((T, spec.n))
    inputs = np.zeros((T, spec.m))
    lyap = np.full(T, math.nan)
    stage = np.zeros(T)
    envelope = np.full(T, math.nan)

    x = x0.copy()
    x0_weight = quad_form(x0, spec.P)
    attacker = AttackerState()
    actuator: ActuatorState | None = None
    s_prev = 0
    V0 = math.nan
    warm = None
    monitor_warm: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    recorded = 0

    for k, theta in enumerate(schedule.flags):
        sol = solve_nqp(build_nqp(spec, x, N), settings, warm=warm)
        if sol.status != "optimal":
            raise NumericsError(f"horizon solve at step {k} ended with status {sol.status!r}")
        warm = _shift_warm(spec, sol) if settings.warm_start else None
        if k == 0:
            V0 = sol.value

        if lyapunov_monitor:
            if s_prev == 0:
                lyap_val = sol.value
            else:
                h = N - s_prev
                msol = solve_nqp(build_nqp(spec, x, h), settings, warm=monitor_warm.get(h))
                if msol.status != "optimal":
                    raise NumericsError(f"monitor solve at step {k} failed: {msol.status!r}")
                monitor_warm[h] = _shift_warm(spec, msol)
                lyap_val = msol.value
            lyap[k] = lyap_val

        delivered, attacked, attacker = channel_step(attacker, theta, sol.inputs)
        u, actuator = actuator_step(actuator, delivered, attacked, now=k)

        theta_arr[k] = theta
        s_arr[k] = update_counter(s_prev, theta)
        states[k] = x
        inputs[k] = u
        stage[k] = quad_form(x, spec.P) + quad_form(u, spec.Q)
        if not math.isnan(gamma) and gamma < 1.0:
            envelope[k] = gamma**k * V0
        s_prev = s_arr[k]
        x = step(spec, x, u)
        recorded = k + 1
        if 0.0 < quad_form(x, spec.P) < stop_tol * x0_weight:
            break

    stopped_early = recorded < T
    sl = slice(0, recorded)
    return ClosedLoopTrace(
        N=N, S=S,
        theta=theta_arr[sl], s=s_arr[sl], states=states[sl], inputs=inputs[sl],
        lyap=lyap[sl], stage_cost=stage[sl], envelope=envelope[sl],
        final_state=x, V0=V0, gamma=gamma, phi_N=phi_N,
        lambda_mode=lambda_mode, stopped_early=stopped_early,
    )


@dataclass(frozen=True)
class DecayReport:
    """Outcome of checking the exponential envelope along a trace."""

    max_ratio: float
    first_violation: int | None
    checked: int

    @property
    def ok(self) -> bool:
        return self.first_violation is None


def verify_decay(trace: ClosedLoopTrace, gamma: float) -> DecayReport:
    """Check V_{N-s(k-1)}(x(k)) <= gamma^k V_N(x(0)) with 1e-6 relative slack."""
    if not 0.0 < gamma < 1.0:
        raise DomainError(f"gamma must lie in (0, 1), got {gamma}")
    if np.any(np.isnan(trace.lyap)):
        raise DomainError("trace has no Lyapunov column; rerun with the monitor on")
    max_ratio = 0.0
    first_violation = None
    for k in range(trace.T):
        bound = gamma**k * trace.V0
        if bound == 0.0:
            ratio = 0.0 if trace.lyap[k] <= 1e-15 else math.inf
        else:
            ratio = trace.lyap[k] / bound
        max_ratio = max(max_ratio, ratio)
        if trace.lyap[k] > bound * (1.0 + 1e-6) and first_violation is None:
            first_violation = k
    return DecayReport(max_ratio=max_ratio, first_violation=first_violation, checked=trace.T)


@dataclass(frozen=True)
class CostReport:
    """Accumulated running cost against the certified infinite-horizon bound."""

    total: float
    bound: float
    satisfied: bool
    tail: float
    truncated: bool


def accumulated_cost(trace: ClosedLoopTrace) -> CostReport:
    """Total running cost (with a certified tail for the unsimulated steps).

    The tail after the last recorded step is bounded by
    phi_N |x(T)|^2 / (1 - gamma) and folded into the total; ``truncated``
    flags tails that exceed 1e-9 of the total.
    """
    if math.isnan(trace.gamma) or trace.gamma >= 1.0:
        raise CertificateError(
            f"no contraction certificate for (N={trace.N}, S={trace.S}); "
            "the accumulated-cost bound is undefined"
        )
    simulated = float(np.sum(trace.stage_cost))
    tail = trace.phi_N * float(trace.final_state @ trace.final_state) / (1.0 - trace.gamma)
    total = simulated + tail
    bound = trace.V0 / (1.0 - trace.gamma)
    return CostReport(
        total=total,
        bound=bound,
        satisfied=total <= bound * (1.0 + 1e-6),
        tail=tail,
        truncated=total > 0 and tail > 1e-9 * total,
    )


def _atomic_write(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_trace_csv(trace: ClosedLoopTrace, path) -> None:
    """Persist the per-step record; columns are frozen for downstream tooling."""
    n = trace.states.shape[1]
    m = trace.inputs.shape[1]
    header = (
        ["k", "theta", "s"]
        + [f"x_{i + 1}" for i in range(n)]
        + [f"u_{j + 1}" for j in range(m)]
        + ["lyap", "stage_cost", "envelope"]
    )
    lines = [",".join(header)]
    for k in range(trace.T):
        row = [str(k), str(int(trace.theta[k])), str(int(trace.s[k]))]
        row += [_fmt(v) for v in trace.states[k]]
        row += [_fmt(v) for v in trace.inputs[k]]
        row += [_fmt(trace.lyap[k]), _fmt(trace.stage_cost[k]), _fmt(trace.envelope[k])]
        lines.append(",".join(row))
    _atomic_write(path, "\n".join(lines) + "\n")


def summarize_trace(trace: ClosedLoopTrace, Nstar: int | None = None) -> dict:
    """Summary dict with the certificate checks evaluated where defined."""
    decay_ok = None
    cost_ok = None
    total = float(np.sum(trace.stage_cost))
    bound = None
    if not math.isnan(trace.gamma) and trace.gamma < 1.0:
        decay_ok = verify_decay(trace, trace.gamma).ok
        report = accumulated_cost(trace)
        total, bound, cost_ok = report.total, report.bound, report.satisfied
    return {
        "N": trace.N,
        "S": trace.S,
        "gamma": None if math.isnan(trace.gamma) else trace.gamma,
        "Nstar": Nstar,
        "total_cost": total,
        "cost_bound": bound,
        "decay_ok": decay_ok,
        "cost_ok": cost_ok,
    }


def write_summary_json(summary: dict, path) -> None:
    _atomic_write(path, json.dumps(summary, indent=2) + "\n")
