"""Replay-attacker state machine and bounded attack schedules.

The adversary sits on the operator-to-actuator link.  On an idle step the
fresh message passes through and is copied into the attacker memory; on an
attack step the fresh message is dropped and the memorized one is delivered
instead (flagged, since replays are assumed detectable).  A schedule is a
0/1 flag sequence whose runs of ones never exceed the attacker's energy
budget S, and whose first flag is 0 so the memory is primed.

Random schedules are drawn from an explicit xorshift64* generator (not
numpy) so that traces are bit-reproducible from a seed across platforms;
see :class:`Xorshift64Star` for the exact recurrence.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DomainError, ProtocolError

_MASK64 = (1 << 64) - 1


class Xorshift64Star:
    """Marsaglia xorshift64* with the 2685821657736338717 multiplier.

    State update: x ^= x >> 12;  x ^= (x << 25) & 2^64-1;  x ^= x >> 27;
    output = (x * 2685821657736338717) mod 2^64.  The seed is mixed through
    one splitmix64 round so that seed 0 is usable; a zero state after
    mixing falls back to the golden-ratio constant 0x9E3779B97F4A7C15.
    """

    def __init__(self, seed: int):
        z = (int(seed) + 0x9E3779B97F4A7C15) & _MASK64
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        z ^= z >> 31
        self.state = z if z != 0 else 0x9E3779B97F4A7C15

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x = (x ^ (x << 25)) & _MASK64
        x ^= x >> 27
        self.state = x
        return (x * 2685821657736338717) & _MASK64

    def next_bit(self) -> int:
        """Fair coin: the top bit of the next 64-bit output."""
        return self.next_u64() >> 63


def update_counter(s_prev: int, theta: int) -> int:
    """Consecutive-attack counter: s_prev + 1 on an attack, reset to 0 otherwise."""
    if s_prev < 0:
        raise DomainError(f"counter must be non-negative, got {s_prev}")
    if theta not in (0, 1):
        raise DomainError(f"attack flag must be 0 or 1, got {theta}")
    return s_prev + 1 if theta == 1 else 0


@dataclass(frozen=True)
class AttackerState:
    """Adversary memory (last intercepted plan) and consecutive-attack count."""

    memory: np.ndarray | None = None
    s: int = 0


def channel_step(state: AttackerState, theta: int, message: np.ndarray):
    """Pass one message through the attacked link.

    Returns (delivered, attacked, new_state).  Idle: the message is
    delivered and memorized, the counter resets.  Attack: the memorized
    message is delivered in place of the fresh one and memory is frozen.
    """
    if theta not in (0, 1):
        raise DomainError(f"attack flag must be 0 or 1, got {theta}")
    if theta == 0:
        return message, False, AttackerState(memory=message, s=0)
    if state.memory is None:
        raise ProtocolError("replay attack with empty attacker memory")
    return state.memory, True, replace(state, s=state.s + 1)


@dataclass(frozen=True)
class AttackSchedule:
    """Validated attack flag sequence with declared burst cap S."""

    flags: tuple
    S: int
    kind: str = "custom"
    seed: int | None = None
    period: int | None = None

    def __post_init__(self):
        flags = tuple(int(f) for f in self.flags)
        object.__setattr__(self, "flags", flags)
        if any(f not in (0, 1) for f in flags):
            raise DomainError("attack flags must be 0 or 1")
        if flags and flags[0] != 0:
            raise DomainError("the first flag must be 0 (the attacker memory starts empty)")
        if self.max_run() > self.S:
            raise DomainError(
                f"schedule contains a run of {self.max_run()} consecutive attacks, cap is {self.S}"
            )

    def __len__(self) -> int:
        return len(self.flags)

    def max_run(self) -> int:
        worst = run = 0
        for f in self.flags:
            run = run + 1 if f else 0
            worst = max(worst, run)
        return worst

    def to_dict(self) -> dict:
        meta = {"kind": self.kind, "S": self.S, "T": len(self.flags), "seed": self.seed}
        if self.period is not None:
            meta["period"] = self.period
        return {**meta, "flags": list(self.flags)}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")


def load_schedule(source) -> AttackSchedule:
    if isinstance(source, (str, Path)):
        data = json.loads(Path(source).read_text())
    else:
        data = dict(source)
    return AttackSchedule(
        flags=tuple(data["flags"]), S=data["S"],
        kind=data.get("kind", "custom"), seed=data.get("seed"),
        period=data.get("period"),
    )


def gen_schedule(
    kind: str,
    S: int,
    T: int,
    period: int | None = None,
    seed: int | None = None,
) -> AttackSchedule:
    """Generate an attack schedule of length T with burst cap S.

    Kinds: ``none`` (all idle), ``periodic_burst`` (bursts of exactly S
    attacks separated by ``period`` idle steps, first burst at k=1),
    ``random`` (fair xorshift64* coin per step, runs truncated at S), and
    ``greedy`` (S attacks then a single idle step, repeated from k=1).
    """
    if S < 0:
        raise DomainError(f"S must be non-negative, got {S}")
    if T < 1:
        raise DomainError(f"T must be at least 1, got {T}")
    if kind != "none" and S >= T and S > 0:
        raise DomainError(f"S={S} >= T={T}: no idle step would remain after k=0")

    if kind == "none":
        flags = [0] * T
    elif kind == "periodic_burst":
        if period is None or period < 1:
            raise DomainError("periodic_burst requires period >= 1")
        flags = [0] * T
        k = 1
        while k < T:
            for _ in range(S):
                if k >= T:
                    break
                flags[k] = 1
                k += 1
            k += period
    elif kind == "greedy":
        flags = [0] * T
        k = 1
        while k < T:
            for _ in range(S):
                if k >= T:
                    break
                flags[k] = 1
                k += 1
            k += 1
    elif kind == "random":
        if seed is None:
            raise DomainError("random schedules require a seed")
        rng = Xorshift64Star(seed)
        flags = [0] * T
        run = 0
        for k in range(1, T):
            bit = rng.next_bit()
            if bit and run < S:
                flags[k] = 1
                run += 1
            else:
                flags[k] = 0
                run = 0
    else:
        raise DomainError(f"unknown schedule kind {kind!r}")

    return AttackSchedule(flags=tuple(flags), S=S, kind=kind, seed=seed, period=period)
