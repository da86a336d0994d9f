"""Scripted rootkit-style memory modifications.

Three attack shapes are supported: a persistent overwrite, a transient one
that restores the original bytes after ``duration`` traps, and a write to a
range nobody registered. Attacks are scheduled on the trap clock only.

Within one trap the engine always acts before the monitor checks: queued
restores first, then new injections. That ordering favours the attacker,
which keeps the transient-miss numbers worst-case for the defender.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Mapping

from .errors import NoOpAttack, UnknownTarget
from .guest import GuestMemory


class AttackKind(enum.Enum):
    PERSISTENT = "persistent"
    TRANSIENT = "transient"
    UNPROTECTED = "unprotected"


@dataclass(frozen=True)
class AttackScenario:
    """One scripted attack.

    ``target`` is an object id; ``raw_range`` is an ``(address, size)`` pair
    used by unprotected attacks. ``cursor_aware`` models an adversary that
    can see which objects the next trap will check and hides its change
    from exactly those checks.
    """

    id: str
    kind: AttackKind
    inject_at: int
    payload: bytes
    target: str | None = None
    raw_range: tuple[int, int] | None = None
    duration: int = 0
    cursor_aware: bool = False

    def __post_init__(self) -> None:
        if (self.target is None) == (self.raw_range is None):
            raise ValueError(f"attack {self.id!r} needs exactly one of target or raw range")
        if self.kind is AttackKind.TRANSIENT and self.duration < 1:
            raise ValueError(f"transient attack {self.id!r} needs duration >= 1")
        if self.inject_at < 0:
            raise ValueError("inject_at must be non-negative")
        if not self.payload:
            raise ValueError(f"attack {self.id!r} has an empty payload")


@dataclass
class _Live:
    scenario: AttackScenario
    address: int
    original: bytes
    restore_at: int | None
    hidden: bool = False


class AttackEngine:
    """Applies attack scenarios to guest memory as the trap clock advances.

    ``targets`` maps object ids to ``(address, size)``; it is the attacker's
    own knowledge of kernel layout and carries nothing from the hypervisor.
    """

    def __init__(self, scenarios: list[AttackScenario] | tuple[AttackScenario, ...] = (),
                 targets: Mapping[str, tuple[int, int]] | None = None):
        self.scenarios = list(scenarios)
        self.targets = dict(targets or {})
        self._by_trap: dict[int, list[AttackScenario]] = {}
        for scenario in self.scenarios:
            self._by_trap.setdefault(scenario.inject_at, []).append(scenario)
        self.live: list[_Live] = []
        self.injected: dict[str, int] = {}

    def resolve(self, scenario: AttackScenario) -> tuple[int, int]:
        if scenario.raw_range is not None:
            return scenario.raw_range
        try:
            return self.targets[scenario.target]
        except KeyError:
            raise UnknownTarget(scenario.target) from None

    def inject(self, scenario: AttackScenario, mem: GuestMemory, current_trap: int) -> None:
        if current_trap != scenario.inject_at:
            raise ValueError(f"attack {scenario.id!r} is scheduled for trap {scenario.inject_at}")
        address, size = self.resolve(scenario)
        if len(scenario.payload) > size:
            raise ValueError(f"payload of {scenario.id!r} is larger than its target")
        original = mem.read_bytes(address, len(scenario.payload))
        if original == scenario.payload:
            raise NoOpAttack(f"attack {scenario.id!r} would not change memory")
        mem.write_bytes(address, scenario.payload)
        restore_at = None
        if scenario.kind is AttackKind.TRANSIENT:
            restore_at = current_trap + scenario.duration
        self.live.append(_Live(scenario, address, original, restore_at))
        self.injected[scenario.id] = current_trap

    def before_checks(self, trap: int, mem: GuestMemory) -> None:
        """Run restores due at ``trap``, then injections scheduled for it."""
        if not self.live and trap not in self._by_trap:
            return
        if self.live:
            still_live = []
            for live in self.live:
                if live.restore_at is not None and live.restore_at <= trap:
                    mem.write_bytes(live.address, live.original)
                else:
                    still_live.append(live)
            self.live = still_live
        for scenario in self._by_trap.get(trap, ()):
            self.inject(scenario, mem, trap)

    def hide(self, upcoming: set[str], mem: GuestMemory) -> None:
        """Cursor-aware adversary: put back the original bytes of any live
        attack whose target is about to be checked."""
        for live in self.live:
            if live.scenario.cursor_aware and live.scenario.target in upcoming:
                mem.write_bytes(live.address, live.original)
                live.hidden = True

    def after_checks(self, mem: GuestMemory) -> None:
        for live in self.live:
            if live.hidden:
                mem.write_bytes(live.address, live.scenario.payload)
                live.hidden = False

    @property
    def wants_cursor(self) -> bool:
        return any(s.cursor_aware for s in self.scenarios)


def detection_oracle(
    scenario: AttackScenario,
    n_records: int,
    budget: int,
    cursor_at_injection: int,
    target_index: int | None,
) -> tuple[bool, int | None]:
    """Predict whether, and after how many traps, a fixed-budget monitor
    first reports ``scenario``.

    Latency counts the injection trap itself, so an object checked in the
    same trap it was corrupted has latency 1.
    """
    if scenario.kind is AttackKind.UNPROTECTED or target_index is None or n_records == 0:
        return False, None
    if scenario.cursor_aware:
        return False, None
    per_trap = min(budget, n_records)
    horizon = math.ceil(n_records / per_trap)
    if scenario.kind is AttackKind.TRANSIENT:
        horizon = min(horizon, scenario.duration)
    cursor = cursor_at_injection % n_records
    for trap in range(horizon):
        window = {(cursor + j) % n_records for j in range(per_trap)}
        if target_index in window:
            return True, trap + 1
        cursor = (cursor + per_trap) % n_records
    return False, None
