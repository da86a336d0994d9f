"""Hypervisor-side integrity monitor.

Golden hashes live only inside :class:`IntegrityMonitor`; nothing on the
guest side holds a reference to them. Checking is amortised over CR3 traps:
each trap hashes a budget of records in round-robin order from a persistent
cursor, so a full pass over N records takes ceil(N/B) traps.
"""

from __future__ import annotations

import enum
import hashlib
import math
from collections import deque
from dataclasses import dataclass
from typing import Union

from .errors import AlreadyEnforcing, EpochMismatch, NotEnforcing, TrustWindowClosed
from .guest import GuestMemory, TrapEvent
from .trusted_module import RegistrationPayload

# address, size and digest stored for every record
RECORD_FIXED_BYTES = 8 + 8 + 32


def digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


@dataclass(frozen=True)
class ProtectionRecord:
    id: str
    address: int
    size: int
    golden_hash: bytes
    golden_copy: bytes | None = None

    @property
    def footprint(self) -> int:
        return RECORD_FIXED_BYTES + (len(self.golden_copy) if self.golden_copy is not None else 0)


@dataclass(frozen=True)
class DetectionReport:
    object_id: str
    trap_sequence: int | None
    observed_hash: bytes
    repaired: bool


@dataclass(frozen=True)
class FixedBudget:
    per_trap: int = 1

    def __post_init__(self) -> None:
        if self.per_trap < 1:
            raise ValueError("budget must be at least one object per trap")


@dataclass(frozen=True)
class LoadAdaptiveBudget:
    """Per-trap budget that shrinks as the context-switch rate grows.

    The trap rate is the number of traps seen in the last ``window`` guest
    ticks divided by ``calibration``, the trap count expected per window at
    nominal load (defaults to half the window).
    """

    base: int = 8
    window: int = 64
    scale: float = 1.0
    calibration: float | None = None

    def __post_init__(self) -> None:
        if self.base < 1 or self.window < 1 or self.scale <= 0:
            raise ValueError("adaptive budget needs base >= 1, window >= 1 and scale > 0")
        if self.calibration is not None and self.calibration <= 0:
            raise ValueError("calibration must be positive")

    @property
    def nominal_traps(self) -> float:
        return self.calibration if self.calibration is not None else self.window / 2


BudgetPolicy = Union[FixedBudget, LoadAdaptiveBudget]


def compute_budget(policy: BudgetPolicy, recent_trap_rate: float = 1.0) -> int:
    if isinstance(policy, FixedBudget):
        return policy.per_trap
    raw = policy.base * policy.scale / max(1.0, recent_trap_rate)
    # round half up, not Python's banker's rounding
    return max(1, math.floor(raw + 0.5))


class MonitorState(enum.Enum):
    TRUST_WINDOW = "trust-window"
    ENFORCING = "enforcing"


class IntegrityMonitor:
    def __init__(self, policy: BudgetPolicy | None = None, repair: bool = True, start_cursor: int = 0):
        self.policy = policy or FixedBudget(1)
        self.repair = repair
        self.state = MonitorState.TRUST_WINDOW
        self.boot_epoch: object = None
        self._records: list[ProtectionRecord] = []
        self._spans: list[tuple[int, int, bytes]] = []
        self._prefix: list[int] = [0]  # running sum of record sizes
        self._start_cursor = start_cursor
        self._cursor = 0
        self._recent_ticks: deque[int] = deque()
        # accounting
        self.traps = 0
        self.objects_checked = 0
        self.bytes_hashed = 0
        self.last_budget = 0
        self.last_checked = 0

    @property
    def cursor(self) -> int:
        return self._cursor

    @property
    def record_count(self) -> int:
        return len(self._records)

    def footprint_bytes(self) -> int:
        return sum(r.footprint for r in self._records)

    def register(self, payload: RegistrationPayload, mem: GuestMemory, boot_epoch: object = 0) -> int:
        if self.state is not MonitorState.TRUST_WINDOW:
            raise TrustWindowClosed("registration is only accepted at boot")
        if self.boot_epoch is not None and boot_epoch != self.boot_epoch:
            raise EpochMismatch(f"trust window opened for epoch {self.boot_epoch!r}")
        new = []
        for rec in payload.records:
            contents = mem.read_bytes(rec.address, rec.size)
            new.append(ProtectionRecord(rec.id, rec.address, rec.size, digest(contents), rec.golden_copy))
        self.boot_epoch = boot_epoch
        self._records.extend(new)
        for r in new:
            self._spans.append((r.address, r.address + r.size, r.golden_hash))
            self._prefix.append(self._prefix[-1] + r.size)
        return len(new)

    def close_trust_window(self) -> None:
        if self.state is MonitorState.ENFORCING:
            raise AlreadyEnforcing("trust window already closed")
        self.state = MonitorState.ENFORCING
        if self._records:
            self._cursor = self._start_cursor % len(self._records)

    def _trap_rate(self, tick: int) -> float:
        assert isinstance(self.policy, LoadAdaptiveBudget)
        horizon = tick - self.policy.window
        recent = sum(1 for t in self._recent_ticks if t > horizon) + 1
        return recent / self.policy.nominal_traps

    def budget_for(self, event: TrapEvent) -> int:
        """Budget the next ``on_trap(event)`` call will use; does not mutate state."""
        if isinstance(self.policy, FixedBudget):
            return self.policy.per_trap
        return compute_budget(self.policy, self._trap_rate(event.tick))

    def peek_window(self, event: TrapEvent) -> list[str]:
        """Ids of the records the next trap would check."""
        n = len(self._records)
        if n == 0:
            return []
        count = min(self.budget_for(event), n)
        return [self._records[(self._cursor + i) % n].id for i in range(count)]

    def _mismatch(self, record: ProtectionRecord, observed: bytes, mem: GuestMemory,
                  sequence: int | None) -> DetectionReport:
        repaired = False
        if self.repair and record.golden_copy is not None:
            mem.write_bytes(record.address, record.golden_copy)
            repaired = True
        return DetectionReport(record.id, sequence, observed, repaired)

    def _check_range(self, start: int, stop: int, mem: GuestMemory, sequence: int | None) -> list[DetectionReport]:
        # records are bounds-checked at registration, so the slices are exact
        mem.isolation.check("hypervisor integrity check")
        contents = mem.contents
        sha256 = hashlib.sha256
        batch = self._spans[start:stop]
        observed = [sha256(contents[a:e]).digest() for a, e, _ in batch]
        self.objects_checked += stop - start
        self.bytes_hashed += self._prefix[stop] - self._prefix[start]
        return [
            self._mismatch(self._records[start + k], got, mem, sequence)
            for k, (got, (_, _, golden)) in enumerate(zip(observed, batch))
            if got != golden
        ]

    def on_trap(self, event: TrapEvent, mem: GuestMemory) -> list[DetectionReport]:
        if self.state is not MonitorState.ENFORCING:
            raise NotEnforcing("monitor is still in its trust window")
        budget = self.budget_for(event)
        if isinstance(self.policy, LoadAdaptiveBudget):
            self._recent_ticks.append(event.tick)
            horizon = event.tick - self.policy.window
            while self._recent_ticks and self._recent_ticks[0] <= horizon:
                self._recent_ticks.popleft()
        self.traps += 1
        self.last_budget = budget
        n = len(self._records)
        if n == 0:
            self.last_checked = 0
            return []
        count = min(budget, n)
        stop = min(self._cursor + count, n)
        reports = self._check_range(self._cursor, stop, mem, event.sequence)
        wrapped = count - (stop - self._cursor)
        if wrapped:
            reports += self._check_range(0, wrapped, mem, event.sequence)
        self._cursor = (self._cursor + count) % n
        self.last_checked = count
        return reports

    def full_scan(self, mem: GuestMemory) -> list[DetectionReport]:
        if self.state is not MonitorState.ENFORCING:
            raise NotEnforcing("monitor is still in its trust window")
        return self._check_range(0, len(self._records), mem, None)
