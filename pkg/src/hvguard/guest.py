"""Simulated guest: flat physical memory, process table and a kernel heap.

Context switches between processes are the only trapped event class; each
switch rewrites CR3 and emits a :class:`TrapEvent` for the hypervisor.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass
from typing import Iterable, Iterator

from .errors import IsolationViolation, OutOfBounds, OutOfMemory, UnknownPid

DEFAULT_MEMORY_SIZE = 1 << 20


class Isolation:
    """Simulation-wide exclusion flag for isolated (DRTM-style) sessions.

    While active, any guest operation that consults the flag raises
    :class:`IsolationViolation`. Violations are counted even when the caller
    swallows the exception, so the session owner can still notice them.
    """

    def __init__(self) -> None:
        self.active = False
        self.violations = 0

    def check(self, operation: str) -> None:
        if self.active:
            self.violations += 1
            raise IsolationViolation(f"{operation} attempted during an isolated session")

    @contextmanager
    def session(self) -> Iterator[None]:
        if self.active:
            self.violations += 1
            raise IsolationViolation("nested isolated session")
        self.active = True
        try:
            yield
        finally:
            self.active = False


@dataclass(frozen=True)
class WriteRecord:
    sequence: int
    address: int
    length: int


@dataclass(frozen=True)
class Process:
    pid: int
    cr3: int


@dataclass(frozen=True)
class TrapEvent:
    """A CR3-write VM exit.

    ``tick`` is the guest scheduler tick that produced the switch (defaults
    to the sequence number); the hypervisor uses it as its notion of elapsed
    time when estimating load.
    """

    sequence: int
    new_cr3: int
    tick: int | None = None

    def __post_init__(self) -> None:
        if self.tick is None:
            object.__setattr__(self, "tick", self.sequence)


@dataclass(frozen=True)
class HeapAllocation:
    tag: str
    address: int
    size: int

    @property
    def end(self) -> int:
        return self.address + self.size


class GuestMemory:
    def __init__(self, size_bytes: int = DEFAULT_MEMORY_SIZE, isolation: Isolation | None = None):
        if size_bytes <= 0:
            raise ValueError("memory size must be positive")
        self.size_bytes = size_bytes
        self.contents = bytearray(size_bytes)
        self.write_log: list[WriteRecord] = []
        self.isolation = isolation or Isolation()
        # global sequence counter; the owning Guest advances it on every trap
        self.sequence = 0

    def _bounds(self, addr: int, length: int) -> None:
        if addr < 0 or length < 0 or addr + length > self.size_bytes:
            raise OutOfBounds(
                f"[{addr:#x}, {addr + length:#x}) outside guest memory of {self.size_bytes} bytes"
            )

    def read_bytes(self, addr: int, length: int) -> bytes:
        self.isolation.check("guest memory read")
        self._bounds(addr, length)
        return bytes(self.contents[addr:addr + length])

    def write_bytes(self, addr: int, data: bytes) -> None:
        self.isolation.check("guest memory write")
        self._bounds(addr, len(data))
        self.contents[addr:addr + len(data)] = data
        self.write_log.append(WriteRecord(self.sequence, addr, len(data)))


class KernelHeap:
    """First-fit bump allocator starting at a fixed base; nothing is ever freed."""

    def __init__(self, memory: GuestMemory, base: int):
        if not 0 <= base <= memory.size_bytes:
            raise OutOfBounds(f"heap base {base:#x} outside guest memory")
        self.memory = memory
        self.base = base
        self.next_free = base
        self.allocations: dict[str, HeapAllocation] = {}

    def alloc(self, tag: str, size: int) -> HeapAllocation:
        self.memory.isolation.check("kernel heap allocation")
        if size <= 0:
            raise ValueError("allocation size must be positive")
        if tag in self.allocations:
            raise ValueError(f"heap tag {tag!r} already allocated")
        if self.next_free + size > self.memory.size_bytes:
            raise OutOfMemory(f"cannot allocate {size} bytes for {tag!r}")
        allocation = HeapAllocation(tag, self.next_free, size)
        self.next_free += size
        self.allocations[tag] = allocation
        return allocation


class Guest:
    """Owns guest memory, the process table and the kernel heap."""

    def __init__(
        self,
        memory_size: int = DEFAULT_MEMORY_SIZE,
        heap_base: int = 4096,
        isolation: Isolation | None = None,
    ):
        self.memory = GuestMemory(memory_size, isolation)
        self.heap = KernelHeap(self.memory, heap_base)
        self.processes: dict[int, Process] = {}
        self.current_pid: int | None = None
        self.tick = 0

    @property
    def isolation(self) -> Isolation:
        return self.memory.isolation

    def add_process(self, pid: int, cr3: int) -> Process:
        if pid <= 0 or cr3 <= 0:
            raise ValueError("pid and cr3 must be positive")
        if pid in self.processes:
            raise ValueError(f"duplicate pid {pid}")
        if any(p.cr3 == cr3 for p in self.processes.values()):
            raise ValueError(f"cr3 {cr3:#x} already in use")
        proc = Process(pid, cr3)
        self.processes[pid] = proc
        if self.current_pid is None:
            self.current_pid = pid
        return proc

    def kheap_alloc(self, tag: str, size: int) -> HeapAllocation:
        return self.heap.alloc(tag, size)

    def run_schedule(self, switch_list: Iterable[int]) -> list[TrapEvent]:
        """Run the scheduler over ``switch_list``, one tick per entry.

        A switch to the already-running process does not write CR3 and so
        emits nothing.
        """
        self.isolation.check("process switch")
        switch_list = list(switch_list)
        for pid in switch_list:
            if pid not in self.processes:
                raise UnknownPid(pid)
        events = []
        mem = self.memory
        for pid in switch_list:
            if pid != self.current_pid:
                self.current_pid = pid
                events.append(TrapEvent(mem.sequence, self.processes[pid].cr3, self.tick))
                mem.sequence += 1
            self.tick += 1
        return events
