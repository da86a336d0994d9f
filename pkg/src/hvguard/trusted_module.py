"""Boot-time trusted module.

Resolves invariant kernel object declarations to absolute guest addresses,
hands them to the hypervisor in a single registration payload and is then
unloaded for good.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .errors import AlreadyUnloaded, ModuleUnloaded, OutOfBounds, UnknownHeapTag, UnresolvedSymbol
from .guest import GuestMemory, HeapAllocation


class ObjectKind(enum.Enum):
    STATIC_FIXED = "fixed"
    STATIC_RELOCATED = "relocated"
    DYNAMIC_HEAP = "heap"


@dataclass(frozen=True)
class ObjectDeclaration:
    """Where to find one invariant object before resolution.

    ``address`` is used for fixed objects, ``symbol`` for relocated ones and
    ``tag`` for heap objects. Heap objects default to the full allocation size.
    """

    id: str
    kind: ObjectKind
    size: int | None = None
    address: int | None = None
    symbol: str | None = None
    tag: str | None = None
    provide_copy: bool = False


@dataclass(frozen=True)
class SymbolMap:
    base: int = 0
    offsets: Mapping[str, int] = field(default_factory=dict)

    def resolve(self, name: str) -> int:
        try:
            return self.base + self.offsets[name]
        except KeyError:
            raise UnresolvedSymbol(name) from None


@dataclass(frozen=True)
class KernelObject:
    id: str
    kind: ObjectKind
    address: int
    size: int
    provide_copy: bool = False

    @property
    def end(self) -> int:
        return self.address + self.size


@dataclass(frozen=True)
class PayloadRecord:
    id: str
    address: int
    size: int
    golden_copy: bytes | None = None

    def __post_init__(self) -> None:
        if self.golden_copy is not None and len(self.golden_copy) != self.size:
            raise ValueError(f"golden copy of {self.id!r} has wrong length")


@dataclass(frozen=True)
class RegistrationPayload:
    records: tuple[PayloadRecord, ...] = ()

    def __len__(self) -> int:
        return len(self.records)


def enumerate_invariants(
    declarations: Sequence[ObjectDeclaration],
    symbols: SymbolMap,
    heap: Mapping[str, HeapAllocation],
    memory_size: int | None = None,
) -> list[KernelObject]:
    objects = []
    for decl in declarations:
        if decl.kind is ObjectKind.STATIC_FIXED:
            if decl.address is None or decl.size is None:
                raise ValueError(f"fixed object {decl.id!r} needs address and size")
            address, size = decl.address, decl.size
        elif decl.kind is ObjectKind.STATIC_RELOCATED:
            if decl.symbol is None or decl.size is None:
                raise ValueError(f"relocated object {decl.id!r} needs symbol and size")
            address, size = symbols.resolve(decl.symbol), decl.size
        else:
            if decl.tag is None:
                raise ValueError(f"heap object {decl.id!r} needs a heap tag")
            alloc = heap.get(decl.tag)
            if alloc is None:
                raise UnknownHeapTag(decl.tag)
            address = alloc.address
            size = alloc.size if decl.size is None else decl.size
            if size > alloc.size:
                raise OutOfBounds(f"{decl.id!r} is larger than heap allocation {decl.tag!r}")
        if size < 1:
            raise ValueError(f"object {decl.id!r} must be at least one byte")
        if address < 0 or (memory_size is not None and address + size > memory_size):
            raise OutOfBounds(f"object {decl.id!r} at {address:#x}+{size} outside guest memory")
        objects.append(KernelObject(decl.id, decl.kind, address, size, decl.provide_copy))
    return objects


class TrustedModule:
    def __init__(self) -> None:
        self.loaded = True

    def hypercall_register(self, objects: Sequence[KernelObject], mem: GuestMemory) -> RegistrationPayload:
        if not self.loaded:
            raise ModuleUnloaded("trusted module is no longer loaded")
        records = []
        for obj in objects:
            contents = mem.read_bytes(obj.address, obj.size)
            records.append(
                PayloadRecord(obj.id, obj.address, obj.size, contents if obj.provide_copy else None)
            )
        return RegistrationPayload(tuple(records))

    def unload(self) -> None:
        if not self.loaded:
            raise AlreadyUnloaded("trusted module already unloaded")
        self.loaded = False
