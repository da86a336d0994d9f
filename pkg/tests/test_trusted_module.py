import pytest
from hypothesis import given, strategies as st

from hvguard.errors import AlreadyUnloaded, ModuleUnloaded, OutOfBounds, UnknownHeapTag, UnresolvedSymbol
from hvguard.guest import Guest, GuestMemory, HeapAllocation
from hvguard.monitor import IntegrityMonitor
from hvguard.trusted_module import (
    KernelObject, ObjectDeclaration, ObjectKind, SymbolMap, TrustedModule, enumerate_invariants,
)

FIXED, RELOC, HEAP = ObjectKind.STATIC_FIXED, ObjectKind.STATIC_RELOCATED, ObjectKind.DYNAMIC_HEAP


def test_fixed_identity():
    [obj] = enumerate_invariants([ObjectDeclaration("idt", FIXED, size=8, address=0x1000)], SymbolMap(), {})
    assert (obj.address, obj.size) == (0x1000, 8)


def test_relocated_base_plus_offset():
    symbols = SymbolMap(0x4000, {"sys_call_table": 0x200})
    [obj] = enumerate_invariants([ObjectDeclaration("sct", RELOC, size=8, symbol="sys_call_table")], symbols, {})
    assert obj.address == 0x4200


def test_unknown_heap_tag():
    with pytest.raises(UnknownHeapTag):
        enumerate_invariants([ObjectDeclaration("h", HEAP, tag="tcp_hooks")], SymbolMap(), {})


def test_unresolved_symbol():
    with pytest.raises(UnresolvedSymbol):
        enumerate_invariants([ObjectDeclaration("s", RELOC, size=4, symbol="nope")], SymbolMap(), {})


def test_heap_object_defaults_to_allocation_size():
    heap = {"hooks": HeapAllocation("hooks", 0x9000, 48)}
    [obj] = enumerate_invariants([ObjectDeclaration("h", HEAP, tag="hooks")], SymbolMap(), heap)
    assert (obj.address, obj.size) == (0x9000, 48)


def test_heap_object_larger_than_allocation():
    heap = {"hooks": HeapAllocation("hooks", 0x9000, 48)}
    with pytest.raises(OutOfBounds):
        enumerate_invariants([ObjectDeclaration("h", HEAP, tag="hooks", size=49)], SymbolMap(), heap)


def test_out_of_bounds_with_memory_size():
    with pytest.raises(OutOfBounds):
        enumerate_invariants([ObjectDeclaration("x", FIXED, size=16, address=4090)], SymbolMap(), {}, 4096)


def test_order_preserved_and_deterministic():
    decls = [ObjectDeclaration(f"o{i}", FIXED, size=4, address=0x100 * (10 - i)) for i in range(10)]
    first = enumerate_invariants(decls, SymbolMap(), {})
    assert [o.id for o in first] == [d.id for d in decls]
    assert first == enumerate_invariants(decls, SymbolMap(), {})


def test_empty_registration():
    assert len(TrustedModule().hypercall_register([], GuestMemory(64))) == 0


def test_golden_copy_is_current_contents():
    mem = GuestMemory(0x2000)
    mem.write_bytes(0x1000, bytes([9, 8, 7, 6]))
    payload = TrustedModule().hypercall_register([KernelObject("o", FIXED, 0x1000, 4, True)], mem)
    assert payload.records[0].golden_copy == bytes([9, 8, 7, 6])


def test_no_copy_unless_requested():
    payload = TrustedModule().hypercall_register([KernelObject("o", FIXED, 0, 4)], GuestMemory(64))
    assert payload.records[0].golden_copy is None


def test_unload_lifecycle():
    module = TrustedModule()
    module.hypercall_register([], GuestMemory(64))
    module.unload()
    with pytest.raises(AlreadyUnloaded):
        module.unload()
    with pytest.raises(ModuleUnloaded):
        module.hypercall_register([], GuestMemory(64))


@given(
    contents=st.lists(st.binary(min_size=1, max_size=16), min_size=1, max_size=12),
    copies=st.lists(st.booleans(), min_size=12, max_size=12),
)
def test_registration_fidelity(contents, copies):
    mem = GuestMemory(1 << 12)
    objects = []
    for i, data in enumerate(contents):
        mem.write_bytes(i * 32, data)
        objects.append(KernelObject(f"o{i}", FIXED, i * 32, len(data), copies[i]))
    payload = TrustedModule().hypercall_register(objects, mem)
    for obj, rec in zip(objects, payload.records):
        assert (rec.address, rec.size) == (obj.address, obj.size)
        if obj.provide_copy:
            assert rec.golden_copy == mem.read_bytes(obj.address, obj.size)


@given(st.lists(st.sampled_from(["register", "unload"]), min_size=1, max_size=12))
def test_post_unload_lockout(calls):
    """Random call sequences: once unloaded, nothing reaches the monitor."""
    guest = Guest(memory_size=1 << 12)
    module = TrustedModule()
    monitor = IntegrityMonitor()
    objects = [KernelObject("o", FIXED, 0, 8)]
    unloaded = False
    for call in calls:
        if call == "unload":
            if unloaded:
                with pytest.raises(AlreadyUnloaded):
                    module.unload()
            else:
                module.unload()
                unloaded = True
            continue
        before = monitor.record_count
        if unloaded:
            with pytest.raises(ModuleUnloaded):
                monitor.register(module.hypercall_register(objects, guest.memory), guest.memory)
            assert monitor.record_count == before
        else:
            monitor.register(module.hypercall_register(objects, guest.memory), guest.memory)
            assert monitor.record_count == before + 1
