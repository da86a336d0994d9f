import pytest
from hypothesis import given, strategies as st

from hvguard.errors import IsolationViolation, OutOfBounds, OutOfMemory, UnknownPid
from hvguard.guest import Guest, GuestMemory, TrapEvent

from oracles import count_switches

SIZE = 4096


@pytest.fixture
def mem():
    return GuestMemory(SIZE)


@pytest.fixture
def guest():
    g = Guest(memory_size=1 << 16, heap_base=4096)
    g.add_process(1, 10)
    g.add_process(2, 20)
    return g


def test_zero_length_read(mem):
    assert mem.read_bytes(0, 0) == b""


def test_read_after_write(mem):
    mem.write_bytes(16, bytes([0xAA, 0xBB]))
    assert mem.read_bytes(16, 2) == bytes([0xAA, 0xBB])


def test_read_past_end(mem):
    with pytest.raises(OutOfBounds):
        mem.read_bytes(SIZE - 1, 2)


def test_zero_length_write_is_logged(mem):
    mem.write_bytes(0, b"")
    assert mem.contents == bytearray(SIZE)
    assert len(mem.write_log) == 1 and mem.write_log[0].length == 0


def test_write_then_read(mem):
    mem.write_bytes(100, bytes([1, 2, 3]))
    assert mem.read_bytes(100, 3) == bytes([1, 2, 3])


def test_write_past_end(mem):
    with pytest.raises(OutOfBounds):
        mem.write_bytes(SIZE, b"\x00")
    assert mem.write_log == []


def test_negative_address_rejected(mem):
    with pytest.raises(OutOfBounds):
        mem.read_bytes(-1, 1)


def test_write_log_records_sequence(guest):
    guest.run_schedule([2, 1])
    guest.memory.write_bytes(5, b"x")
    assert guest.memory.write_log[-1].sequence == 2


@given(addr=st.integers(0, SIZE - 1), data=st.binary(max_size=64))
def test_read_after_write_property(addr, data):
    mem = GuestMemory(SIZE)
    if addr + len(data) > SIZE:
        with pytest.raises(OutOfBounds):
            mem.write_bytes(addr, data)
        return
    mem.write_bytes(addr, data)
    assert mem.read_bytes(addr, len(data)) == data


@given(st.lists(st.tuples(st.integers(0, SIZE), st.binary(max_size=16)), max_size=30))
def test_write_log_counts_successful_writes(writes):
    mem = GuestMemory(SIZE)
    ok = 0
    for addr, data in writes:
        try:
            mem.write_bytes(addr, data)
            ok += 1
        except OutOfBounds:
            pass
    assert len(mem.write_log) == ok


def test_empty_schedule(guest):
    assert guest.run_schedule([]) == []


def test_switch_rule(guest):
    events = guest.run_schedule([2, 2, 1])
    assert [e.new_cr3 for e in events] == [20, 10]
    assert [e.sequence for e in events] == [0, 1]


def test_unknown_pid(guest):
    with pytest.raises(UnknownPid):
        guest.run_schedule([99])


def test_unknown_pid_leaves_state_untouched(guest):
    with pytest.raises(UnknownPid):
        guest.run_schedule([2, 99])
    assert guest.current_pid == 1 and guest.memory.sequence == 0


def test_trap_event_tick_defaults_to_sequence():
    assert TrapEvent(5, 0x10).tick == 5
    assert TrapEvent(5, 0x10, tick=9).tick == 9


def test_duplicate_cr3_rejected(guest):
    with pytest.raises(ValueError):
        guest.add_process(3, 10)


@given(st.lists(st.lists(st.sampled_from([1, 2, 3]), max_size=20), max_size=8))
def test_event_stream_monotone_and_switch_count(chunks):
    g = Guest(memory_size=1 << 16)
    for pid in (1, 2, 3):
        g.add_process(pid, pid * 0x100)
    events = []
    for chunk in chunks:
        events += g.run_schedule(chunk)
    seqs = [e.sequence for e in events]
    assert seqs == sorted(set(seqs))
    flat = [pid for chunk in chunks for pid in chunk]
    assert len(events) == count_switches(1, flat)


def test_kheap_first_fit(guest):
    a = guest.kheap_alloc("a", 64)
    b = guest.kheap_alloc("b", 32)
    assert (a.address, b.address) == (4096, 4160)


def test_kheap_out_of_memory(guest):
    with pytest.raises(OutOfMemory):
        guest.kheap_alloc("huge", guest.memory.size_bytes + 1)


@given(st.lists(st.integers(1, 5000), max_size=40))
def test_allocations_disjoint_and_in_bounds(sizes):
    g = Guest(memory_size=1 << 16, heap_base=1024)
    live = []
    for i, size in enumerate(sizes):
        try:
            live.append(g.kheap_alloc(f"t{i}", size))
        except OutOfMemory:
            pass
    spans = sorted((a.address, a.end) for a in live)
    assert all(end <= (1 << 16) for _, end in spans)
    assert all(a_end <= b_start for (_, a_end), (b_start, _) in zip(spans, spans[1:]))


def test_allocator_deterministic():
    def layout():
        g = Guest(memory_size=1 << 16)
        return [g.kheap_alloc(t, s) for t, s in [("x", 7), ("y", 100), ("z", 1)]]
    assert layout() == layout()


def test_isolation_blocks_guest_activity(guest):
    with guest.isolation.session():
        with pytest.raises(IsolationViolation):
            guest.memory.write_bytes(0, b"\x01")
        with pytest.raises(IsolationViolation):
            guest.run_schedule([2])
        with pytest.raises(IsolationViolation):
            guest.kheap_alloc("late", 8)
    assert guest.isolation.violations == 3
    guest.memory.write_bytes(0, b"\x01")
