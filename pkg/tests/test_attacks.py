import math

import pytest
from hypothesis import given, settings, strategies as st

from hvguard.attacks import AttackEngine, AttackKind, AttackScenario, detection_oracle
from hvguard.errors import NoOpAttack, UnknownTarget
from hvguard.guest import GuestMemory
from hvguard.harness import run
from hvguard.selftest import geometry_config

import oracles

P, T, U = AttackKind.PERSISTENT, AttackKind.TRANSIENT, AttackKind.UNPROTECTED


def sct_memory():
    mem = GuestMemory(0x1000)
    mem.write_bytes(0x100, bytes([9, 8, 7, 6]))
    return mem


def test_persistent_write_effect():
    mem = sct_memory()
    attack = AttackScenario("a", P, 0, bytes([0xDE, 0xAD, 0xBE, 0xEF]), target="sys_call_table")
    AttackEngine([attack], {"sys_call_table": (0x100, 4)}).inject(attack, mem, 0)
    assert mem.read_bytes(0x100, 4) == bytes([0xDE, 0xAD, 0xBE, 0xEF])


def test_noop_attack():
    mem = sct_memory()
    attack = AttackScenario("a", P, 0, bytes([9, 8, 7, 6]), target="sys_call_table")
    with pytest.raises(NoOpAttack):
        AttackEngine([attack], {"sys_call_table": (0x100, 4)}).inject(attack, mem, 0)


def test_unknown_target():
    attack = AttackScenario("a", P, 0, b"\x01", target="missing")
    with pytest.raises(UnknownTarget):
        AttackEngine([attack], {}).inject(attack, GuestMemory(64), 0)


def test_transient_restored_before_next_trap_checks():
    mem = sct_memory()
    attack = AttackScenario("t", T, 5, b"\xff\xff", target="sct", duration=1)
    engine = AttackEngine([attack], {"sct": (0x100, 4)})
    for trap in range(5):
        engine.before_checks(trap, mem)
        assert mem.read_bytes(0x100, 2) == bytes([9, 8])
    engine.before_checks(5, mem)
    assert mem.read_bytes(0x100, 2) == b"\xff\xff"
    engine.before_checks(6, mem)
    assert mem.read_bytes(0x100, 4) == bytes([9, 8, 7, 6])


def test_unprotected_uses_raw_range():
    mem = GuestMemory(0x1000)
    attack = AttackScenario("u", U, 0, b"\x42", raw_range=(0x800, 4))
    AttackEngine([attack]).before_checks(0, mem)
    assert mem.read_bytes(0x800, 1) == b"\x42"


@pytest.mark.parametrize("kwargs", [
    {"target": None},
    {"target": "x", "raw_range": (0, 1)},
    {"kind": T, "duration": 0},
    {"payload": b""},
    {"inject_at": -1},
])
def test_scenario_validation(kwargs):
    base = {"id": "a", "kind": P, "inject_at": 0, "payload": b"\x01", "target": "x"}
    base.update(kwargs)
    with pytest.raises(ValueError):
        AttackScenario(**base)


def test_oracle_examples():
    persistent = AttackScenario("p", P, 0, b"\x01", target="o3")
    transient = AttackScenario("t", T, 0, b"\x01", target="o3", duration=1)
    unprotected = AttackScenario("u", U, 0, b"\x01", raw_range=(0, 1))
    assert detection_oracle(persistent, 4, 2, 0, 3) == (True, 2)
    assert detection_oracle(transient, 4, 2, 0, 3) == (False, None)
    assert detection_oracle(unprotected, 4, 2, 0, None) == (False, None)


geometry = st.integers(1, 48).flatmap(
    lambda n: st.tuples(st.just(n), st.integers(1, n), st.integers(0, n - 1), st.integers(0, n - 1))
)


@given(geometry, st.integers(1, 100))
def test_oracle_matches_brute_force(geo, duration):
    n, b, cursor, target = geo
    persistent = AttackScenario("p", P, 0, b"\x01", target="x")
    transient = AttackScenario("t", T, 0, b"\x01", target="x", duration=duration)
    latency = oracles.brute_force_detection(n, b, cursor, target, None)
    assert detection_oracle(persistent, n, b, cursor, target) == (True, latency)
    got = oracles.brute_force_detection(n, b, cursor, target, duration)
    assert detection_oracle(transient, n, b, cursor, target) == (got is not None, got)


@given(geometry, st.integers(1, 30))
def test_transient_detection_monotone_in_duration(geo, d):
    n, b, cursor, target = geo
    short = AttackScenario("t", T, 0, b"\x01", target="x", duration=d)
    longer = AttackScenario("t", T, 0, b"\x01", target="x", duration=d + 1)
    if detection_oracle(short, n, b, cursor, target)[0]:
        assert detection_oracle(longer, n, b, cursor, target)[0]


@given(geometry)
def test_long_transient_always_caught(geo):
    n, b, cursor, target = geo
    attack = AttackScenario("t", T, 0, b"\x01", target="x", duration=math.ceil(n / b))
    assert detection_oracle(attack, n, b, cursor, target)[0]


@settings(max_examples=60, deadline=None)
@given(geometry, st.integers(0, 4), st.integers(1, 12), st.booleans())
def test_simulator_agrees_with_oracle(geo, inject_at, duration, transient):
    n, b, cursor, target = geo
    if transient:
        attack = AttackScenario("a", T, inject_at, b"\xff", target=f"obj{target}", duration=duration)
    else:
        attack = AttackScenario("a", P, inject_at, b"\xff", target=f"obj{target}")
    config = geometry_config(n, b, cursor, (attack,), traps=inject_at + 2 * math.ceil(n / b) + 1)
    outcome = run(config).attacks[0]
    cursor_at = (cursor + inject_at * b) % n
    assert (outcome.detected, outcome.latency) == detection_oracle(attack, n, b, cursor_at, target)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 20), st.integers(0, 5))
def test_unprotected_never_detected(n, inject_at):
    attack = AttackScenario("u", U, inject_at, b"\xff" * 4, raw_range=(0x3000, 4))
    report = run(geometry_config(n, 1, 0, (attack,), traps=inject_at + 3 * n))
    assert report.attacks[0].injected
    assert not report.attacks[0].detected
    assert report.totals.detections == 0


@settings(max_examples=30, deadline=None)
@given(geometry)
def test_cursor_aware_adversary_evades(geo):
    n, b, cursor, target = geo
    attack = AttackScenario("a", P, 0, b"\xff", target=f"obj{target}", cursor_aware=True)
    report = run(geometry_config(n, b, cursor, (attack,), traps=3 * math.ceil(n / b)))
    assert not report.attacks[0].detected and report.totals.detections == 0
