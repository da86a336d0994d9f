"""Invariant suite behind ``hvguard selftest``.

Every check returns a :class:`CheckResult`; case counts are parameters so the
CLI can run a quick pass while the test-suite runs the full sizes.
"""

from __future__ import annotations

import math
import random
import tempfile
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable

from .attacks import AttackKind, AttackScenario
from .errors import MeasurementMismatch
from .harness import Simulation, emit_report, predict, run
from .monitor import FixedBudget, digest
from .scenario import ScenarioConfig, ScheduleSpec, parse_scenario
from .trust_chain import (
    BlobStore, Quote, TpmDevice, extend, measure, utpm_bootstrap, verify_quote,
)
from .trusted_module import ObjectDeclaration, ObjectKind

SHA256_VECTORS = {
    b"": "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855",
    b"abc": "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad",
}


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.2f}s)"


def _timed(fn: Callable[..., CheckResult]) -> Callable[..., CheckResult]:
    def wrapper(*args, **kwargs) -> CheckResult:
        start = time.perf_counter()
        result = fn(*args, **kwargs)
        result.seconds = time.perf_counter() - start
        return result
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


OBJECT_BASE = 0x1000
OBJECT_STRIDE = 16


def geometry_config(n: int, budget: int, cursor: int, attacks: tuple[AttackScenario, ...] = (),
                    traps: int = 0, copy: bool = True, repair: bool = True, seed: int = 0) -> ScenarioConfig:
    """Small fixed-budget scenario: ``n`` zeroed 8-byte objects, two
    processes alternating for ``traps`` traps."""
    objects = tuple(
        ObjectDeclaration(f"obj{i}", ObjectKind.STATIC_FIXED, size=8,
                          address=OBJECT_BASE + i * OBJECT_STRIDE, provide_copy=copy)
        for i in range(n)
    )
    return ScenarioConfig(
        memory_size=1 << 16,
        heap_base=0x8000,
        seed=seed,
        repair_enabled=repair,
        processes=((1, 0x10), (2, 0x20)),
        schedule=ScheduleSpec(switches=tuple(2 - (i % 2) for i in range(traps))),
        objects=objects,
        contents={o.id: bytes(8) for o in objects},
        budget_policy=FixedBudget(budget),
        start_cursor=cursor,
        attacks=attacks,
    )


def _random_geometry(rng: random.Random) -> tuple[int, int, int, int, int]:
    n = rng.randint(1, 64)
    b = rng.randint(1, n)
    return n, b, rng.randrange(n), rng.randrange(n), rng.randint(0, 4)


@_timed
def check_detection_bound(cases: int = 1000, seed: int = 1) -> CheckResult:
    """Persistent attacks: always detected, within ceil(N/B) traps, exactly
    as the oracle predicts."""
    rng = random.Random(seed)
    for case in range(cases):
        n, b, cursor, target, inject_at = _random_geometry(rng)
        horizon = math.ceil(n / b)
        attack = AttackScenario("a", AttackKind.PERSISTENT, inject_at, b"\xff" * rng.randint(1, 8),
                                target=f"obj{target}")
        config = geometry_config(n, b, cursor, (attack,), traps=inject_at + horizon + 1,
                                 copy=rng.random() < 0.5)
        outcome = run(config).attacks[0]
        _, want_detected, want_latency = predict(config)[0]
        if not (outcome.detected and want_detected and outcome.latency == want_latency
                and outcome.latency <= horizon):
            return CheckResult("detection bound", False,
                               f"case {case}: N={n} B={b} cursor={cursor} target={target} "
                               f"got {outcome.latency}, oracle {want_latency}, bound {horizon}")
    return CheckResult("detection bound", True, f"{cases} persistent attacks, latency == oracle <= ceil(N/B)")


@_timed
def check_transient_equivalence(cases: int = 1000, seed: int = 2) -> CheckResult:
    """Transient attacks: simulator outcome equals the oracle exactly."""
    rng = random.Random(seed)
    detected = 0
    for case in range(cases):
        n, b, cursor, target, inject_at = _random_geometry(rng)
        horizon = math.ceil(n / b)
        duration = rng.randint(1, 2 * horizon)
        attack = AttackScenario("t", AttackKind.TRANSIENT, inject_at, b"\xff" * rng.randint(1, 8),
                                target=f"obj{target}", duration=duration)
        config = geometry_config(n, b, cursor, (attack,), traps=inject_at + 2 * horizon + 1,
                                 copy=rng.random() < 0.5, repair=rng.random() < 0.5)
        outcome = run(config).attacks[0]
        _, want_detected, want_latency = predict(config)[0]
        if (outcome.detected, outcome.latency) != (want_detected, want_latency):
            return CheckResult("transient oracle equivalence", False,
                               f"case {case}: N={n} B={b} cursor={cursor} target={target} d={duration} "
                               f"got {(outcome.detected, outcome.latency)}, oracle {(want_detected, want_latency)}")
        detected += outcome.detected
    return CheckResult("transient oracle equivalence", True,
                       f"{cases} transient attacks match the oracle ({detected} detected, {cases - detected} missed)")


def benign_config(rng: random.Random, traps: int) -> ScenarioConfig:
    """Random schedule, random objects, and writes only to unprotected memory."""
    n = rng.randint(1, 48)
    objects = tuple(
        ObjectDeclaration(f"k{i}", ObjectKind.STATIC_FIXED, size=rng.randint(1, 64),
                          address=0x1000 + 64 * i, provide_copy=rng.random() < 0.5)
        for i in range(n)
    )
    # one disjoint zeroed range per write, so no write is ever a no-op
    attacks = tuple(
        AttackScenario(f"w{j}", AttackKind.UNPROTECTED, rng.randrange(traps),
                       bytes([rng.randint(1, 255)]) * rng.randint(1, 32), raw_range=(0x4000 + 64 * j, 32))
        for j in range(rng.randint(0, 16))
    )
    return ScenarioConfig(
        memory_size=1 << 16,
        heap_base=0xC000,
        seed=rng.getrandbits(64),
        processes=tuple((p, 0x1000 * p) for p in range(1, rng.randint(2, 6) + 1)),
        schedule=ScheduleSpec(random_traps=traps),
        objects=objects,
        # amortised regime: a handful of objects per trap
        budget_policy=FixedBudget(rng.randint(1, min(n, 8))),
        start_cursor=rng.randrange(n),
        attacks=attacks,
    )


@_timed
def check_false_positives(runs: int = 100, traps: int = 10_000, seed: int = 3) -> CheckResult:
    """Benign runs never produce a detection report."""
    rng = random.Random(seed)
    total_traps = 0
    for i in range(runs):
        config = benign_config(rng, traps)
        report = run(config)
        total_traps += report.totals.traps
        if report.totals.detections or any(o.detected for o in report.attacks):
            return CheckResult("false positives", False, f"run {i} produced {report.totals.detections} reports")
        if report.totals.traps != traps:
            return CheckResult("false positives", False, f"run {i} emitted {report.totals.traps} traps")
    return CheckResult("false positives", True, f"{runs} benign runs, {total_traps} traps, 0 reports")


@_timed
def check_repair_fixpoint(cases: int = 200, seed: int = 4) -> CheckResult:
    """After repair, a full scan is clean and memory equals the golden copy."""
    rng = random.Random(seed)
    repaired = 0
    for case in range(cases):
        n, b, cursor, _, _ = _random_geometry(rng)
        targets = rng.sample(range(n), rng.randint(1, min(n, 4)))
        attacks = tuple(
            AttackScenario(f"a{i}", rng.choice([AttackKind.PERSISTENT, AttackKind.TRANSIENT]),
                           rng.randint(0, 3), b"\xa5" * rng.randint(1, 8), target=f"obj{t}",
                           duration=rng.randint(1, 8))
            for i, t in enumerate(targets)
        )
        config = geometry_config(n, b, cursor, attacks, traps=3 + 2 * math.ceil(n / b) + 8, copy=True)
        sim = Simulation(config)
        report = sim.run()
        mem = sim.guest.memory
        for outcome in report.attacks:
            if not outcome.detected:
                continue
            repaired += 1
            obj = next(o for o in sim.objects if o.id == outcome.target)
            if not outcome.repaired or mem.read_bytes(obj.address, obj.size) != config.contents[obj.id]:
                return CheckResult("repair fixpoint", False, f"case {case}: {obj.id} not restored")
        leftovers = sim.monitor.full_scan(mem)
        if leftovers:
            return CheckResult("repair fixpoint", False, f"case {case}: full scan found {len(leftovers)}")
    return CheckResult("repair fixpoint", True, f"{repaired} repaired attacks, post-repair scans clean")


@_timed
def check_hash_conformance(lists: int = 200, seed: int = 5) -> CheckResult:
    """SHA-256 vectors and the extend fold law."""
    import hashlib

    for data, want in SHA256_VECTORS.items():
        if digest(data).hex() != want:
            return CheckResult("hash conformance", False, f"digest({data!r}) mismatch")
    rng = random.Random(seed)
    for _ in range(lists):
        items = [rng.randbytes(rng.randint(0, 64)) for _ in range(rng.randint(0, 50))]
        value = bytes(32)
        for m in items:
            value = hashlib.sha256(value + hashlib.sha256(m).digest()).digest()
        if measure(items).value != value:
            return CheckResult("hash conformance", False, f"fold law broken for a list of {len(items)}")
    return CheckResult("hash conformance", True, f"2 SHA-256 vectors, fold law over {lists} lists")


def _flip(data: bytes, bit: int) -> bytes:
    out = bytearray(data)
    out[bit // 8] ^= 1 << (bit % 8)
    return bytes(out)


@_timed
def check_seal_and_quote(rounds: int = 50, bits: int = 256, seed: int = 6) -> CheckResult:
    """Seal/unseal round-trips, mismatch rejection and quote tamper detection."""
    rng = random.Random(seed)
    device = TpmDevice(device_key=rng.randbytes(32), rng=rng.randbytes)
    for _ in range(rounds):
        data = rng.randbytes(rng.randint(0, 256))
        register = measure([rng.randbytes(16) for _ in range(rng.randint(1, 4))])
        blob = device.seal(data, register.value)
        if device.unseal(blob, register) != data:
            return CheckResult("seal/quote", False, "round-trip failed")
        other = extend(register, rng.randbytes(8))
        try:
            device.unseal(blob, other)
            return CheckResult("seal/quote", False, "unseal succeeded under a different measurement")
        except MeasurementMismatch:
            pass

    register = measure([b"module"])
    nonce = rng.randbytes(32)
    output = rng.randbytes(64)
    quote = device.quote(register, nonce, output)
    key = device.quote_key
    if not verify_quote(quote, key, output):
        return CheckResult("seal/quote", False, "genuine quote rejected")
    for bit in rng.sample(range(256), bits):
        forged = [
            Quote(quote.register_value, quote.nonce, quote.output_digest, _flip(quote.tag, bit)),
            Quote(quote.register_value, _flip(quote.nonce, bit), quote.output_digest, quote.tag),
            Quote(quote.register_value, quote.nonce, _flip(quote.output_digest, bit), quote.tag),
        ]
        if any(verify_quote(q, key, output) for q in forged):
            return CheckResult("seal/quote", False, f"tampered quote accepted at bit {bit}")
        if verify_quote(quote, key, _flip(output, bit)):
            return CheckResult("seal/quote", False, f"flipped output bit {bit} accepted")
    return CheckResult("seal/quote", True,
                       f"{rounds} seal round-trips, {bits} bit positions x 4 tamper targets rejected")


@_timed
def check_utpm_offline(ops: int = 1000, seed: int = 7) -> CheckResult:
    """After bootstrap the μTPM never calls the device; tampered reboots fail."""
    rng = random.Random(seed)
    device = TpmDevice(device_key=rng.randbytes(32), rng=rng.randbytes)
    good = measure([b"hypervisor image v1"])
    with tempfile.TemporaryDirectory() as tmp:
        store = BlobStore(Path(tmp) / "utpm.blob")
        first = utpm_bootstrap(device, good.value, good, store, rng=rng.randbytes)
        utpm = utpm_bootstrap(device, good.value, good, store, rng=rng.randbytes)
        if utpm.long_term_secret != first.long_term_secret:
            return CheckResult("μTPM offline", False, "secret not recovered on reboot")
        before = device.calls
        for i in range(ops):
            data = rng.randbytes(32)
            reg = utpm.extend(0, data)
            if utpm.unseal(utpm.seal(data, reg.value), reg) != data:
                return CheckResult("μTPM offline", False, f"round-trip {i} failed")
        if device.calls != before:
            return CheckResult("μTPM offline", False, f"device called {device.calls - before} times")
        tampered = measure([b"hypervisor image v1 + rootkit"])
        try:
            utpm_bootstrap(device, good.value, tampered, store, rng=rng.randbytes)
            return CheckResult("μTPM offline", False, "tampered reboot accepted")
        except MeasurementMismatch:
            pass
    return CheckResult("μTPM offline", True,
                       f"{ops} μTPM seal/unseal round-trips, 0 device calls, tampered reboot rejected")


@_timed
def check_overhead_scaling(n: int = 1024, size: int = 64, budgets: tuple[int, ...] = (1, 8, 64, 1024),
                           traps: int = 16) -> CheckResult:
    """Bytes hashed per trap equals budget x object size."""
    lines = []
    for b in budgets:
        objects = tuple(ObjectDeclaration(f"o{i}", ObjectKind.STATIC_FIXED, size=size, address=i * size)
                        for i in range(n))
        config = ScenarioConfig(
            memory_size=1 << 20,
            heap_base=n * size,
            processes=((1, 0x10), (2, 0x20)),
            schedule=ScheduleSpec(switches=tuple(2 - (i % 2) for i in range(traps))),
            objects=objects,
            budget_policy=FixedBudget(b),
        )
        report = run(config)
        per_trap = report.metrics.bytes_hashed_per_trap
        if per_trap != b * size or report.totals.bytes_hashed != traps * b * size:
            return CheckResult("overhead scaling", False, f"B={b}: {per_trap} bytes/trap, want {b * size}")
        lines.append(f"B={b}:{per_trap:g}")
    return CheckResult("overhead scaling", True, f"N={n}x{size}B bytes/trap " + " ".join(lines))


def bundled_scenarios() -> list[tuple[str, str]]:
    root = resources.files("hvguard") / "scenarios"
    return sorted((p.name, p.read_text()) for p in root.iterdir() if p.name.endswith(".scn"))


@_timed
def check_determinism(extra: int = 20, seed: int = 8) -> CheckResult:
    """Same config and seed give byte-identical json reports."""
    configs = [parse_scenario(text) for _, text in bundled_scenarios()]
    rng = random.Random(seed)
    configs += [benign_config(rng, 500) for _ in range(extra)]
    for i, config in enumerate(configs):
        if emit_report(run(config)) != emit_report(run(config)):
            return CheckResult("determinism", False, f"config {i} produced differing reports")
    return CheckResult("determinism", True, f"{len(configs)} scenarios reproduced byte-for-byte")


QUICK = {
    "check_detection_bound": {"cases": 200},
    "check_transient_equivalence": {"cases": 200},
    "check_false_positives": {"runs": 5, "traps": 2000},
    "check_repair_fixpoint": {"cases": 50},
}

ALL_CHECKS = (
    check_detection_bound,
    check_transient_equivalence,
    check_false_positives,
    check_repair_fixpoint,
    check_hash_conformance,
    check_seal_and_quote,
    check_utpm_offline,
    check_overhead_scaling,
    check_determinism,
)


def run_all(quick: bool = False) -> list[CheckResult]:
    return [check(**(QUICK.get(check.__name__, {}) if quick else {})) for check in ALL_CHECKS]
