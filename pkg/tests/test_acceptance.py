"""Acceptance gate: every criterion at full size, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines.
"""

import pytest

from hvguard import selftest
from hvguard.monitor import digest

import oracles


def gate(result, limit=None):
    ok = result.passed and (limit is None or result.seconds < limit)
    budget = "" if limit is None else f" [limit {limit:g}s]"
    print(f"\n{'PASS' if ok else 'FAIL'} {result.name}: {result.detail} ({result.seconds:.2f}s){budget}")
    assert result.passed, result.detail
    if limit is not None:
        assert result.seconds < limit, f"{result.name} took {result.seconds:.2f}s"


def test_1_detection_bound():
    gate(selftest.check_detection_bound(cases=1000), limit=10)


def test_2_transient_oracle_equivalence():
    gate(selftest.check_transient_equivalence(cases=1000), limit=10)


def test_3_false_positives():
    gate(selftest.check_false_positives(runs=100, traps=10_000), limit=30)


def test_4_repair_fixpoint():
    gate(selftest.check_repair_fixpoint(cases=200))


@pytest.mark.parametrize("data", [b"", b"abc"])
def test_5_vectors_from_independent_oracle(data):
    assert digest(data) == oracles.sha256(data)
    assert digest(data).hex() == selftest.SHA256_VECTORS[data]


def test_5_hash_conformance():
    gate(selftest.check_hash_conformance())


def test_6_seal_and_quote():
    gate(selftest.check_seal_and_quote(bits=256))


def test_7_utpm_offline():
    gate(selftest.check_utpm_offline(ops=1000))


def test_8_overhead_scaling():
    gate(selftest.check_overhead_scaling(n=1024, size=64, budgets=(1, 8, 64, 1024)), limit=5)


def test_9_determinism():
    gate(selftest.check_determinism())
