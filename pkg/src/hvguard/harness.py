"""Deterministic end-to-end simulation and run reports."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Iterator

from .attacks import AttackEngine, AttackKind, AttackScenario, detection_oracle
from .monitor import DetectionReport, FixedBudget, IntegrityMonitor
from .prng import STREAM_FILL, STREAM_SCHEDULE, Xoshiro256StarStar
from .scenario import ScenarioConfig, layout, validate_config
from .trusted_module import TrustedModule

REPORT_VERSION = 1


@dataclass
class AttackOutcome:
    id: str
    kind: str
    target: str
    inject_at: int
    injected: bool = False
    detected: bool = False
    latency: int | None = None
    repaired: bool = False


@dataclass
class Totals:
    traps: int = 0
    ticks: int = 0
    objects_checked: int = 0
    bytes_hashed: int = 0
    detections: int = 0
    false_positives: int = 0
    repairs: int = 0
    protected_objects: int = 0
    record_store_bytes: int = 0


@dataclass
class Metrics:
    mean_detection_latency: float | None = None
    max_detection_latency: int | None = None
    bytes_hashed_per_trap: float = 0.0


@dataclass(frozen=True)
class TrapStat:
    sequence: int
    budget: int
    checked: int


@dataclass
class RunReport:
    seed: int = 0
    attacks: list[AttackOutcome] = field(default_factory=list)
    totals: Totals = field(default_factory=Totals)
    metrics: Metrics = field(default_factory=Metrics)
    # kept in memory only; not part of the serialized report
    per_trap: list[TrapStat] = field(default_factory=list, compare=False, repr=False)
    detections: list[DetectionReport] = field(default_factory=list, compare=False, repr=False)


def generate_schedule(config: ScenarioConfig, start_pid: int | None) -> Iterator[int]:
    """Yield the pid the scheduler picks on each tick.

    Random schedules draw ``pids[next() % len(pids)]`` from stream 0 of the
    config seed, with pids in the order the processes were declared.
    """
    spec = config.schedule
    if not spec.is_random:
        yield from spec.switches
        return
    rng = Xoshiro256StarStar.from_seed(config.seed, STREAM_SCHEDULE)
    pids = [pid for pid, _ in config.processes]
    if spec.random_ticks is not None:
        for _ in range(spec.random_ticks):
            yield pids[rng.below(len(pids))]
        return
    current, traps = start_pid, 0
    while traps < spec.random_traps:
        pid = pids[rng.below(len(pids))]
        if pid != current:
            traps += 1
            current = pid
        yield pid


def _target_label(attack: AttackScenario) -> str:
    if attack.target is not None:
        return attack.target
    addr, size = attack.raw_range
    return f"{addr:#x}+{size}"


def _matches(attack: AttackScenario, report: DetectionReport) -> bool:
    if attack.target != report.object_id or report.trap_sequence < attack.inject_at:
        return False
    if attack.kind is AttackKind.TRANSIENT:
        return report.trap_sequence < attack.inject_at + attack.duration
    return True


class Simulation:
    """One boot of the guest under the monitor, driven by a scenario.

    Objects without explicit initial contents are filled from stream 1 of
    the config seed, in declaration order. After :meth:`run` the guest,
    monitor and attack engine stay available for inspection.
    """

    def __init__(self, config: ScenarioConfig):
        validate_config(config)
        self.config = config
        self.guest, self.objects = layout(config)
        self.monitor = IntegrityMonitor(config.budget_policy, config.repair_enabled, config.start_cursor)
        self.engine = AttackEngine(config.attacks, {o.id: (o.address, o.size) for o in self.objects})
        self.per_trap: list[TrapStat] = []
        self.detections: list[DetectionReport] = []
        self._boot()

    def _boot(self) -> None:
        mem = self.guest.memory
        fill = Xoshiro256StarStar.from_seed(self.config.seed, STREAM_FILL)
        for obj in self.objects:
            data = self.config.contents.get(obj.id)
            mem.write_bytes(obj.address, data if data is not None else fill.fill(obj.size))
        module = TrustedModule()
        payload = module.hypercall_register(self.objects, mem)
        self.monitor.register(payload, mem, boot_epoch=self.config.seed)
        module.unload()
        self.monitor.close_trust_window()

    def run(self) -> RunReport:
        guest, monitor, engine = self.guest, self.monitor, self.engine
        mem = guest.memory
        cursor_aware = engine.wants_cursor
        for pid in generate_schedule(self.config, guest.current_pid):
            for event in guest.run_schedule((pid,)):
                engine.before_checks(event.sequence, mem)
                if cursor_aware:
                    engine.hide(set(monitor.peek_window(event)), mem)
                self.detections.extend(monitor.on_trap(event, mem))
                if cursor_aware:
                    engine.after_checks(mem)
                self.per_trap.append(TrapStat(event.sequence, monitor.last_budget, monitor.last_checked))
        return self.report()

    def report(self) -> RunReport:
        config, detections = self.config, self.detections
        outcomes = []
        for attack in config.attacks:
            outcome = AttackOutcome(attack.id, attack.kind.value, _target_label(attack), attack.inject_at,
                                    injected=attack.id in self.engine.injected)
            first = next((r for r in detections if _matches(attack, r)), None)
            if outcome.injected and first is not None:
                outcome.detected = True
                outcome.latency = first.trap_sequence - attack.inject_at + 1
                outcome.repaired = first.repaired
            outcomes.append(outcome)

        explained = sum(1 for r in detections if any(_matches(a, r) for a in config.attacks))
        latencies = [o.latency for o in outcomes if o.detected]
        monitor = self.monitor
        totals = Totals(
            traps=monitor.traps,
            ticks=self.guest.tick,
            objects_checked=monitor.objects_checked,
            bytes_hashed=monitor.bytes_hashed,
            detections=len(detections),
            false_positives=len(detections) - explained,
            repairs=sum(1 for r in detections if r.repaired),
            protected_objects=monitor.record_count,
            record_store_bytes=monitor.footprint_bytes(),
        )
        metrics = Metrics(
            mean_detection_latency=sum(latencies) / len(latencies) if latencies else None,
            max_detection_latency=max(latencies) if latencies else None,
            bytes_hashed_per_trap=totals.bytes_hashed / totals.traps if totals.traps else 0.0,
        )
        return RunReport(config.seed, outcomes, totals, metrics, list(self.per_trap), list(detections))


def run(config: ScenarioConfig) -> RunReport:
    return Simulation(config).run()


def predict(config: ScenarioConfig) -> list[tuple[str, bool, int | None] | tuple[str, None, None]]:
    """Oracle predictions per attack; ``None`` where the oracle does not apply
    (adaptive budgets)."""
    objects = validate_config(config)
    index = {o.id: i for i, o in enumerate(objects)}
    n = len(objects)
    out = []
    for attack in config.attacks:
        if not isinstance(config.budget_policy, FixedBudget):
            out.append((attack.id, None, None))
            continue
        per_trap = min(config.budget_policy.per_trap, n) if n else 0
        cursor = (config.start_cursor % n + attack.inject_at * per_trap) % n if n else 0
        detected, latency = detection_oracle(attack, n, config.budget_policy.per_trap, cursor,
                                             index.get(attack.target))
        out.append((attack.id, detected, latency))
    return out


def emit_report(report: RunReport, format: str = "json") -> str:
    """Serialize ``report``.

    json: one object with keys ``version``, ``seed``, ``totals``, ``metrics``
    and ``attacks`` (a list of per-attack outcomes), in that order.
    csv: a header, one row per attack, then a ``# totals`` comment line.
    """
    if format == "json":
        doc = {
            "version": REPORT_VERSION,
            "seed": report.seed,
            "totals": asdict(report.totals),
            "metrics": asdict(report.metrics),
            "attacks": [asdict(a) for a in report.attacks],
        }
        return json.dumps(doc, indent=2) + "\n"
    if format == "csv":
        buf = io.StringIO()
        columns = list(AttackOutcome.__dataclass_fields__)
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for outcome in report.attacks:
            row = asdict(outcome)
            writer.writerow(_csv_cell(row[c]) for c in columns)
        totals = " ".join(f"{k}={v}" for k, v in asdict(report.totals).items())
        buf.write(f"# totals {totals}\n")
        return buf.getvalue()
    raise ValueError(f"unknown report format {format!r}")


def _csv_cell(value: object) -> object:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    return value


def report_from_json(text: str) -> RunReport:
    doc = json.loads(text)
    return RunReport(
        seed=doc["seed"],
        attacks=[AttackOutcome(**a) for a in doc["attacks"]],
        totals=Totals(**doc["totals"]),
        metrics=Metrics(**doc["metrics"]),
    )
