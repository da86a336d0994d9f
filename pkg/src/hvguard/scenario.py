"""Scenario files.

A scenario is a line-oriented text file of ``[section]`` headers followed by
``key = value`` lines. ``#`` starts a comment. Integers accept ``0x``
prefixes, booleans are ``true``/``false``, byte strings are hex. Sections::

    [scenario]      memory_size, heap_base, seed, repair, initial_pid
    [budget]        policy = fixed | adaptive; per_trap; start_cursor;
                    base, window, scale, calibration (adaptive only)
    [symbols]       base = <addr>; every other key is symbol = offset
    [heap]          tag = size   (allocated first-fit in file order)
    [processes]     pid = cr3    (first listed runs at boot)
    [schedule]      switches = <pid> <pid> ...  | random_ticks = N | random_traps = N
    [object <id>]   kind = fixed | relocated | heap; address; symbol; tag;
                    size; copy; init (hex contents, else seeded fill)
    [attack <id>]   kind = persistent | transient | unprotected; target
                    (object id) or address + size; inject_at; duration;
                    payload (hex); cursor_aware

``[object]`` and ``[attack]`` may repeat; every other section at most once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

from .attacks import AttackKind, AttackScenario
from .errors import HvGuardError, ParseError, ValidationError
from .guest import DEFAULT_MEMORY_SIZE, Guest
from .monitor import BudgetPolicy, FixedBudget, LoadAdaptiveBudget
from .trusted_module import KernelObject, ObjectDeclaration, ObjectKind, SymbolMap, enumerate_invariants

MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class ScheduleSpec:
    """Either an explicit switch list or a seeded random schedule.

    ``random_ticks`` draws that many scheduler ticks; ``random_traps`` keeps
    drawing until that many context switches have happened.
    """

    switches: tuple[int, ...] = ()
    random_ticks: int | None = None
    random_traps: int | None = None

    @property
    def is_random(self) -> bool:
        return self.random_ticks is not None or self.random_traps is not None


@dataclass(frozen=True)
class ScenarioConfig:
    memory_size: int = DEFAULT_MEMORY_SIZE
    heap_base: int = 4096
    seed: int = 0
    repair_enabled: bool = True
    initial_pid: int | None = None
    symbols: SymbolMap = field(default_factory=SymbolMap)
    heap: tuple[tuple[str, int], ...] = ()
    processes: tuple[tuple[int, int], ...] = ()
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    objects: tuple[ObjectDeclaration, ...] = ()
    contents: Mapping[str, bytes] = field(default_factory=dict)
    budget_policy: BudgetPolicy = field(default_factory=FixedBudget)
    start_cursor: int = 0
    attacks: tuple[AttackScenario, ...] = ()


_SINGLETONS = {"scenario", "budget", "symbols", "heap", "processes", "schedule"}
_KEYS = {
    "scenario": {"memory_size", "heap_base", "seed", "repair", "initial_pid"},
    "budget": {"policy", "per_trap", "start_cursor", "base", "window", "scale", "calibration"},
    "schedule": {"switches", "random_ticks", "random_traps"},
    "object": {"kind", "address", "symbol", "tag", "size", "copy", "init"},
    "attack": {"kind", "target", "address", "size", "inject_at", "duration", "payload", "cursor_aware"},
}


@dataclass
class _Section:
    name: str
    ident: str | None
    line: int
    entries: dict[str, tuple[str, int]] = field(default_factory=dict)

    def get(self, key: str, conv, default=None):
        if key not in self.entries:
            return default
        raw, line = self.entries[key]
        try:
            return conv(raw)
        except ValueError as exc:
            raise ParseError(str(exc), line, key) from None

    def require(self, key: str, conv):
        if key not in self.entries:
            raise ParseError(f"missing required key in [{self.name}{' ' + self.ident if self.ident else ''}]",
                             self.line, key)
        return self.get(key, conv)


def _int(text: str) -> int:
    try:
        return int(text, 0)
    except ValueError:
        raise ValueError(f"expected an integer, got {text!r}") from None


def _float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ValueError(f"expected a number, got {text!r}") from None


def _bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "yes", "1"):
        return True
    if lowered in ("false", "no", "0"):
        return False
    raise ValueError(f"expected true or false, got {text!r}")


def _hex(text: str) -> bytes:
    cleaned = "".join(text.split())
    if cleaned.lower().startswith("0x"):
        cleaned = cleaned[2:]
    try:
        return bytes.fromhex(cleaned)
    except ValueError:
        raise ValueError(f"expected hex bytes, got {text!r}") from None


def _split_sections(text: str) -> list[_Section]:
    sections: list[_Section] = []
    current: _Section | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ParseError("unterminated section header", lineno)
            parts = line[1:-1].split()
            if not parts:
                raise ParseError("empty section header", lineno)
            name = parts[0].lower()
            if name in _SINGLETONS:
                if len(parts) != 1:
                    raise ParseError(f"[{name}] takes no identifier", lineno)
                if any(s.name == name for s in sections):
                    raise ParseError(f"[{name}] appears more than once", lineno)
                current = _Section(name, None, lineno)
            elif name in ("object", "attack"):
                if len(parts) != 2:
                    raise ParseError(f"[{name}] needs exactly one identifier", lineno)
                current = _Section(name, parts[1], lineno)
            else:
                raise ParseError(f"unknown section [{name}]", lineno)
            sections.append(current)
            continue
        if "=" not in line:
            raise ParseError("expected 'key = value'", lineno)
        if current is None:
            raise ParseError("entry outside of any section", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ParseError("empty key", lineno)
        allowed = _KEYS.get(current.name)
        if allowed is not None and key not in allowed:
            raise ParseError(f"unknown key in [{current.name}]", lineno, key)
        if key in current.entries:
            raise ParseError("duplicate key", lineno, key)
        current.entries[key] = (value, lineno)
    return sections


def _parse_budget(sec: _Section | None) -> tuple[BudgetPolicy, int]:
    if sec is None:
        return FixedBudget(), 0
    policy = sec.get("policy", str.lower, "fixed")
    start = sec.get("start_cursor", _int, 0)
    try:
        if policy == "fixed":
            return FixedBudget(sec.get("per_trap", _int, 1)), start
        if policy == "adaptive":
            return LoadAdaptiveBudget(
                base=sec.get("base", _int, 8),
                window=sec.get("window", _int, 64),
                scale=sec.get("scale", _float, 1.0),
                calibration=sec.get("calibration", _float, None),
            ), start
    except ValueError as exc:
        raise ParseError(str(exc), sec.line) from None
    raise ParseError(f"unknown budget policy {policy!r}", sec.entries["policy"][1], "policy")


def _parse_object(sec: _Section) -> tuple[ObjectDeclaration, bytes | None]:
    kind_text = sec.require("kind", str.lower)
    try:
        kind = ObjectKind(kind_text)
    except ValueError:
        raise ParseError(f"unknown object kind {kind_text!r}", sec.entries["kind"][1], "kind") from None
    decl = ObjectDeclaration(
        id=sec.ident,
        kind=kind,
        size=sec.get("size", _int),
        address=sec.get("address", _int),
        symbol=sec.get("symbol", str),
        tag=sec.get("tag", str),
        provide_copy=sec.get("copy", _bool, False),
    )
    required = {ObjectKind.STATIC_FIXED: ("address", "size"),
                ObjectKind.STATIC_RELOCATED: ("symbol", "size"),
                ObjectKind.DYNAMIC_HEAP: ("tag",)}[kind]
    for key in required:
        if key not in sec.entries:
            raise ParseError(f"{kind.value} object {sec.ident!r} needs {key}", sec.line, key)
    return decl, sec.get("init", _hex)


def _parse_attack(sec: _Section) -> AttackScenario:
    kind_text = sec.require("kind", str.lower)
    try:
        kind = AttackKind(kind_text)
    except ValueError:
        raise ParseError(f"unknown attack kind {kind_text!r}", sec.entries["kind"][1], "kind") from None
    target = sec.get("target", str)
    raw_range = None
    if "address" in sec.entries or "size" in sec.entries:
        raw_range = (sec.require("address", _int), sec.require("size", _int))
    try:
        return AttackScenario(
            id=sec.ident,
            kind=kind,
            inject_at=sec.require("inject_at", _int),
            payload=sec.require("payload", _hex),
            target=target,
            raw_range=raw_range,
            duration=sec.get("duration", _int, 0),
            cursor_aware=sec.get("cursor_aware", _bool, False),
        )
    except ValueError as exc:
        raise ParseError(str(exc), sec.line) from None


def parse_scenario(text: str) -> ScenarioConfig:
    sections = _split_sections(text)
    by_name = {s.name: s for s in sections if s.name in _SINGLETONS}

    kwargs: dict = {}
    top = by_name.get("scenario")
    if top is not None:
        kwargs.update(
            memory_size=top.get("memory_size", _int, DEFAULT_MEMORY_SIZE),
            heap_base=top.get("heap_base", _int, 4096),
            seed=top.get("seed", _int, 0),
            repair_enabled=top.get("repair", _bool, True),
            initial_pid=top.get("initial_pid", _int),
        )

    kwargs["budget_policy"], kwargs["start_cursor"] = _parse_budget(by_name.get("budget"))

    sym = by_name.get("symbols")
    if sym is not None:
        offsets = {k: sym.get(k, _int) for k in sym.entries if k != "base"}
        kwargs["symbols"] = SymbolMap(sym.get("base", _int, 0), offsets)

    heap = by_name.get("heap")
    if heap is not None:
        kwargs["heap"] = tuple((tag, heap.get(tag, _int)) for tag in heap.entries)

    procs = by_name.get("processes")
    if procs is not None:
        kwargs["processes"] = tuple((_pid(pid, procs), procs.get(pid, _int)) for pid in procs.entries)

    sched = by_name.get("schedule")
    if sched is not None:
        modes = [k for k in ("switches", "random_ticks", "random_traps") if k in sched.entries]
        if len(modes) > 1:
            raise ParseError("choose one of switches, random_ticks, random_traps", sched.line)
        kwargs["schedule"] = ScheduleSpec(
            switches=sched.get("switches", lambda v: tuple(_int(p) for p in v.replace(",", " ").split()), ()),
            random_ticks=sched.get("random_ticks", _int),
            random_traps=sched.get("random_traps", _int),
        )

    objects, contents = [], {}
    for sec in sections:
        if sec.name == "object":
            decl, init = _parse_object(sec)
            objects.append(decl)
            if init is not None:
                contents[decl.id] = init
    kwargs["objects"] = tuple(objects)
    kwargs["contents"] = contents
    kwargs["attacks"] = tuple(_parse_attack(sec) for sec in sections if sec.name == "attack")

    config = ScenarioConfig(**kwargs)
    validate_config(config)
    return config


def _pid(text: str, sec: _Section) -> int:
    try:
        return _int(text)
    except ValueError as exc:
        raise ParseError(str(exc), sec.entries[text][1], text) from None


def layout(config: ScenarioConfig) -> tuple[Guest, list[KernelObject]]:
    """Build the boot-time guest (processes, heap) and resolve every object."""
    guest = Guest(config.memory_size, config.heap_base)
    for pid, cr3 in config.processes:
        guest.add_process(pid, cr3)
    if config.initial_pid is not None:
        if config.initial_pid not in guest.processes:
            raise ValidationError(f"initial_pid {config.initial_pid} is not a listed process")
        guest.current_pid = config.initial_pid
    for tag, size in config.heap:
        guest.kheap_alloc(tag, size)
    objects = enumerate_invariants(config.objects, config.symbols, guest.heap.allocations, config.memory_size)
    return guest, objects


def _overlaps(a: tuple[int, int], b: tuple[int, int]) -> bool:
    return a[0] < b[0] + b[1] and b[0] < a[0] + a[1]


def validate_config(config: ScenarioConfig) -> list[KernelObject]:
    """Check every cross-reference; returns the resolved objects."""
    if not 0 <= config.seed <= MASK64:
        raise ValidationError("seed must fit in 64 bits")
    ids = [d.id for d in config.objects]
    dupes = {i for i in ids if ids.count(i) > 1}
    if dupes:
        raise ValidationError(f"duplicate object id(s): {', '.join(sorted(dupes))}")
    try:
        guest, objects = layout(config)
    except (HvGuardError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"{type(exc).__name__}: {exc}") from exc

    spans = sorted((o.address, o.size, o.id) for o in objects)
    for (a_addr, a_size, a_id), (b_addr, b_size, b_id) in zip(spans, spans[1:]):
        if a_addr + a_size > b_addr:
            raise ValidationError(f"objects {a_id!r} and {b_id!r} overlap")

    by_id = {o.id: o for o in objects}
    for obj_id, data in config.contents.items():
        if obj_id not in by_id:
            raise ValidationError(f"initial contents for unknown object {obj_id!r}")
        if len(data) != by_id[obj_id].size:
            raise ValidationError(f"initial contents of {obj_id!r} must be {by_id[obj_id].size} bytes")

    attack_ids = [a.id for a in config.attacks]
    dupes = {i for i in attack_ids if attack_ids.count(i) > 1}
    if dupes:
        raise ValidationError(f"duplicate attack id(s): {', '.join(sorted(dupes))}")
    for attack in config.attacks:
        if attack.kind is AttackKind.UNPROTECTED:
            if attack.raw_range is None:
                raise ValidationError(f"unprotected attack {attack.id!r} needs address and size")
            addr, size = attack.raw_range
            if size < 1 or addr < 0 or addr + size > config.memory_size:
                raise ValidationError(f"attack {attack.id!r} range is outside guest memory")
            hit = [o.id for o in objects if _overlaps((o.address, o.size), attack.raw_range)]
            if hit:
                raise ValidationError(f"unprotected attack {attack.id!r} overlaps protected {hit[0]!r}")
        else:
            if attack.target is None:
                raise ValidationError(f"{attack.kind.value} attack {attack.id!r} must name a target object")
            if attack.target not in by_id:
                raise ValidationError(f"attack {attack.id!r} references unknown object {attack.target!r}")
            size = by_id[attack.target].size
        if len(attack.payload) > size:
            raise ValidationError(f"payload of attack {attack.id!r} is larger than its target")

    sched = config.schedule
    if sched.is_random:
        if sched.switches:
            raise ValidationError("schedule cannot be both explicit and random")
        if len(config.processes) < 2:
            raise ValidationError("a random schedule needs at least two processes")
        count = sched.random_ticks if sched.random_ticks is not None else sched.random_traps
        if count < 0:
            raise ValidationError("schedule length must be non-negative")
    else:
        unknown = {pid for pid in sched.switches if pid not in guest.processes}
        if unknown:
            raise ValidationError(f"schedule references unknown pid(s) {sorted(unknown)}")
    if config.start_cursor < 0:
        raise ValidationError("start_cursor must be non-negative")
    return objects
