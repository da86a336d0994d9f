"""Exception hierarchy shared by every hvguard component."""

from __future__ import annotations


class HvGuardError(Exception):
    """Base class for all simulator errors."""


# guest
class OutOfBounds(HvGuardError):
    pass


class UnknownPid(HvGuardError):
    pass


class OutOfMemory(HvGuardError):
    pass


class IsolationViolation(HvGuardError):
    """A guest or attack operation ran while an isolated session was active."""


# trusted module
class UnresolvedSymbol(HvGuardError):
    pass


class UnknownHeapTag(HvGuardError):
    pass


class ModuleUnloaded(HvGuardError):
    pass


class AlreadyUnloaded(HvGuardError):
    pass


# hypervisor monitor
class TrustWindowClosed(HvGuardError):
    pass


class AlreadyEnforcing(HvGuardError):
    pass


class NotEnforcing(HvGuardError):
    pass


class EpochMismatch(HvGuardError):
    pass


# attacks
class NoOpAttack(HvGuardError):
    pass


class UnknownTarget(HvGuardError):
    pass


# trust chain
class TooLarge(HvGuardError):
    pass


class MeasurementMismatch(HvGuardError):
    pass


class IntegrityFailure(HvGuardError):
    pass


class StoreCorrupt(HvGuardError):
    pass


# scenarios
class ParseError(HvGuardError):
    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


class ValidationError(HvGuardError):
    pass
