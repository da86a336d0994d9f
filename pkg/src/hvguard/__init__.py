"""Simulator for hypervisor-enforced kernel invariants and a software TPM model."""

from .attacks import AttackEngine, AttackKind, AttackScenario, detection_oracle
from .guest import Guest, GuestMemory, HeapAllocation, Isolation, Process, TrapEvent
from .harness import RunReport, Simulation, emit_report, report_from_json, run
from .monitor import (
    DetectionReport, FixedBudget, IntegrityMonitor, LoadAdaptiveBudget, ProtectionRecord, compute_budget, digest,
)
from .scenario import ScenarioConfig, ScheduleSpec, parse_scenario
from .trust_chain import (
    BlobStore, MeasurementRegister, MicroTpm, Quote, SealedBlob, TpmDevice, extend, flicker_session,
    utpm_bootstrap, verify_quote,
)
from .trusted_module import (
    KernelObject, ObjectDeclaration, ObjectKind, RegistrationPayload, SymbolMap, TrustedModule,
    enumerate_invariants,
)

__version__ = "0.1.0"
