"""Desk-scale, deterministic simulator of store-buffer transient forwarding.

An out-of-order core's store buffer misforwards buffered data to loads whose
address translation fails but whose 12-bit page offset matches a pending
store; combined with a Flush+Reload probe array this leaks bytes across
privilege boundaries. The package models the buffer, the memory subsystem,
the transient-execution machinery, and the experiments built on them.
"""

from .arch_profile import (
    ArchProfile,
    FaultCause,
    Microarch,
    Suppression,
    builtin_profile,
    builtin_profiles,
    leak_permitted,
    load_profile,
    profile_from_text,
    profile_to_text,
)
from .covert_channel import ProbeArray, ProbeReading, decode, prime, probe_hits
from .errors import (
    ConfigError,
    ContractViolation,
    FalloutSimError,
    InconsistentSubkeys,
    RecoveryTimeout,
    StallError,
)
from .memory_system import (
    Access,
    AddressSpace,
    AssistKind,
    CacheModel,
    PageTableEntry,
    Privilege,
    Translation,
    apply_assist,
    flush_line,
    timed_access,
    translate,
)
from .pipeline import (
    ExecutionResult,
    MicroOp,
    RunConfig,
    format_program,
    parse_program,
    run,
    transient_budget,
)
from .scenarios import ScenarioReport, ScenarioSpec, run_scenario
from .store_buffer import (
    ForwardDecision,
    StoreBuffer,
    StoreBufferEntry,
    attach_sda,
    drain,
    flush_all,
    match_load,
    push_sta,
    push_store,
    resolve_sta,
)

__version__ = "0.1.0"
