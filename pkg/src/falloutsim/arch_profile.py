"""Per-microarchitecture behavior: leak matrix, buffer geometry, timing constants.

The central object is the fault-cause x suppression-mechanism leak matrix.
Three profiles ship: Skylake and Kaby Lake share one matrix ("pre Coffee
Lake R"), Coffee Lake R carries the regression (a not-present user page
leaks under TSX) together with the mitigation flips (kernel data no longer
leaks, and SMAP no longer leaks under branch misprediction).
"""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping

from .errors import ConfigError, ContractViolation


class Microarch(str, enum.Enum):
    SKYLAKE = "skylake"
    KABY_LAKE = "kabylake"
    COFFEE_LAKE_R = "coffeelake-r"


class FaultCause(str, enum.Enum):
    USER_NOT_PRESENT = "user_not_present"
    KERNEL_DATA = "kernel_data"
    KERNEL_CODE = "kernel_code"
    KERNEL_NOT_PRESENT = "kernel_not_present"
    SMAP_VIOLATION = "smap_violation"
    NONE = "none"  # architecturally legal access; used only by the assist path


class Suppression(str, enum.Enum):
    TSX = "tsx"
    BRANCH_MISPREDICT = "branch_mispredict"
    NONE_REQUIRED = "none_required"  # valid only for microcode-assist windows


#: Fault causes that appear as leak-matrix rows (everything except NONE).
MATRIX_CAUSES = (
    FaultCause.USER_NOT_PRESENT,
    FaultCause.KERNEL_DATA,
    FaultCause.KERNEL_CODE,
    FaultCause.KERNEL_NOT_PRESENT,
    FaultCause.SMAP_VIOLATION,
)

#: Suppression mechanisms that appear as leak-matrix columns.
MATRIX_SUPPRESSIONS = (Suppression.TSX, Suppression.BRANCH_MISPREDICT)

MatrixKey = tuple[FaultCause, Suppression]

_T, _B = Suppression.TSX, Suppression.BRANCH_MISPREDICT

# Matrix for Skylake / Kaby Lake.
PRE_CFL_R_MATRIX: Mapping[MatrixKey, bool] = MappingProxyType({
    (FaultCause.USER_NOT_PRESENT, _T): False,
    (FaultCause.USER_NOT_PRESENT, _B): False,
    (FaultCause.KERNEL_DATA, _T): True,
    (FaultCause.KERNEL_DATA, _B): True,
    (FaultCause.KERNEL_CODE, _T): True,
    (FaultCause.KERNEL_CODE, _B): True,
    (FaultCause.KERNEL_NOT_PRESENT, _T): False,
    (FaultCause.KERNEL_NOT_PRESENT, _B): False,
    (FaultCause.SMAP_VIOLATION, _T): True,
    (FaultCause.SMAP_VIOLATION, _B): True,
})

# Coffee Lake R: regression at (user_not_present, tsx); hardware mitigations
# flip kernel_data (both columns) and smap under branch misprediction.
CFL_R_MATRIX: Mapping[MatrixKey, bool] = MappingProxyType({
    (FaultCause.USER_NOT_PRESENT, _T): True,
    (FaultCause.USER_NOT_PRESENT, _B): False,
    (FaultCause.KERNEL_DATA, _T): False,
    (FaultCause.KERNEL_DATA, _B): False,
    (FaultCause.KERNEL_CODE, _T): True,
    (FaultCause.KERNEL_CODE, _B): True,
    (FaultCause.KERNEL_NOT_PRESENT, _T): False,
    (FaultCause.KERNEL_NOT_PRESENT, _B): False,
    (FaultCause.SMAP_VIOLATION, _T): True,
    (FaultCause.SMAP_VIOLATION, _B): False,
})

STORE_BUFFER_ENTRIES = 56

# Timing plumbing defaults. Hit/miss straddle the observed bands (hits well
# below 100 cycles, misses above 200); drain rate and kernel return cost are
# the free parameters the kernel-leak scenario is fit with.
DEFAULT_CACHE_HIT_CYCLES = 50
DEFAULT_CACHE_MISS_CYCLES = 250
DEFAULT_SB_DRAIN_CYCLES_PER_ENTRY = 40
DEFAULT_KERNEL_RETURN_CYCLES = 400


@dataclass(frozen=True)
class ArchProfile:
    """Immutable per-microarchitecture parameter set."""

    name: str
    sb_capacity: int = STORE_BUFFER_ENTRIES
    leak_matrix: Mapping[MatrixKey, bool] = field(default=PRE_CFL_R_MATRIX)
    cache_hit_cycles: int = DEFAULT_CACHE_HIT_CYCLES
    cache_miss_cycles: int = DEFAULT_CACHE_MISS_CYCLES
    sb_drain_cycles_per_entry: int = DEFAULT_SB_DRAIN_CYCLES_PER_ENTRY
    kernel_return_cycles: int = DEFAULT_KERNEL_RETURN_CYCLES
    wtf_success_rate: float = 1.0

    def __post_init__(self):
        if not isinstance(self.leak_matrix, MappingProxyType):
            object.__setattr__(self, "leak_matrix", MappingProxyType(dict(self.leak_matrix)))
        missing = [k for c in MATRIX_CAUSES for s in MATRIX_SUPPRESSIONS
                   if (k := (c, s)) not in self.leak_matrix]
        if missing:
            raise ConfigError(f"leak matrix is missing cells: {missing}")
        if not self.cache_hit_cycles < self.cache_miss_cycles:
            raise ConfigError("cache_hit_cycles must be below cache_miss_cycles")
        if not 0.0 <= self.wtf_success_rate <= 1.0:
            raise ConfigError("wtf_success_rate must lie in [0, 1]")
        if self.sb_capacity < 1:
            raise ConfigError("sb_capacity must be positive")


_BUILTINS = {
    Microarch.SKYLAKE: ArchProfile(name=Microarch.SKYLAKE.value, leak_matrix=PRE_CFL_R_MATRIX),
    Microarch.KABY_LAKE: ArchProfile(name=Microarch.KABY_LAKE.value, leak_matrix=PRE_CFL_R_MATRIX),
    Microarch.COFFEE_LAKE_R: ArchProfile(name=Microarch.COFFEE_LAKE_R.value,
                                         leak_matrix=CFL_R_MATRIX),
}


def builtin_profile(arch: Microarch | str) -> ArchProfile:
    """Return the shipped profile for one of the three modeled microarchitectures."""
    if isinstance(arch, str):
        try:
            arch = Microarch(arch.lower())
        except ValueError:
            raise ConfigError(f"unknown microarchitecture {arch!r}") from None
    return _BUILTINS[arch]


def builtin_profiles() -> tuple[ArchProfile, ...]:
    """All three shipped profiles, in a fixed order."""
    return tuple(_BUILTINS[m] for m in Microarch)


def leak_permitted(profile: ArchProfile, cause: FaultCause, supp: Suppression) -> bool:
    """Whether a transient window with this fault cause and suppression can leak.

    The (NONE, NONE_REQUIRED) cell is the microcode-assist path and leaks on
    every architecture. Any other pairing involving NONE / NONE_REQUIRED is
    not a defined matrix cell.
    """
    if cause is FaultCause.NONE and supp is Suppression.NONE_REQUIRED:
        return True
    if cause is FaultCause.NONE or supp is Suppression.NONE_REQUIRED:
        raise ContractViolation(f"undefined leak-matrix cell ({cause.value}, {supp.value})")
    return profile.leak_matrix[(cause, supp)]


# ---------------------------------------------------------------------------
# Plain-text serialization (key=value, one leak-matrix cell per line) so
# users can define hypothetical microarchitectures.
# ---------------------------------------------------------------------------

_INT_FIELDS = ("sb_capacity", "cache_hit_cycles", "cache_miss_cycles",
               "sb_drain_cycles_per_entry", "kernel_return_cycles")


def profile_to_text(profile: ArchProfile) -> str:
    lines = [f"name={profile.name}"]
    for f in _INT_FIELDS:
        lines.append(f"{f}={getattr(profile, f)}")
    lines.append(f"wtf_success_rate={profile.wtf_success_rate}")
    for cause in MATRIX_CAUSES:
        for supp in MATRIX_SUPPRESSIONS:
            bit = profile.leak_matrix[(cause, supp)]
            lines.append(f"leak.{cause.value}.{supp.value}={'true' if bit else 'false'}")
    return "\n".join(lines) + "\n"


def profile_from_text(text: str) -> ArchProfile:
    fields: dict = {}
    matrix: dict[MatrixKey, bool] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"profile line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key.startswith("leak."):
            try:
                _, cause_s, supp_s = key.split(".")
                cell = (FaultCause(cause_s), Suppression(supp_s))
            except ValueError:
                raise ConfigError(f"profile line {lineno}: bad matrix cell {key!r}") from None
            if value.lower() not in ("true", "false"):
                raise ConfigError(f"profile line {lineno}: matrix cells are true/false")
            matrix[cell] = value.lower() == "true"
        elif key == "name":
            fields["name"] = value
        elif key in _INT_FIELDS:
            fields[key] = int(value)
        elif key == "wtf_success_rate":
            fields[key] = float(value)
        else:
            raise ConfigError(f"profile line {lineno}: unknown key {key!r}")
    if "name" not in fields:
        raise ConfigError("profile file must set name=")
    return ArchProfile(leak_matrix=matrix, **fields)


def load_profile(name: str, profile_dir: str | None = None) -> ArchProfile:
    """Resolve a profile name: builtin first, then <dir>/<name>.profile.

    The directory defaults to the FALLOUTSIM_PROFILE_DIR environment variable.
    """
    try:
        return builtin_profile(name)
    except ConfigError:
        pass
    if profile_dir is None:
        profile_dir = os.environ.get("FALLOUTSIM_PROFILE_DIR", "")
    if profile_dir:
        path = os.path.join(profile_dir, f"{name}.profile")
        if os.path.exists(path):
            with open(path, "r", encoding="utf-8") as handle:
                return profile_from_text(handle.read())
    raise ConfigError(f"unknown profile {name!r}")
