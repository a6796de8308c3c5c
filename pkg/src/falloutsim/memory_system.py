"""Single-level paging, fault/assist classification, and a timing-only cache.

Translation collapses the 4-level x86 walk into one map from virtual page
number to PageTableEntry; the attacks depend only on the *outcome* of a
translation (physical address, fault cause, or pending accessed/dirty
assist), never on walk latency. Virtual page numbers at or above
``kernel_vpn_base`` belong to the kernel range.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .arch_profile import (
    ArchProfile,
    DEFAULT_CACHE_HIT_CYCLES,
    DEFAULT_CACHE_MISS_CYCLES,
    FaultCause,
)
from .errors import ConfigError, ContractViolation

PAGE_SIZE = 4096
LINE_SIZE = 64
KERNEL_VPN_BASE = 1 << 19


class Access(enum.Enum):
    READ = "read"
    WRITE = "write"


class Privilege(enum.Enum):
    USER = "user"
    KERNEL = "kernel"


class AssistKind(str, enum.Enum):
    SET_ACCESSED = "set_accessed"
    SET_DIRTY = "set_dirty"


@dataclass(slots=True)
class PageTableEntry:
    frame: int
    present: bool = True
    user_accessible: bool = True
    writable: bool = True
    accessed: bool = False
    dirty: bool = False
    is_code: bool = False


@dataclass(frozen=True, slots=True)
class Translation:
    """Outcome of one translation: exactly one of ok / fault / assist."""

    kind: str  # "ok" | "fault" | "assist"
    paddr: int | None = None
    fault: FaultCause | None = None
    assist: AssistKind | None = None

    @property
    def is_ok(self) -> bool:
        return self.kind == "ok"


def _ok(paddr: int) -> Translation:
    return Translation("ok", paddr=paddr)


def _fault(cause: FaultCause) -> Translation:
    return Translation("fault", fault=cause)


def _assist(kind: AssistKind) -> Translation:
    return Translation("assist", assist=kind)


@dataclass
class AddressSpace:
    page_table: dict[int, PageTableEntry] = field(default_factory=dict)
    smap_enabled: bool = False
    kernel_vpn_base: int = KERNEL_VPN_BASE

    def map_page(self, vpn: int, frame: int | None = None, **flags) -> PageTableEntry:
        """Install a PTE; the frame defaults to an identity mapping."""
        pte = PageTableEntry(frame=vpn if frame is None else frame, **flags)
        self.page_table[vpn] = pte
        return pte

    def is_kernel_vpn(self, vpn: int) -> bool:
        return vpn >= self.kernel_vpn_base


def translate(space: AddressSpace, vaddr: int, access: Access,
              privilege: Privilege) -> Translation:
    """Classify one memory access.

    Check order: presence, then privilege (supervisor pages against user
    accesses, SMAP for kernel touches of present user pages), then the
    accessed/dirty microcode-assist conditions, and only then Ok.
    """
    vpn, offset = divmod(vaddr, PAGE_SIZE)
    pte = space.page_table.get(vpn)
    if pte is None or not pte.present:
        if vpn >= space.kernel_vpn_base:
            return _fault(FaultCause.KERNEL_NOT_PRESENT)
        return _fault(FaultCause.USER_NOT_PRESENT)
    if privilege is Privilege.USER and not pte.user_accessible:
        return _fault(FaultCause.KERNEL_CODE if pte.is_code else FaultCause.KERNEL_DATA)
    if privilege is Privilege.KERNEL and pte.user_accessible and space.smap_enabled:
        return _fault(FaultCause.SMAP_VIOLATION)
    if access is Access.WRITE and not pte.writable:
        raise ContractViolation(
            f"write to read-only page {vpn:#x}: write-protection faults are not modeled")
    if not pte.accessed:
        return _assist(AssistKind.SET_ACCESSED)
    if access is Access.WRITE and not pte.dirty:
        return _assist(AssistKind.SET_DIRTY)
    return _ok(pte.frame * PAGE_SIZE + offset)


def apply_assist(space: AddressSpace, vaddr: int, kind: AssistKind) -> None:
    """Perform the microcode assist's page-table side effect at retirement.

    SET_DIRTY also sets accessed, so dirty implies accessed at all times.
    """
    vpn = vaddr // PAGE_SIZE
    pte = space.page_table.get(vpn)
    if pte is None:
        raise ContractViolation(f"apply_assist on unmapped vpn {vpn:#x}")
    if kind is AssistKind.SET_ACCESSED:
        pte.accessed = True
    elif kind is AssistKind.SET_DIRTY:
        pte.dirty = True
        pte.accessed = True
    else:  # pragma: no cover - enum is closed
        raise ContractViolation(f"unknown assist kind {kind!r}")


# ---------------------------------------------------------------------------
# Cache: a set of 64-byte line ids with exactly two latencies.
# ---------------------------------------------------------------------------


@dataclass
class CacheModel:
    hit_cycles: int = DEFAULT_CACHE_HIT_CYCLES
    miss_cycles: int = DEFAULT_CACHE_MISS_CYCLES
    cached_lines: set[int] = field(default_factory=set)

    @classmethod
    def from_profile(cls, profile: ArchProfile) -> "CacheModel":
        return cls(hit_cycles=profile.cache_hit_cycles, miss_cycles=profile.cache_miss_cycles)


def line_of(paddr: int) -> int:
    return paddr // LINE_SIZE


def timed_access(cache: CacheModel, paddr: int) -> int:
    """Access latency for one physical address; the line is cached afterwards."""
    line = paddr // LINE_SIZE
    if line in cache.cached_lines:
        return cache.hit_cycles
    cache.cached_lines.add(line)
    return cache.miss_cycles


def flush_line(cache: CacheModel, paddr: int) -> None:
    cache.cached_lines.discard(paddr // LINE_SIZE)


def insert_line(cache: CacheModel, paddr: int) -> None:
    cache.cached_lines.add(paddr // LINE_SIZE)


# ---------------------------------------------------------------------------
# Address-space layouts as plain text (one page per line) so scenario
# configs can pin e.g. KASLR slot placement.
# ---------------------------------------------------------------------------

_FLAG_FIELDS = {
    "present": "present",
    "user": "user_accessible",
    "writable": "writable",
    "accessed": "accessed",
    "dirty": "dirty",
    "code": "is_code",
}


def layout_to_text(space: AddressSpace) -> str:
    lines = [f"smap={'on' if space.smap_enabled else 'off'}",
             f"kernel_vpn_base={space.kernel_vpn_base:#x}"]
    for vpn in sorted(space.page_table):
        pte = space.page_table[vpn]
        flags = " ".join(f"{name}={int(getattr(pte, attr))}"
                         for name, attr in _FLAG_FIELDS.items())
        lines.append(f"vpn={vpn:#x} frame={pte.frame:#x} {flags}")
    return "\n".join(lines) + "\n"


def layout_from_text(text: str) -> AddressSpace:
    space = AddressSpace()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        if tokens[0].startswith("smap="):
            space.smap_enabled = tokens[0].split("=", 1)[1] in ("on", "1", "true")
            continue
        if tokens[0].startswith("kernel_vpn_base="):
            space.kernel_vpn_base = int(tokens[0].split("=", 1)[1], 0)
            continue
        kv = {}
        for token in tokens:
            if "=" not in token:
                raise ConfigError(f"layout line {lineno}: bad token {token!r}")
            key, value = token.split("=", 1)
            kv[key] = value
        if "vpn" not in kv:
            raise ConfigError(f"layout line {lineno}: missing vpn=")
        vpn = int(kv.pop("vpn"), 0)
        frame = int(kv.pop("frame", hex(vpn)), 0)
        flags = {}
        for name, value in kv.items():
            if name not in _FLAG_FIELDS:
                raise ConfigError(f"layout line {lineno}: unknown flag {name!r}")
            flags[_FLAG_FIELDS[name]] = value in ("1", "true", "yes")
        space.page_table[vpn] = PageTableEntry(frame=frame, **flags)
    return space
