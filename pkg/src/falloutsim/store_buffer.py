"""The store buffer: split STA/SDA entries, forwarding, misforwarding, drain.

Entries keep the full virtual address, the 12-bit page offset, and (once the
address µOP resolved) the physical address. Store-to-load forwarding scans
youngest-first for a page-offset match; a load whose own translation is not
Ok takes the misforwarding path, where a page-offset hit counts as a full
hit ("the physical address check ... may be considered as a hit") and the
buffered byte is forwarded to a load it does not belong to.

Two structural rules shape every capacity experiment:

* the buffer is statically partitioned when the sibling hyperthread is
  active, halving the per-thread capacity, and forwarding never crosses
  hardware threads;
* the misforwarding machinery needs one free entry of headroom, so with N
  buffered stores a faulting load can reach the oldest one only while
  N <= effective_capacity - 1 (the measured "up to 55 stores" cutoff).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Deque

from .arch_profile import ArchProfile
from .errors import ContractViolation, StallError
from .memory_system import CacheModel, LINE_SIZE, PAGE_SIZE, Translation


@dataclass(slots=True)
class StoreBufferEntry:
    vaddr: int
    page_offset: int
    paddr: int | None
    data: int | None
    sta_resolved: bool
    sda_present: bool
    program_order: int
    hw_thread: int
    speculative: bool = False  # inside a still-open transaction


@dataclass(slots=True)
class ForwardDecision:
    kind: str  # "none" | "true" | "wtf"
    data: int | None = None
    matched_order: int | None = None

    @property
    def forwarded(self) -> bool:
        return self.kind != "none"


NO_FORWARD = ForwardDecision("none")


class StoreBuffer:
    """FIFO of in-flight stores, optionally partitioned between two threads."""

    def __init__(self, capacity: int = 56, partitioned: bool = False):
        self.capacity = capacity
        self.partitioned = partitioned
        # static partitioning halves each thread's share; fixed per instance
        self.effective_capacity = capacity // 2 if partitioned else capacity
        self.entries: Deque[StoreBufferEntry] = deque()
        self._next_order = 0
        self._counts = [0, 0]
        self._drain_credit = 0

    @classmethod
    def from_profile(cls, profile: ArchProfile, partitioned: bool = False) -> "StoreBuffer":
        return cls(capacity=profile.sb_capacity, partitioned=partitioned)

    def occupancy(self, hw_thread: int = 0) -> int:
        return self._counts[hw_thread]

    def next_order(self) -> int:
        return self._next_order

    def __len__(self) -> int:
        return len(self.entries)

    def dump(self) -> str:
        """Human-readable entry table for --dump-sb."""
        header = "order thr off   paddr      data sta sda spec"
        rows = [header]
        for e in self.entries:
            paddr = f"{e.paddr:#x}" if e.paddr is not None else "-"
            data = f"{e.data:#04x}" if e.data is not None else "-"
            rows.append(f"{e.program_order:5d} {e.hw_thread:3d} {e.page_offset:#5x} "
                        f"{paddr:>10} {data:>5} {int(e.sta_resolved):3d} "
                        f"{int(e.sda_present):3d} {int(e.speculative):4d}")
        return "\n".join(rows)


def push_store(sb: StoreBuffer, vaddr: int, data: int, hw_thread: int = 0,
               paddr: int | None = None, speculative: bool = False) -> int:
    """Buffer a store with both µOPs already resolved; returns its order."""
    counts = sb._counts
    if counts[hw_thread] >= sb.effective_capacity:
        raise StallError(f"store buffer full for thread {hw_thread} "
                         f"({counts[hw_thread]}/{sb.effective_capacity})")
    order = sb._next_order
    sb.entries.append(StoreBufferEntry(
        vaddr, vaddr % PAGE_SIZE, paddr, data, paddr is not None, True,
        order, hw_thread, speculative))
    counts[hw_thread] += 1
    sb._next_order = order + 1
    return order


def push_sta(sb: StoreBuffer, vaddr: int, hw_thread: int = 0) -> int:
    """Allocate an entry from the store-address µOP alone (no data yet)."""
    if sb._counts[hw_thread] >= sb.effective_capacity:
        raise StallError(f"store buffer full for thread {hw_thread} "
                         f"({sb._counts[hw_thread]}/{sb.effective_capacity})")
    order = sb._next_order
    sb.entries.append(StoreBufferEntry(
        vaddr, vaddr % PAGE_SIZE, None, None, False, False, order, hw_thread, False))
    sb._counts[hw_thread] += 1
    sb._next_order = order + 1
    return order


def _find(sb: StoreBuffer, order: int) -> StoreBufferEntry:
    for e in sb.entries:
        if e.program_order == order:
            return e
    raise ContractViolation(f"no buffered entry with order {order}")


def resolve_sta(sb: StoreBuffer, order: int, paddr: int) -> None:
    e = _find(sb, order)
    e.paddr = paddr
    e.sta_resolved = True


def attach_sda(sb: StoreBuffer, order: int, data: int) -> None:
    e = _find(sb, order)
    e.data = data
    e.sda_present = True


def match_load(sb: StoreBuffer, load_vaddr: int, translation: Translation,
               load_order: int, hw_thread: int = 0) -> ForwardDecision:
    """Decide forwarding for one load against the buffered stores.

    Same-thread entries older than the load are scanned youngest-first for a
    page-offset match. With an Ok translation only a full physical match
    forwards (a partial hit with a different physical address falls through
    and the scan continues). With a faulting or assist-pending translation
    the first offset match is treated as a full hit and its data is
    misforwarded, provided one entry of headroom is free.
    """
    offset = load_vaddr % PAGE_SIZE
    ok = translation.kind == "ok"
    if not ok and sb._counts[hw_thread] >= sb.effective_capacity:
        return NO_FORWARD
    for e in reversed(sb.entries):
        if (e.hw_thread != hw_thread or e.program_order >= load_order
                or e.page_offset != offset):
            continue
        if ok:
            if e.sta_resolved and e.paddr == translation.paddr and e.sda_present:
                return ForwardDecision("true", data=e.data, matched_order=e.program_order)
            continue  # partial or unresolved: keep looking for the exact match
        if e.sda_present:
            return ForwardDecision("wtf", data=e.data, matched_order=e.program_order)
        # offset hit without data: nothing to forward, keep scanning
    return NO_FORWARD


def _drain_one(sb: StoreBuffer, cache: CacheModel, memory: dict[int, int]) -> bool:
    """Write the head entry back if it is committed and fully resolved."""
    if not sb.entries:
        return False
    head = sb.entries[0]
    if head.speculative or head.paddr is None or head.data is None:
        return False  # drain is strictly in program order; a blocked head blocks all
    sb.entries.popleft()
    sb._counts[head.hw_thread] -= 1
    memory[head.paddr] = head.data
    cache.cached_lines.add(head.paddr // LINE_SIZE)
    return True


def drain(sb: StoreBuffer, cache: CacheModel, elapsed_cycles: int,
          profile: ArchProfile, memory: dict[int, int]) -> int:
    """Advance the drain engine by elapsed cycles; returns entries written back.

    One entry retires to the cache per ``sb_drain_cycles_per_entry``. Leftover
    cycles carry over while the buffer is busy; an idle or blocked engine does
    not bank more than one entry's worth of credit.
    """
    per_entry = profile.sb_drain_cycles_per_entry
    sb._drain_credit += elapsed_cycles
    drained = 0
    while sb._drain_credit >= per_entry:
        if not _drain_one(sb, cache, memory):
            sb._drain_credit = 0 if not sb.entries else per_entry
            return drained
        sb._drain_credit -= per_entry
        drained += 1
    if not sb.entries:
        sb._drain_credit = 0
    return drained


def flush_all(sb: StoreBuffer, cache: CacheModel, memory: dict[int, int]) -> int:
    """Drain every committed, resolved entry immediately (fence / domain switch)."""
    drained = 0
    while _drain_one(sb, cache, memory):
        drained += 1
    sb._drain_credit = 0
    return drained
