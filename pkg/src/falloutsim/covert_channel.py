"""Flush+Reload covert channel over a 256-slot, page-strided probe array.

The transmitter is a transient touch of ``base + value * 4096``; the
receiver times a reload of every slot and classifies against a threshold
strictly between the hit and miss latencies. Slot pages are identity-mapped
in every scenario layout, so the receiver addresses slots physically.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .errors import ConfigError
from .memory_system import CacheModel, LINE_SIZE, flush_line, timed_access

PROBE_SLOTS = 256
PROBE_STRIDE = 4096


@dataclass(frozen=True)
class ProbeArray:
    base: int
    stride: int = PROBE_STRIDE
    slots: int = PROBE_SLOTS

    def slot_addr(self, slot: int) -> int:
        return self.base + slot * self.stride

    def slot_line(self, slot: int) -> int:
        return self.slot_addr(slot) // LINE_SIZE


@dataclass
class ProbeReading:
    latencies: list[int]
    threshold: int
    hits: set[int] = field(default_factory=set)


def default_threshold(cache: CacheModel) -> int:
    return (cache.hit_cycles + cache.miss_cycles) // 2


def prime(arr: ProbeArray, cache: CacheModel) -> None:
    """Flush all slot lines so any later hit must come from the transmitter."""
    for slot in range(arr.slots):
        flush_line(cache, arr.slot_addr(slot))


def decode(arr: ProbeArray, cache: CacheModel, threshold: int | None = None) -> ProbeReading:
    """Time a reload of every slot; hits are slots below the threshold.

    Reading the array re-caches every line, so the receiver must prime again
    before the next trial.
    """
    if threshold is None:
        threshold = default_threshold(cache)
    if not cache.hit_cycles < threshold < cache.miss_cycles:
        raise ConfigError(
            f"threshold {threshold} must lie strictly between hit "
            f"({cache.hit_cycles}) and miss ({cache.miss_cycles}) latencies")
    latencies = [timed_access(cache, arr.slot_addr(slot)) for slot in range(arr.slots)]
    hits = {slot for slot, latency in enumerate(latencies) if latency < threshold}
    return ProbeReading(latencies=latencies, threshold=threshold, hits=hits)


def probe_hits(arr: ProbeArray, cache: CacheModel) -> set[int]:
    """Hit set only, without mutating the cache.

    Equivalent to ``decode(...).hits`` on a freshly primed array; used by
    high-trial-count scenarios where the full latency vector is not reported.
    """
    base_line = arr.base // LINE_SIZE
    lines_per_slot = arr.stride // LINE_SIZE
    top = base_line + arr.slots * lines_per_slot
    hits = set()
    for line in cache.cached_lines:
        if base_line <= line < top:
            slot, rem = divmod(line - base_line, lines_per_slot)
            if rem == 0:
                hits.add(slot)
    return hits


def pollute(arr: ProbeArray, cache: CacheModel, rng: random.Random, p: float) -> None:
    """Channel-noise knob: with probability p, cache one uniformly random slot."""
    if p > 0.0 and rng.random() < p:
        cache.cached_lines.add(arr.slot_line(rng.randrange(arr.slots)))
