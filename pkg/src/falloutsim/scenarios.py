"""Named, seeded scenario runners producing figure-equivalent data.

Every runner is deterministic given its spec (seed included): trials derive
their randomness from per-trial seeds, aggregation is order-independent, and
reports render to byte-identical CSV/JSON across runs. Probability rows
carry Wilson 95% intervals in the JSON summary; the CSV columns follow the
fixed per-scenario schemas.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from typing import Callable

from . import pipeline as pl
from . import store_buffer as sbuf
from .arch_profile import (
    ArchProfile,
    FaultCause,
    Microarch,
    Suppression,
    leak_permitted,
    load_profile,
)
from .covert_channel import ProbeArray, decode, pollute, probe_hits
from .errors import ConfigError, RecoveryTimeout, StallError
from .memory_system import (
    Access,
    AddressSpace,
    CacheModel,
    PAGE_SIZE,
    Privilege,
    translate,
)
from .store_buffer import StoreBuffer
from . import aes_recover
from . import victims

DEFAULT_SEED = 1

# User-range page plan shared by the attack programs.
VICTIM_VPN = 0x100        # page the toy example stores 42 into
ATTACKER_VPN = 0x101      # revoked (or accessed-cleared) page the faulty load reads
SMAP_VPN = 0x102          # present user page dereferenced from kernel mode
FILLER_BASE_VPN = 0x200   # one page per attacker filler store
STORE_BASE_VPN = 0x300    # pages for the capacity experiment's store sequence
PROBE_BASE_VPN = 0x1000   # 256 identity-mapped probe pages

PROBE = ProbeArray(base=PROBE_BASE_VPN * PAGE_SIZE)

# Kernel-range fault targets.
KDATA_VPN = victims.KERNEL_WRITER_BASE_VPN - 0x10      # present kernel data page
KCODE_VPN = KDATA_VPN + 1                              # present kernel code page
KNP_VPN = KDATA_VPN + 2                                # kernel page left unmapped

# Filler stores use offsets in the upper half of the page so they never
# collide with kernel-writer offsets, which are drawn from the lower half.
FILLER_OFFSET_BASE = 2048
KERNEL_OFFSET_SPAN = 2048

DEFAULT_KERNEL_LEAK_FILLERS = 16
DEFAULT_RETURN_JITTER = 800

SCENARIO_NAMES = ("toy", "sb-capacity", "kernel-leak", "aes-key", "kaslr",
                  "assist", "matrix", "countermeasure")


def mix_seed(seed: int, *parts: int) -> int:
    h = seed & ((1 << 63) - 1)
    for p in parts:
        h = (h * 1_000_003 + p + 0x9E3779B9) & ((1 << 63) - 1)
    return h


def wilson_interval(successes: int, trials: int, z: float = 1.959964) -> tuple[float, float]:
    """Wilson score 95% interval for a binomial proportion."""
    if trials == 0:
        return (0.0, 1.0)
    phat = successes / trials
    denom = 1 + z * z / trials
    center = (phat + z * z / (2 * trials)) / denom
    half = (z / denom) * math.sqrt(phat * (1 - phat) / trials + z * z / (4 * trials * trials))
    return (max(0.0, center - half), min(1.0, center + half))


@dataclass
class ScenarioSpec:
    name: str
    profile: str = Microarch.SKYLAKE.value
    trials: int | None = None
    seed: int = DEFAULT_SEED
    overrides: dict[str, str] = field(default_factory=dict)
    kpti: bool = False
    hyperthread: bool = False
    countermeasure: bool = False
    jobs: int = 1
    trace: bool = False
    dump_sb: bool = False

    def __post_init__(self):
        if self.name not in SCENARIO_NAMES:
            raise ConfigError(f"unknown scenario {self.name!r}; "
                              f"expected one of {', '.join(SCENARIO_NAMES)}")
        if self.trials is not None and self.trials < 1:
            raise ConfigError("trials must be at least 1")

    def get_int(self, key: str, default: int) -> int:
        raw = self.overrides.get(key)
        try:
            return default if raw is None else int(raw, 0)
        except ValueError:
            raise ConfigError(f"override {key}={raw!r} is not an integer") from None

    def get_float(self, key: str, default: float) -> float:
        raw = self.overrides.get(key)
        try:
            return default if raw is None else float(raw)
        except ValueError:
            raise ConfigError(f"override {key}={raw!r} is not a number") from None

    def get_cause(self, default: FaultCause) -> FaultCause:
        raw = self.overrides.get("cause")
        if raw is None:
            return default
        try:
            return FaultCause(raw)
        except ValueError:
            raise ConfigError(f"unknown fault cause {raw!r}") from None

    def get_suppression(self, default: Suppression = Suppression.TSX) -> Suppression:
        raw = self.overrides.get("suppression")
        if raw is None:
            return default
        try:
            return Suppression(raw)
        except ValueError:
            raise ConfigError(f"unknown suppression {raw!r}") from None


@dataclass
class ScenarioReport:
    name: str
    columns: list[str]
    rows: list[tuple]
    summary: dict
    extra_lines: list[str] = field(default_factory=list)

    def to_csv(self) -> str:
        def fmt(value) -> str:
            if isinstance(value, bool):
                return "true" if value else "false"
            if isinstance(value, float):
                return f"{value:.6f}"
            if value is None:
                return ""
            return str(value)

        lines = [",".join(self.columns)]
        lines.extend(",".join(fmt(v) for v in row) for row in self.rows)
        lines.extend(self.extra_lines)
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        payload = {"scenario": self.name, "columns": self.columns,
                   "rows": [list(r) for r in self.rows], "summary": self.summary}
        return json.dumps(payload, sort_keys=True) + "\n"


def resolve_profile(spec: ScenarioSpec) -> ArchProfile:
    return load_profile(spec.profile)


def default_attack_cause(profile: ArchProfile) -> FaultCause:
    """Listing-1 style fault that actually leaks under TSX on this profile.

    The not-present user page only leaks on Coffee Lake R (the regression);
    earlier generations use a mapped kernel data page instead.
    """
    if profile.name == Microarch.COFFEE_LAKE_R.value:
        return FaultCause.USER_NOT_PRESENT
    return FaultCause.KERNEL_DATA


# ---------------------------------------------------------------------------
# Shared layout / program builders.
# ---------------------------------------------------------------------------


def map_probe_pages(space: AddressSpace) -> None:
    for i in range(PROBE.slots):
        space.map_page(PROBE_BASE_VPN + i, accessed=True, dirty=True)


def build_attack_space(smap: bool = False) -> AddressSpace:
    """Layout with the toy pages, fault-target pages, and the probe array."""
    space = AddressSpace(smap_enabled=smap)
    space.map_page(VICTIM_VPN, accessed=True, dirty=True)
    space.map_page(SMAP_VPN, accessed=True, dirty=True)
    space.map_page(KDATA_VPN, user_accessible=False, accessed=True, dirty=True)
    space.map_page(KCODE_VPN, user_accessible=False, is_code=True, accessed=True, dirty=True)
    map_probe_pages(space)
    return space


def fault_target_vaddr(cause: FaultCause, offset: int) -> int:
    if cause is FaultCause.USER_NOT_PRESENT:
        return ATTACKER_VPN * PAGE_SIZE + offset
    if cause is FaultCause.KERNEL_DATA:
        return KDATA_VPN * PAGE_SIZE + offset
    if cause is FaultCause.KERNEL_CODE:
        return KCODE_VPN * PAGE_SIZE + offset
    if cause is FaultCause.KERNEL_NOT_PRESENT:
        return KNP_VPN * PAGE_SIZE + offset
    if cause is FaultCause.SMAP_VIOLATION:
        return SMAP_VPN * PAGE_SIZE + offset
    raise ConfigError(f"no fault target for cause {cause!r}")


def attack_suffix(cause: FaultCause, supp: Suppression, offset: int,
                  reg: str = "r1", hw_thread: int = 0) -> list[pl.MicroOp]:
    """The faulty load plus dependent probe touch, under the given suppression."""
    target = fault_target_vaddr(cause, offset)
    ops: list[pl.MicroOp] = []
    if cause is FaultCause.SMAP_VIOLATION:
        ops.append(pl.enter_kernel())
    if supp is Suppression.TSX:
        ops += [pl.tsx_begin(), pl.load(target, reg, hw_thread),
                pl.probe(PROBE.base, reg, hw_thread), pl.tsx_end()]
        if cause is FaultCause.SMAP_VIOLATION:
            ops.append(pl.exit_kernel())
    elif supp is Suppression.BRANCH_MISPREDICT:
        # The wrong path never retires, so nothing follows the guard.
        ops += [pl.branch_guard(True), pl.load(target, reg, hw_thread),
                pl.probe(PROBE.base, reg, hw_thread)]
    else:
        raise ConfigError("attack suffix needs tsx or branch_mispredict suppression")
    return ops


def toy_program(cause: FaultCause, supp: Suppression, offset: int,
                value: int) -> list[pl.MicroOp]:
    ops = [pl.store(VICTIM_VPN * PAGE_SIZE + offset, value)]
    ops.extend(attack_suffix(cause, supp, offset))
    return ops


def _run_attack(profile: ArchProfile, program: list[pl.MicroOp], space: AddressSpace,
                seed: int, partitioned: bool = False,
                config: pl.RunConfig | None = None) -> tuple[pl.ExecutionResult, CacheModel]:
    sb = StoreBuffer.from_profile(profile, partitioned=partitioned)
    cache = CacheModel.from_profile(profile)
    result = pl.run(program, space, sb, cache, profile, seed=seed, config=config)
    return result, cache


# ---------------------------------------------------------------------------
# toy
# ---------------------------------------------------------------------------


def run_toy(spec: ScenarioSpec) -> ScenarioReport:
    """Listing-1 shaped single-shot attack; reports the full latency vector."""
    profile = resolve_profile(spec)
    cause = spec.get_cause(default_attack_cause(profile))
    supp = spec.get_suppression()
    offset = spec.get_int("offset", 7)
    value = spec.get_int("value", 42)
    noise_p = spec.get_float("noise", 0.0)

    space = build_attack_space(smap=cause is FaultCause.SMAP_VIOLATION)
    program = toy_program(cause, supp, offset, value)
    config = pl.RunConfig(trace=spec.trace, dump_sb=spec.dump_sb, kpti=spec.kpti)
    result, cache = _run_attack(profile, program, space, mix_seed(spec.seed, 0),
                                partitioned=spec.hyperthread, config=config)
    if noise_p > 0.0:
        pollute(PROBE, cache, random.Random(mix_seed(spec.seed, 1)), noise_p)
    reading = decode(PROBE, cache)
    recovered = next(iter(reading.hits)) if len(reading.hits) == 1 else None

    rows = [(slot, latency) for slot, latency in enumerate(reading.latencies)]
    summary = {
        "profile": profile.name,
        "cause": cause.value,
        "suppression": supp.value,
        "offset": offset,
        "value": value,
        "recovered": recovered,
        "hits": sorted(reading.hits),
        "leaked": bool(reading.hits),
        "faults_raised": result.faults_raised,
        "aborted_transactions": result.aborted_transactions,
    }
    report = ScenarioReport("toy", ["slot", "latency"], rows, summary)
    if result.trace:
        report.summary["trace"] = result.trace
    if result.sb_dump:
        report.summary["sb_dump"] = result.sb_dump
    return report


# ---------------------------------------------------------------------------
# matrix
# ---------------------------------------------------------------------------


def run_matrix(spec: ScenarioSpec) -> ScenarioReport:
    """Observed leak bit for all 5 fault causes x 2 suppressions on one profile."""
    profile = resolve_profile(spec)
    offset = spec.get_int("offset", 7)
    value = spec.get_int("value", 42)
    rows = []
    mismatches = []
    for cause_i, cause in enumerate(FaultCause):
        if cause is FaultCause.NONE:
            continue
        for supp_i, supp in enumerate(Suppression):
            if supp is Suppression.NONE_REQUIRED:
                continue
            space = build_attack_space(smap=cause is FaultCause.SMAP_VIOLATION)
            program = toy_program(cause, supp, offset, value)
            _, cache = _run_attack(profile, program, space,
                                   mix_seed(spec.seed, cause_i, supp_i))
            hits = probe_hits(PROBE, cache)
            leaked = hits == {value}
            rows.append((profile.name, cause.value, supp.value, leaked))
            if leaked != leak_permitted(profile, cause, supp):
                mismatches.append((cause.value, supp.value))
    summary = {"profile": profile.name, "cells": len(rows),
               "mismatches": mismatches, "conforms": not mismatches}
    return ScenarioReport("matrix", ["profile", "cause", "suppression", "leaked"],
                          rows, summary)


# ---------------------------------------------------------------------------
# sb-capacity
# ---------------------------------------------------------------------------


def build_capacity_space(n_max: int) -> AddressSpace:
    space = build_attack_space()
    for j in range(n_max):
        space.map_page(STORE_BASE_VPN + j, accessed=True, dirty=True)
    return space


def capacity_trial(profile: ArchProfile, space: AddressSpace, n_stores: int,
                   partitioned: bool, target_offset: int, cause: FaultCause,
                   supp: Suppression, gate: bool) -> bool:
    """One capacity probe: n stores, then a faulty load at the oldest offset.

    Drives the store-buffer and covert-channel APIs directly; the full µOP
    pipeline reproduces exactly the same outcomes (cross-checked by test)
    but is too slow for 896k trials.
    """
    sb = StoreBuffer.from_profile(profile, partitioned=partitioned)
    cache = CacheModel.from_profile(profile)
    memory: dict[int, int] = {}
    oldest_value = 42
    for j in range(n_stores):
        offset = (target_offset + j) % PAGE_SIZE
        vaddr = (STORE_BASE_VPN + j) * PAGE_SIZE + offset
        value = (oldest_value + j) % 256
        while True:
            try:
                sbuf.push_store(sb, vaddr, value, 0, paddr=vaddr)
                break
            except StallError:
                if not sbuf.drain(sb, cache, profile.sb_drain_cycles_per_entry,
                                  profile, memory):
                    raise
    load_vaddr = fault_target_vaddr(cause, target_offset)
    translation = translate(space, load_vaddr, Access.READ, Privilege.USER)
    if gate:
        decision = sbuf.match_load(sb, load_vaddr, translation, sb.next_order(), 0)
        if decision.kind == "wtf":
            cache.cached_lines.add(PROBE.slot_line(decision.data))
    return probe_hits(PROBE, cache) == {oldest_value}


def _capacity_cell(args) -> tuple[int, int, int, int]:
    (profile_name, partitioned, n_stores, attempts, offsets, cause_v, supp_v) = args
    profile = load_profile(profile_name)
    cause, supp = FaultCause(cause_v), Suppression(supp_v)
    gate = leak_permitted(profile, cause, supp)
    space = build_capacity_space(72)
    successes = 0
    step = PAGE_SIZE // offsets
    for o in range(offsets):
        target = o * step
        for _ in range(attempts):
            if capacity_trial(profile, space, n_stores, bool(partitioned),
                              target, cause, supp, gate):
                successes += 1
    return (partitioned, n_stores, successes, attempts * offsets)


def run_sb_capacity(spec: ScenarioSpec) -> ScenarioReport:
    """Recovery probability of the oldest of N stores, N swept past capacity.

    Runs both the single-thread and sibling-hyperthread-active configurations;
    the faulty load defaults to a mapped kernel code page so the experiment
    leaks on every profile.
    """
    profile = resolve_profile(spec)
    cause = spec.get_cause(FaultCause.KERNEL_CODE)
    supp = spec.get_suppression()
    n_min = spec.get_int("n_min", 1)
    n_max = spec.get_int("n_max", 70)
    attempts = spec.get_int("attempts", 100)
    offsets = spec.get_int("offsets", 64)
    if not 1 <= offsets <= PAGE_SIZE:
        raise ConfigError("offsets must lie in [1, 4096]")

    cells = [(profile.name, partitioned, n, attempts, offsets, cause.value, supp.value)
             for partitioned in (0, 1) for n in range(n_min, n_max + 1)]
    results = _map_jobs(_capacity_cell, cells, spec.jobs)

    rows = []
    intervals = []
    for partitioned, n, successes, total in results:
        p = successes / total
        rows.append((profile.name, partitioned, n, p))
        intervals.append(wilson_interval(successes, total))
    summary = {
        "profile": profile.name, "cause": cause.value, "suppression": supp.value,
        "attempts": attempts, "offsets": offsets,
        "wilson": [list(iv) for iv in intervals],
        "effective_capacity": {"single": profile.sb_capacity,
                               "hyperthread": profile.sb_capacity // 2},
    }
    return ScenarioReport("sb-capacity", ["profile", "hyperthread", "n_stores", "probability"],
                          rows, summary)


# ---------------------------------------------------------------------------
# kernel-leak (and countermeasure, which reuses its trial)
# ---------------------------------------------------------------------------


def build_kernel_leak_space(fillers: int, k_max: int) -> AddressSpace:
    space = build_attack_space()
    for j in range(fillers):
        space.map_page(FILLER_BASE_VPN + j, accessed=True, dirty=True)
    cfg = victims.KernelWriterConfig(offsets=tuple(range(k_max)),
                                     secret_bytes=tuple([0] * k_max))
    victims.map_kernel_writer_pages(space, cfg)
    return space


def kernel_leak_trial(profile: ArchProfile, space: AddressSpace, k: int,
                      fillers: int, cause: FaultCause, supp: Suppression,
                      trial_seed: int, jitter: int, kpti: bool,
                      countermeasure_flush: bool, cross_thread: bool) -> bool:
    """One kernel-write leakage trial; True when the last secret is recovered."""
    rng = random.Random(trial_seed)
    offsets = rng.sample(range(KERNEL_OFFSET_SPAN), k)
    secrets = [rng.randrange(256) for _ in range(k)]
    victim_thread = 1 if cross_thread else 0
    cfg = victims.KernelWriterConfig(offsets=tuple(offsets), secret_bytes=tuple(secrets))

    program = [pl.store((FILLER_BASE_VPN + j) * PAGE_SIZE + FILLER_OFFSET_BASE + j,
                        (7 + j) % 256) for j in range(fillers)]
    program += victims.kernel_writer_program(cfg, hw_thread=victim_thread)
    program += attack_suffix(cause, supp, offsets[-1])

    sb = StoreBuffer.from_profile(profile, partitioned=cross_thread)
    cache = CacheModel.from_profile(profile)
    config = pl.RunConfig(kpti=kpti, return_jitter_cycles=jitter)
    pl.run(program, space, sb, cache, profile, countermeasure_flush=countermeasure_flush,
           seed=trial_seed, config=config)
    return probe_hits(PROBE, cache) == {secrets[-1]}


def _kernel_leak_trial_batch(args) -> list[int]:
    (profile_name, seed, trial, ks, fillers, cause_v, supp_v, jitter, kpti,
     flush, cross) = args
    profile = load_profile(profile_name)
    cause, supp = FaultCause(cause_v), Suppression(supp_v)
    space = build_kernel_leak_space(fillers, max(ks))
    # One seed per trial index, reused across the k sweep: the jitter draw is
    # then identical for every k and each trial's success is monotone in k.
    trial_seed = mix_seed(seed, trial)
    return [int(kernel_leak_trial(profile, space, k, fillers, cause, supp,
                                  trial_seed, jitter, kpti, flush, cross))
            for k in ks]


def _kernel_leak_sweep(spec: ScenarioSpec, profile: ArchProfile, ks: list[int],
                       trials: int, fillers: int, cause: FaultCause,
                       supp: Suppression, jitter: int, kpti: bool,
                       flush: bool, cross: bool) -> list[tuple[int, int]]:
    """Success counts per k over the trial set."""
    batches = [(profile.name, spec.seed, trial, tuple(ks), fillers, cause.value,
                supp.value, jitter, kpti, flush, cross) for trial in range(trials)]
    per_trial = _map_jobs(_kernel_leak_trial_batch, batches, spec.jobs)
    return [(k, sum(batch[i] for batch in per_trial)) for i, k in enumerate(ks)]


def run_kernel_leak(spec: ScenarioSpec) -> ScenarioReport:
    """Recovery probability of the last of k kernel stores, k swept 1..k_max."""
    profile = resolve_profile(spec)
    cause = spec.get_cause(default_attack_cause(profile))
    supp = spec.get_suppression()
    trials = spec.trials if spec.trials is not None else 1000
    fillers = spec.get_int("fillers", DEFAULT_KERNEL_LEAK_FILLERS)
    jitter = spec.get_int("jitter", DEFAULT_RETURN_JITTER)
    k_min = spec.get_int("k_min", 1)
    k_max = spec.get_int("k_max", 20)
    ks = list(range(k_min, k_max + 1))

    counts = _kernel_leak_sweep(spec, profile, ks, trials, fillers, cause, supp,
                                jitter, spec.kpti, spec.countermeasure, False)
    rows = [(profile.name, spec.kpti, k, successes / trials) for k, successes in counts]
    summary = {
        "profile": profile.name, "cause": cause.value, "suppression": supp.value,
        "trials": trials, "fillers": fillers, "jitter": jitter, "kpti": spec.kpti,
        "wilson": [list(wilson_interval(s, trials)) for _, s in counts],
    }
    return ScenarioReport("kernel-leak", ["profile", "kpti", "k", "probability"],
                          rows, summary)


def run_countermeasure(spec: ScenarioSpec) -> ScenarioReport:
    """Kernel-leak with the store-buffer flush on vs off, plus the cross-thread case."""
    profile = resolve_profile(spec)
    cause = spec.get_cause(default_attack_cause(profile))
    supp = spec.get_suppression()
    trials = spec.trials if spec.trials is not None else 1000
    fillers = spec.get_int("fillers", DEFAULT_KERNEL_LEAK_FILLERS)
    jitter = spec.get_int("jitter", DEFAULT_RETURN_JITTER)
    k_min = spec.get_int("k_min", 1)
    k_max = spec.get_int("k_max", 10)
    ks = list(range(k_min, k_max + 1))

    modes = (("flush_off", False, False), ("flush_on", True, False),
             ("cross_thread", False, True))
    rows = []
    wilson: dict[str, list] = {}
    for mode_name, flush, cross in modes:
        counts = _kernel_leak_sweep(spec, profile, ks, trials, fillers, cause,
                                    supp, jitter, False, flush, cross)
        rows.extend((profile.name, mode_name, k, successes / trials)
                    for k, successes in counts)
        wilson[mode_name] = [list(wilson_interval(s, trials)) for _, s in counts]
    summary = {"profile": profile.name, "cause": cause.value,
               "suppression": supp.value, "trials": trials, "wilson": wilson}
    return ScenarioReport("countermeasure", ["profile", "mode", "k", "probability"],
                          rows, summary)


# ---------------------------------------------------------------------------
# kaslr
# ---------------------------------------------------------------------------


def _kaslr_trial(args) -> tuple[int, int, int]:
    (profile_name, seed, trial, slot_count, offset, value) = args
    profile = load_profile(profile_name)
    layout = victims.random_kaslr_layout(mix_seed(seed, trial), slot_count)
    space = AddressSpace()
    space.map_page(VICTIM_VPN, accessed=True, dirty=True)
    map_probe_pages(space)
    victims.map_kaslr_layout(space, layout)

    store_vaddr = VICTIM_VPN * PAGE_SIZE + offset
    found = []
    for i, slot_vpn in enumerate(layout.candidate_vpns):
        sb = StoreBuffer.from_profile(profile)
        cache = CacheModel.from_profile(profile)
        program = [pl.store(store_vaddr, value), pl.tsx_begin(),
                   pl.load(slot_vpn * PAGE_SIZE + offset, "r1"),
                   pl.probe(PROBE.base, "r1"), pl.tsx_end()]
        pl.run(program, space, sb, cache, profile, seed=mix_seed(seed, trial, i))
        if probe_hits(PROBE, cache) == {value}:
            found.append(i)
    found_slot = found[0] if len(found) == 1 else -1
    return (trial, layout.mapped_slot_index, found_slot)


def run_kaslr(spec: ScenarioSpec) -> ScenarioReport:
    """Probe every candidate kernel slot; the one that misforwards is mapped."""
    profile = resolve_profile(spec)
    trials = spec.trials if spec.trials is not None else 1000
    slot_count = spec.get_int("slots", victims.KASLR_SLOT_COUNT)
    offset = spec.get_int("offset", 7)
    value = spec.get_int("value", 42)

    args = [(profile.name, spec.seed, trial, slot_count, offset, value)
            for trial in range(trials)]
    results = _map_jobs(_kaslr_trial, args, spec.jobs)

    rows = [(trial, true_slot, found_slot, found_slot == true_slot)
            for trial, true_slot, found_slot in results]
    correct = sum(1 for r in rows if r[3])
    summary = {"profile": profile.name, "trials": trials, "slots": slot_count,
               "correct": correct, "accuracy": correct / trials}
    return ScenarioReport("kaslr", ["trial", "true_slot", "found_slot", "correct"],
                          rows, summary)


# ---------------------------------------------------------------------------
# assist
# ---------------------------------------------------------------------------


def run_assist(spec: ScenarioSpec) -> ScenarioReport:
    """Accessed-bit microcode assist: leak without any fault or suppression."""
    profile = resolve_profile(spec)
    offset = spec.get_int("offset", 7)
    value = spec.get_int("value", 42)
    clear_bit = spec.get_int("clear_accessed", 1)

    space = build_attack_space()
    space.map_page(ATTACKER_VPN, accessed=True, dirty=True)
    attacker_vaddr = ATTACKER_VPN * PAGE_SIZE + offset
    program = [pl.store(VICTIM_VPN * PAGE_SIZE + offset, value)]
    if clear_bit:
        program.append(pl.clear_accessed(attacker_vaddr))
    program += [pl.load(attacker_vaddr, "r1"), pl.probe(PROBE.base, "r1")]

    config = pl.RunConfig(trace=spec.trace, dump_sb=spec.dump_sb)
    result, cache = _run_attack(profile, program, space, mix_seed(spec.seed, 0),
                                config=config)
    # The redispatched load also probes the page's architectural byte; the
    # attacker knows that value and discounts it.
    own_byte = result.architectural_memory.get(attacker_vaddr, 0)
    hits = probe_hits(PROBE, cache) - {own_byte}
    recovered = next(iter(hits)) if len(hits) == 1 else None

    rows = [(profile.name, recovered, result.faults_raised)]
    summary = {"profile": profile.name, "recovered": recovered,
               "faults_raised": result.faults_raised,
               "aborted_transactions": result.aborted_transactions,
               "suppression_free": True}
    report = ScenarioReport("assist", ["profile", "recovered_byte", "faults_raised"],
                            rows, summary)
    if result.trace:
        summary["trace"] = result.trace
    return report


# ---------------------------------------------------------------------------
# aes-key
# ---------------------------------------------------------------------------


def make_aes_leak_fn(profile: ArchProfile, space: AddressSpace, ctx: victims.AesContext,
                     cause: FaultCause, supp: Suppression, seed: int,
                     noise_p: float) -> aes_recover.LeakFn:
    """One Fallout trial per call: victim expands the key, attacker loads at offset."""
    counter = [0]
    noise_rng = random.Random(mix_seed(seed, 0xAE5))
    victim_ops = victims.aes_expansion_program(ctx)

    def leak_fn(offset: int) -> set[int]:
        counter[0] += 1
        sb = StoreBuffer.from_profile(profile)
        cache = CacheModel.from_profile(profile)
        program = victim_ops + attack_suffix(cause, supp, offset)
        pl.run(program, space, sb, cache, profile, seed=mix_seed(seed, counter[0]))
        if noise_p > 0.0:
            pollute(PROBE, cache, noise_rng, noise_p)
        return probe_hits(PROBE, cache)

    return leak_fn


def run_aes_key(spec: ScenarioSpec) -> ScenarioReport:
    """Offset scan, rounds-9/10 recovery, and key-schedule reversal, end to end."""
    profile = resolve_profile(spec)
    cause = spec.get_cause(default_attack_cause(profile))
    supp = spec.get_suppression()
    keys = spec.trials if spec.trials is not None else 1
    ctx_offset = spec.get_int("ctx_offset", 0x110)
    stride = spec.get_int("scan_stride", aes_recover.SCAN_STRIDE)
    anchor = spec.get_int("scan_anchor", aes_recover.SCAN_ANCHOR)
    scan_trials = spec.get_int("scan_trials", aes_recover.DEFAULT_SCAN_TRIALS)
    vote_trials = spec.get_int("vote_trials", 1)
    noise_p = spec.get_float("noise", 0.0)

    space = build_attack_space()
    victims.map_aes_context_page(space)

    aggregate: dict[int, int] = {}
    key_summaries = []
    extra_lines = []
    for ki in range(keys):
        master = random.Random(mix_seed(spec.seed, ki, 0x5EED)).randbytes(16)
        ctx = victims.AesContext(master_key=master, context_page_offset=ctx_offset)
        leak_fn = make_aes_leak_fn(profile, space, ctx, cause, supp,
                                   mix_seed(spec.seed, ki), noise_p)
        histogram = aes_recover.scan_context_offset(leak_fn, stride, anchor, scan_trials)
        for offset, count in histogram.items():
            aggregate[offset] = aggregate.get(offset, 0) + count
        argmax = aes_recover.histogram_argmax(histogram)
        entry: dict = {"master": master.hex(), "argmax": argmax}
        if argmax is None:
            entry.update({"recovered": None, "correct": False, "base_offset": None})
        else:
            top = aes_recover.locate_schedule_end(leak_fn, argmax)
            base = top - (aes_recover.SCHEDULE_BYTES - 1)
            rk9, rk10 = aes_recover.recover_subkeys(leak_fn, base, vote_trials)
            recovered = aes_recover.reverse_key_schedule(rk10, rk9)
            entry.update({
                "base_offset": base,
                "base_correct": base == ctx_offset,
                "rk9": rk9.data.hex(), "rk10": rk10.data.hex(),
                "recovered": recovered.hex(),
                "correct": recovered == master,
            })
            extra_lines.append(f"# key_{ki} recovered={recovered.hex()}")
        key_summaries.append(entry)

    rows = [(offset, aggregate[offset]) for offset in sorted(aggregate)]
    summary = {"profile": profile.name, "cause": cause.value, "suppression": supp.value,
               "keys": keys, "ctx_offset": ctx_offset, "noise": noise_p,
               "vote_trials": vote_trials, "results": key_summaries,
               "all_correct": all(e.get("correct") for e in key_summaries)}
    return ScenarioReport("aes-key", ["offset", "hits"], rows, summary,
                          extra_lines=extra_lines)


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

_RUNNERS: dict[str, Callable[[ScenarioSpec], ScenarioReport]] = {
    "toy": run_toy,
    "sb-capacity": run_sb_capacity,
    "kernel-leak": run_kernel_leak,
    "aes-key": run_aes_key,
    "kaslr": run_kaslr,
    "assist": run_assist,
    "matrix": run_matrix,
    "countermeasure": run_countermeasure,
}


def run_scenario(spec: ScenarioSpec) -> ScenarioReport:
    return _RUNNERS[spec.name](spec)


def _map_jobs(worker, args_list, jobs: int):
    if jobs <= 1 or len(args_list) <= 1:
        return [worker(a) for a in args_list]
    from concurrent.futures import ProcessPoolExecutor
    chunksize = max(1, len(args_list) // (jobs * 4))
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(worker, args_list, chunksize=chunksize))
