"""Straight-line µOP execution with transient windows past faults and assists.

The interpreter retires µOPs in program order and models transience as a
budget of µOPs that execute with microarchitectural effects only (cache
insertions) before the pipeline squashes them:

* a faulting load inside a transaction opens a window that runs until the
  transaction end, then the transaction aborts and architectural state rolls
  back (buffered transactional stores, registers, page-table bits);
* a mispredicted branch guard turns the rest of the program into the wrong
  path: it executes transiently and nothing after the guard retires;
* a load needing an accessed/dirty microcode assist opens a window with the
  misforwarded value, then is redispatched: the assist applies, the load
  re-executes architecturally, and it retires without any fault;
* a faulting load with no suppression terminates the run (models the crash).

Time is advanced by domain switches (kernel return cost plus optional seeded
jitter) and by stores stalling on a full buffer; the drain engine writes one
entry back per ``sb_drain_cycles_per_entry`` of elapsed time. Store issue
itself is free - buffering without stalling is the point of the structure.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .arch_profile import ArchProfile, FaultCause, Suppression, leak_permitted
from .covert_channel import PROBE_STRIDE
from .errors import ContractViolation, StallError
from .memory_system import (
    Access,
    AddressSpace,
    AssistKind,
    CacheModel,
    LINE_SIZE,
    PAGE_SIZE,
    Privilege,
    Translation,
    apply_assist,
    translate,
)
from . import store_buffer as sbuf
from .store_buffer import StoreBuffer

# Transient window size: grows with store-buffer occupancy because pending
# stores delay retirement of the faulting load (the filler-store trick).
BASE_TRANSIENT_BUDGET = 8
TRANSIENT_BUDGET_FILLER_DIVISOR = 4


def transient_budget(profile: ArchProfile, filler_stores: int,
                     base: int = BASE_TRANSIENT_BUDGET,
                     divisor: int = TRANSIENT_BUDGET_FILLER_DIVISOR) -> int:
    """µOP budget of a transient window given current buffer occupancy."""
    if filler_stores < 0:
        raise ContractViolation("filler_stores must be non-negative")
    return base + filler_stores // divisor


@dataclass(slots=True)
class MicroOp:
    kind: str
    vaddr: int | None = None
    value: int | None = None
    reg: str | None = None
    base: int | None = None
    mispredicted: bool = False
    hw_thread: int = 0


def store(vaddr: int, value: int, hw_thread: int = 0) -> MicroOp:
    return MicroOp("store", vaddr=vaddr, value=value, hw_thread=hw_thread)


def load(vaddr: int, reg: str, hw_thread: int = 0) -> MicroOp:
    return MicroOp("load", vaddr=vaddr, reg=reg, hw_thread=hw_thread)


def probe(base: int, reg: str, hw_thread: int = 0) -> MicroOp:
    return MicroOp("probe", base=base, reg=reg, hw_thread=hw_thread)


def tsx_begin() -> MicroOp:
    return MicroOp("tsx_begin")


def tsx_end() -> MicroOp:
    return MicroOp("tsx_end")


def branch_guard(mispredicted: bool) -> MicroOp:
    return MicroOp("branch_guard", mispredicted=mispredicted)


def clear_accessed(vaddr: int) -> MicroOp:
    return MicroOp("clear_accessed", vaddr=vaddr)


def enter_kernel() -> MicroOp:
    return MicroOp("enter_kernel")


def exit_kernel() -> MicroOp:
    return MicroOp("exit_kernel")


def fence() -> MicroOp:
    return MicroOp("fence")


def validate_program(program: list[MicroOp]) -> dict[int, int]:
    """Check transaction balance (no nesting) and map tsx_begin -> tsx_end index."""
    ends: dict[int, int] = {}
    open_idx: int | None = None
    for i, op in enumerate(program):
        if op.kind == "tsx_begin":
            if open_idx is not None:
                raise ContractViolation(f"nested tsx_begin at µOP {i}")
            open_idx = i
        elif op.kind == "tsx_end":
            if open_idx is None:
                raise ContractViolation(f"tsx_end without tsx_begin at µOP {i}")
            ends[open_idx] = i
            open_idx = None
    if open_idx is not None:
        raise ContractViolation(f"unterminated transaction opened at µOP {open_idx}")
    return ends


@dataclass
class RunConfig:
    kpti: bool = False
    return_jitter_cycles: int = 0
    budget_base: int = BASE_TRANSIENT_BUDGET
    budget_divisor: int = TRANSIENT_BUDGET_FILLER_DIVISOR
    trace: bool = False
    dump_sb: bool = False


@dataclass
class ExecutionResult:
    architectural_memory: dict[int, int]
    cache: CacheModel
    aborted_transactions: int = 0
    faults_raised: int = 0
    terminated_by_fault: bool = False
    trace: list[str] | None = None
    sb_dump: str | None = None


@dataclass
class _Txn:
    end: int
    regs: dict[str, int]
    priv: Privilege
    undo: list = field(default_factory=list)


def run(program: list[MicroOp], space: AddressSpace, sb: StoreBuffer,
        cache: CacheModel, profile: ArchProfile, countermeasure_flush: bool = False,
        seed: int = 0, config: RunConfig | None = None,
        initial_memory: dict[int, int] | None = None) -> ExecutionResult:
    """Execute a µOP program; deterministic given the seed."""
    cfg = config or RunConfig()
    rng = random.Random(seed)
    tsx_ends = validate_program(program)
    memory: dict[int, int] = dict(initial_memory) if initial_memory else {}
    regs: dict[str, int] = {}
    priv = Privilege.USER
    txn: _Txn | None = None
    aborts = 0
    faults = 0
    terminated = False
    trace: list[str] | None = [] if cfg.trace else None

    def note(msg: str) -> None:
        if trace is not None:
            trace.append(msg)

    def advance(cycles: int) -> None:
        if cycles > 0:
            sbuf.drain(sb, cache, cycles, profile, memory)

    def record_pte(pte, attr: str) -> None:
        if txn is not None:
            txn.undo.append((pte, attr, getattr(pte, attr)))

    def assist_logged(vaddr: int, kind: AssistKind) -> None:
        pte = space.page_table[vaddr // PAGE_SIZE]
        record_pte(pte, "accessed")
        record_pte(pte, "dirty")
        apply_assist(space, vaddr, kind)

    def check_wtf(decision, translation: Translation) -> None:
        if decision.kind == "wtf" and translation.is_ok:
            raise ContractViolation("WtfForward produced for an Ok translation")

    def wtf_fires() -> bool:
        rate = profile.wtf_success_rate
        return rate >= 1.0 or rng.random() < rate

    def push_with_stall(vaddr: int, data: int, hw_thread: int, paddr: int,
                        speculative: bool) -> None:
        while True:
            try:
                sbuf.push_store(sb, vaddr, data, hw_thread, paddr=paddr,
                                speculative=speculative)
                return
            except StallError:
                # Wait for the next drain tick to free one slot.
                credit = sb._drain_credit
                need = max(profile.sb_drain_cycles_per_entry - credit, 1)
                before = len(sb.entries)
                advance(need)
                if len(sb.entries) >= before:
                    raise StallError(
                        "store buffer wedged: full while its head cannot drain") from None

    def footprint_if_present(vaddr: int) -> None:
        # Transiently issued accesses to present pages fill their line even
        # when a permission check later faults; not-present pages have no
        # frame to fill from.
        pte = space.page_table.get(vaddr // PAGE_SIZE)
        if pte is not None and pte.present:
            cache.cached_lines.add((pte.frame * PAGE_SIZE + vaddr % PAGE_SIZE) // LINE_SIZE)

    def run_transient(start: int, stop: int, shadow: dict[str, int | None],
                      supp: Suppression | None, hw_thread: int) -> None:
        budget = transient_budget(profile, sb.occupancy(hw_thread),
                                  base=cfg.budget_base, divisor=cfg.budget_divisor)
        executed = 0
        for j in range(start, stop):
            if executed >= budget:
                note(f"{j:3d} transient budget exhausted")
                break
            op = program[j]
            executed += 1
            if op.kind == "load":
                t = translate(space, op.vaddr, Access.READ, priv)
                val: int | None = None
                if t.is_ok:
                    d = sbuf.match_load(sb, op.vaddr, t, sb.next_order(), op.hw_thread)
                    check_wtf(d, t)
                    if d.kind == "true":
                        val = d.data
                    else:
                        val = memory.get(t.paddr, 0)
                        cache.cached_lines.add(t.paddr // LINE_SIZE)
                else:
                    gate = (t.kind == "assist"
                            or (supp is not None and leak_permitted(profile, t.fault, supp)))
                    if gate:
                        d = sbuf.match_load(sb, op.vaddr, t, sb.next_order(), op.hw_thread)
                        check_wtf(d, t)
                        if d.kind == "wtf" and wtf_fires():
                            val = d.data
                    footprint_if_present(op.vaddr)
                shadow[op.reg] = val
                note(f"{j:3d} transient load {op.vaddr:#x} -> {val}")
            elif op.kind == "probe":
                val = shadow.get(op.reg)
                if val is not None:
                    footprint_if_present(op.base + val * PROBE_STRIDE)
                    note(f"{j:3d} transient probe slot {val}")
            # Stores are squashed before allocation; control/kernel/fence µOPs
            # have no modeled effect inside a window.

    def abort_txn() -> int:
        nonlocal regs, priv, txn, aborts
        assert txn is not None
        for pte, attr, old in reversed(txn.undo):
            setattr(pte, attr, old)
        if any(e.speculative for e in sb.entries):
            for e in sb.entries:
                if e.speculative:
                    sb._counts[e.hw_thread] -= 1
            sb.entries = type(sb.entries)(e for e in sb.entries if not e.speculative)
        regs = dict(txn.regs)
        priv = txn.priv
        end = txn.end
        txn = None
        aborts += 1
        return end

    i = 0
    n = len(program)
    while i < n:
        op = program[i]
        kind = op.kind
        if kind == "store":
            t = translate(space, op.vaddr, Access.WRITE, priv)
            hops = 0
            while t.kind == "assist":
                assist_logged(op.vaddr, t.assist)
                t = translate(space, op.vaddr, Access.WRITE, priv)
                hops += 1
                if hops > 2:
                    raise ContractViolation("assist loop did not converge")
            if t.kind == "fault":
                note(f"{i:3d} store fault {t.fault.value}")
                if txn is not None:
                    i = abort_txn() + 1
                    continue
                faults += 1
                terminated = True
                break
            push_with_stall(op.vaddr, op.value, op.hw_thread, t.paddr,
                            speculative=txn is not None)
            note(f"{i:3d} store {op.vaddr:#x} <- {op.value:#04x}")
        elif kind == "load":
            t = translate(space, op.vaddr, Access.READ, priv)
            if t.kind == "fault":
                if txn is None:
                    note(f"{i:3d} unsuppressed fault {t.fault.value}: crash")
                    faults += 1
                    terminated = True
                    break
                permitted = leak_permitted(profile, t.fault, Suppression.TSX)
                val: int | None = None
                if permitted:
                    d = sbuf.match_load(sb, op.vaddr, t, sb.next_order(), op.hw_thread)
                    check_wtf(d, t)
                    if d.kind == "wtf" and wtf_fires():
                        val = d.data
                note(f"{i:3d} faulting load {op.vaddr:#x} ({t.fault.value}, tsx) wtf={val}")
                shadow = dict(regs)
                shadow[op.reg] = val
                run_transient(i + 1, txn.end, shadow, Suppression.TSX, op.hw_thread)
                i = abort_txn() + 1
                continue
            if t.kind == "assist":
                d = sbuf.match_load(sb, op.vaddr, t, sb.next_order(), op.hw_thread)
                check_wtf(d, t)
                val = None
                if leak_permitted(profile, FaultCause.NONE, Suppression.NONE_REQUIRED):
                    if d.kind == "wtf" and wtf_fires():
                        val = d.data
                note(f"{i:3d} assist load {op.vaddr:#x} ({t.assist.value}) wtf={val}")
                shadow = dict(regs)
                shadow[op.reg] = val
                stop = txn.end if txn is not None else n
                run_transient(i + 1, stop, shadow, None, op.hw_thread)
                hops = 0
                while t.kind == "assist":
                    assist_logged(op.vaddr, t.assist)
                    t = translate(space, op.vaddr, Access.READ, priv)
                    hops += 1
                    if hops > 2:
                        raise ContractViolation("assist loop did not converge")
                if not t.is_ok:
                    raise ContractViolation("load still faults after assist redispatch")
            # Architectural completion.
            d = sbuf.match_load(sb, op.vaddr, t, sb.next_order(), op.hw_thread)
            check_wtf(d, t)
            if d.kind == "true":
                regs[op.reg] = d.data
            else:
                regs[op.reg] = memory.get(t.paddr, 0)
                cache.cached_lines.add(t.paddr // LINE_SIZE)
            note(f"{i:3d} load {op.vaddr:#x} -> {regs[op.reg]:#04x}")
        elif kind == "probe":
            val = regs.get(op.reg, 0)
            pvaddr = op.base + val * PROBE_STRIDE
            t = translate(space, pvaddr, Access.READ, priv)
            hops = 0
            while t.kind == "assist":
                assist_logged(pvaddr, t.assist)
                t = translate(space, pvaddr, Access.READ, priv)
                hops += 1
                if hops > 2:
                    raise ContractViolation("assist loop did not converge")
            if t.kind == "fault":
                note(f"{i:3d} probe fault {t.fault.value}")
                if txn is not None:
                    i = abort_txn() + 1
                    continue
                faults += 1
                terminated = True
                break
            cache.cached_lines.add(t.paddr // LINE_SIZE)
            note(f"{i:3d} probe slot {val}")
        elif kind == "tsx_begin":
            txn = _Txn(end=tsx_ends[i], regs=dict(regs), priv=priv)
            note(f"{i:3d} tsx_begin")
        elif kind == "tsx_end":
            for e in sb.entries:
                if e.speculative:
                    e.speculative = False
            txn = None
            note(f"{i:3d} tsx_end (commit)")
        elif kind == "branch_guard":
            if op.mispredicted:
                note(f"{i:3d} mispredicted branch: wrong path is transient")
                run_transient(i + 1, n, dict(regs), Suppression.BRANCH_MISPREDICT,
                              op.hw_thread)
                break
            note(f"{i:3d} branch predicted correctly")
        elif kind == "clear_accessed":
            pte = space.page_table.get(op.vaddr // PAGE_SIZE)
            if pte is None:
                raise ContractViolation(f"clear_accessed on unmapped page {op.vaddr:#x}")
            record_pte(pte, "accessed")
            pte.accessed = False
            note(f"{i:3d} clear accessed bit of {op.vaddr:#x}")
        elif kind == "enter_kernel":
            priv = Privilege.KERNEL
            note(f"{i:3d} enter kernel")
        elif kind == "exit_kernel":
            jitter = rng.randrange(cfg.return_jitter_cycles) if cfg.return_jitter_cycles else 0
            advance(profile.kernel_return_cycles + jitter)
            if cfg.kpti or countermeasure_flush:
                sbuf.flush_all(sb, cache, memory)
            priv = Privilege.USER
            note(f"{i:3d} exit kernel (+{profile.kernel_return_cycles + jitter} cycles)")
        elif kind == "fence":
            sbuf.flush_all(sb, cache, memory)
            note(f"{i:3d} fence: store buffer drained")
        else:
            raise ContractViolation(f"unknown µOP kind {kind!r}")
        i += 1

    sb_dump = sb.dump() if cfg.dump_sb else None
    sbuf.flush_all(sb, cache, memory)
    return ExecutionResult(architectural_memory=memory, cache=cache,
                           aborted_transactions=aborts, faults_raised=faults,
                           terminated_by_fault=terminated, trace=trace, sb_dump=sb_dump)


# ---------------------------------------------------------------------------
# Line-oriented program text format (one µOP per line) for golden-file tests
# and CLI trace tooling.
# ---------------------------------------------------------------------------


def format_program(program: list[MicroOp]) -> str:
    lines = []
    for op in program:
        thread = f" t{op.hw_thread}" if op.hw_thread else ""
        if op.kind == "store":
            lines.append(f"store {op.vaddr:#x} {op.value}{thread}")
        elif op.kind == "load":
            lines.append(f"load {op.vaddr:#x} {op.reg}{thread}")
        elif op.kind == "probe":
            lines.append(f"probe {op.base:#x} {op.reg}{thread}")
        elif op.kind == "branch_guard":
            lines.append(f"branch_guard {'mispredict' if op.mispredicted else 'taken'}")
        elif op.kind == "clear_accessed":
            lines.append(f"clear_accessed {op.vaddr:#x}")
        else:
            lines.append(op.kind)
    return "\n".join(lines) + "\n"


def parse_program(text: str) -> list[MicroOp]:
    program: list[MicroOp] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        kind, args = tokens[0], tokens[1:]
        thread = 0
        if args and args[-1].startswith("t") and args[-1][1:].isdigit():
            thread = int(args[-1][1:])
            args = args[:-1]
        try:
            if kind == "store":
                program.append(store(int(args[0], 0), int(args[1], 0), thread))
            elif kind == "load":
                program.append(load(int(args[0], 0), args[1], thread))
            elif kind == "probe":
                program.append(probe(int(args[0], 0), args[1], thread))
            elif kind == "branch_guard":
                program.append(branch_guard(args[0] == "mispredict"))
            elif kind == "clear_accessed":
                program.append(clear_accessed(int(args[0], 0)))
            elif kind in ("tsx_begin", "tsx_end", "enter_kernel", "exit_kernel", "fence"):
                program.append(MicroOp(kind))
            else:
                raise ValueError(f"unknown µOP {kind!r}")
        except (IndexError, ValueError) as exc:
            raise ContractViolation(f"program line {lineno}: {exc}") from None
    return program
