"""Victim-side program fragments and address-space layouts.

Three victims back the experiments: a kernel module that writes a sequence
of secrets to distinct kernel pages, the AES-NI key-expansion path that
stores the 176-byte schedule into a kernel context page, and randomized
kernel layouts exposing exactly one mapped entry page out of the candidate
slots.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .aes_recover import SCHEDULE_BYTES, expand_key
from .errors import ConfigError
from .memory_system import AddressSpace, KERNEL_VPN_BASE, PAGE_SIZE
from .pipeline import MicroOp, enter_kernel, exit_kernel, store

# Fixed kernel-range page plan shared by the scenarios.
KERNEL_WRITER_BASE_VPN = KERNEL_VPN_BASE + 0x10
AES_CONTEXT_VPN = KERNEL_VPN_BASE + 0x80
KASLR_SLOT_BASE_VPN = KERNEL_VPN_BASE + 0x100

KASLR_SLOT_COUNT = 490  # candidate kernel locations, about 9 bits of entropy


@dataclass(frozen=True)
class KernelWriterConfig:
    offsets: tuple[int, ...]
    secret_bytes: tuple[int, ...]

    def __post_init__(self):
        if len(self.offsets) != len(self.secret_bytes):
            raise ConfigError("offsets and secret_bytes must pair up")
        if len(set(self.offsets)) != len(self.offsets):
            raise ConfigError("kernel writer offsets must be distinct")
        for off in self.offsets:
            if not 0 <= off < PAGE_SIZE:
                raise ConfigError(f"page offset {off} out of range")

    @property
    def num_stores(self) -> int:
        return len(self.offsets)


def map_kernel_writer_pages(space: AddressSpace, cfg: KernelWriterConfig,
                            base_vpn: int = KERNEL_WRITER_BASE_VPN) -> None:
    for i in range(cfg.num_stores):
        space.map_page(base_vpn + i, user_accessible=False, accessed=True, dirty=True)


def kernel_writer_program(cfg: KernelWriterConfig,
                          base_vpn: int = KERNEL_WRITER_BASE_VPN,
                          hw_thread: int = 0) -> list[MicroOp]:
    """EnterKernel, one store per secret (each to its own kernel page), ExitKernel."""
    ops = [enter_kernel()]
    for i, (offset, secret) in enumerate(zip(cfg.offsets, cfg.secret_bytes)):
        ops.append(store((base_vpn + i) * PAGE_SIZE + offset, secret, hw_thread))
    ops.append(exit_kernel())
    return ops


@dataclass(frozen=True)
class AesContext:
    master_key: bytes
    context_page_offset: int = 0x110

    def __post_init__(self):
        if len(self.master_key) != 16:
            raise ConfigError("AES-128 master key must be 16 bytes")
        if self.context_page_offset % 16 != 0:
            raise ConfigError("context offset must be 16-byte aligned")
        if self.context_page_offset + SCHEDULE_BYTES > PAGE_SIZE:
            raise ConfigError("expanded key must fit within one page")

    @property
    def expanded(self) -> bytes:
        return expand_key(self.master_key).data


def map_aes_context_page(space: AddressSpace, vpn: int = AES_CONTEXT_VPN) -> None:
    space.map_page(vpn, user_accessible=False, accessed=True, dirty=True)


def aes_expansion_program(ctx: AesContext, vpn: int = AES_CONTEXT_VPN,
                          hw_thread: int = 0) -> list[MicroOp]:
    """Kernel fragment storing the 11 round keys byte-by-byte.

    Mirrors the per-round subkey writeback: consecutive page offsets starting
    at the context offset, 176 bytes in total.
    """
    base = vpn * PAGE_SIZE + ctx.context_page_offset
    ops = [enter_kernel()]
    ops.extend(store(base + i, byte, hw_thread) for i, byte in enumerate(ctx.expanded))
    ops.append(exit_kernel())
    return ops


@dataclass(frozen=True)
class KaslrLayout:
    candidate_vpns: tuple[int, ...]
    mapped_slot_index: int
    entry_vpn: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "entry_vpn", self.candidate_vpns[self.mapped_slot_index])

    @property
    def slot_count(self) -> int:
        return len(self.candidate_vpns)


def random_kaslr_layout(seed: int, slot_count: int = KASLR_SLOT_COUNT,
                        base_vpn: int = KASLR_SLOT_BASE_VPN) -> KaslrLayout:
    """Pick the one mapped slot uniformly from a seeded generator."""
    rng = random.Random(seed)
    mapped = rng.randrange(slot_count)
    return KaslrLayout(candidate_vpns=tuple(base_vpn + i for i in range(slot_count)),
                       mapped_slot_index=mapped)


def map_kaslr_layout(space: AddressSpace, layout: KaslrLayout) -> None:
    """Only the entry page exists; every other candidate slot is not present."""
    space.map_page(layout.entry_vpn, user_accessible=False, is_code=True,
                   accessed=True, dirty=True)
