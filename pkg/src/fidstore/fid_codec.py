"""64-bit field identifiers: a partition prefix in the high bits, a
monotonically allocated offset in the low bits.

A FID is a plain int. Its value is a pure function of (partition,
allocation order) and never of the stored bytes, so observing FIDs reveals
nothing about the secrets they name.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .errors import OutOfRange

FID_BITS = 64

_FID_STRUCT = struct.Struct("<Q")


@dataclass(frozen=True)
class FidConfig:
    """Bit layout of a FID. Immutable once a store has been created with it:
    changing prefix_bits invalidates every FID minted under the old layout."""

    prefix_bits: int = 16

    def __post_init__(self) -> None:
        if not 1 <= self.prefix_bits <= 32:
            raise ValueError(f"prefix_bits must be in [1, 32], got {self.prefix_bits}")

    @property
    def offset_bits(self) -> int:
        return FID_BITS - self.prefix_bits

    @property
    def max_partitions(self) -> int:
        return 1 << self.prefix_bits

    @property
    def max_offset(self) -> int:
        return 1 << self.offset_bits

    @property
    def offset_mask(self) -> int:
        return (1 << self.offset_bits) - 1


def encode_fid(config: FidConfig, partition: int, offset: int) -> int:
    """Compose a FID from a partition number and an in-partition offset."""
    if not 0 <= partition < config.max_partitions:
        raise OutOfRange(
            f"partition {partition} does not fit in {config.prefix_bits} bits"
        )
    if not 0 <= offset < config.max_offset:
        raise OutOfRange(f"offset {offset} does not fit in {config.offset_bits} bits")
    return (partition << config.offset_bits) | offset


def decode_fid(config: FidConfig, fid: int) -> tuple[int, int]:
    """Inverse of encode_fid; any 64-bit value decodes."""
    return fid >> config.offset_bits, fid & config.offset_mask


def fid_to_bytes(fid: int) -> bytes:
    """FIDs travel as 8-byte little-endian unsigned values everywhere."""
    return _FID_STRUCT.pack(fid)


def fid_from_bytes(data: bytes) -> int:
    return _FID_STRUCT.unpack(data)[0]
