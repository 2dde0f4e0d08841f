"""Crypto-free field-identifier mapping store with a dual-zone
confidential-database simulator around it."""

from .errors import FidStoreError
from .fid_codec import FidConfig, decode_fid, encode_fid
from .mapping_store import MappingStore, PartitionKind, StoreStats, ValueLayout

__all__ = [
    "FidStoreError",
    "FidConfig",
    "encode_fid",
    "decode_fid",
    "MappingStore",
    "PartitionKind",
    "ValueLayout",
    "StoreStats",
]
