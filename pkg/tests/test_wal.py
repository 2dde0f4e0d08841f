import random
import struct

import pytest

from fidstore.durability import DurableBuffer, SnapshotStore
from fidstore.errors import CorruptLog, IoFailure, LogClosed
from fidstore.fid_codec import FidConfig
from fidstore.mapping_store import MappingStore, PartitionKind, ValueLayout
from fidstore.wal import (
    KIND_PUT,
    Wal,
    WalRecord,
    checkpoint_truncate,
    frame_record,
    read_frames,
    recover_store,
)

from .oracles import replay_store_records


def _store_with_wal(size_bound=64 * 1024 * 1024):
    buf = DurableBuffer()
    wal = Wal(buf, size_bound_bytes=size_bound)
    store = MappingStore(FidConfig(16), journal=wal)
    return store, wal, buf


def _live_mapping(store: MappingStore) -> dict[int, bytes]:
    out = {}
    for pid in store.partition_ids():
        for fid in store.live_fids(pid):
            out[fid] = store.get(fid)
    return out


def test_lsns_monotonic_from_one():
    _, wal, _ = _store_with_wal()
    lsns = [wal.log_put(i, b"v") for i in range(3)]
    assert lsns == [1, 2, 3]


def test_flush_empty_buffer_is_noop():
    _, wal, buf = _store_with_wal()
    wal.log_put(1, b"a")
    first = wal.flush()
    size = buf.durable_len
    assert wal.flush() == first
    assert buf.durable_len == size


def test_append_after_close():
    _, wal, _ = _store_with_wal()
    wal.close()
    with pytest.raises(LogClosed):
        wal.log_put(1, b"x")


def test_flush_io_failure_surfaces():
    _, wal, buf = _store_with_wal()
    wal.log_put(1, b"x")
    buf.inject_sync_failure()
    with pytest.raises(IoFailure):
        wal.flush()


def test_empty_log_recovers_empty():
    snaps = SnapshotStore()
    result = recover_store(snaps, DurableBuffer(), FidConfig(16))
    assert result.replayed_count == 0
    assert result.store.partition_ids() == []


def test_replay_k_puts():
    store, wal, buf = _store_with_wal()
    pid = store.create_partition(PartitionKind.PERMANENT, ValueLayout.VARLEN)
    for i in range(25):
        store.put(pid, bytes([i]) * 10)
    wal.flush()
    result = recover_store(SnapshotStore(), buf, FidConfig(16))
    assert result.store.stats().live_count == 25
    assert _live_mapping(result.store) == _live_mapping(store)


def test_unflushed_records_do_not_survive():
    store, wal, buf = _store_with_wal()
    pid = store.create_partition(PartitionKind.PERMANENT, ValueLayout.VARLEN)
    store.put(pid, b"durable")
    wal.flush()
    store.put(pid, b"volatile")
    buf.crash()
    result = recover_store(SnapshotStore(), buf, FidConfig(16))
    values = set(_live_mapping(result.store).values())
    assert b"durable" in values
    assert b"volatile" not in values


def test_append_continues_after_recovery():
    store, wal, buf = _store_with_wal()
    pid = store.create_partition(PartitionKind.PERMANENT, ValueLayout.VARLEN)
    store.put(pid, b"one")
    wal.flush()
    last = wal.durable_lsn
    buf.crash()
    result = recover_store(SnapshotStore(), buf, FidConfig(16))
    assert result.wal.next_lsn == last + 1
    nxt = result.wal.log_put(123, b"x")
    assert nxt == last + 1


def test_torn_tail_discarded_corrupt_middle_raises():
    bodies = [WalRecord(i + 1, KIND_PUT, fid=i, value=b"v").encode_body()
              for i in range(3)]
    frames = [frame_record(b) for b in bodies]
    # torn tail: final frame cut short
    data = b"".join(frames[:2]) + frames[2][:-1]
    assert len(read_frames(data)) == 2
    # mid-log corruption with intact frames after it: tampering
    corrupted = bytearray(b"".join(frames))
    corrupted[12] ^= 0xFF  # inside the first record body
    with pytest.raises(CorruptLog):
        read_frames(bytes(corrupted))


def test_recovery_is_idempotent():
    store, wal, buf = _store_with_wal()
    pid = store.create_partition(PartitionKind.PERMANENT, ValueLayout.VARLEN)
    fids = [store.put(pid, bytes([i]) * 5) for i in range(10)]
    store.delete(fids[3])
    wal.flush()
    r1 = recover_store(SnapshotStore(), buf, FidConfig(16))
    r2 = recover_store(SnapshotStore(), buf, FidConfig(16))
    assert _live_mapping(r1.store) == _live_mapping(r2.store)
    assert r1.replayed_count == r2.replayed_count


def test_recovered_partition_ids_match():
    store, wal, buf = _store_with_wal()
    ids = [store.create_partition(PartitionKind.PERMANENT, ValueLayout.VARLEN)
           for _ in range(5)]
    wal.flush()
    result = recover_store(SnapshotStore(), buf, FidConfig(16))
    assert result.store.partition_ids() == ids


def test_checkpoint_truncate_equivalence():
    store, wal, buf = _store_with_wal()
    snaps = SnapshotStore()
    pid = store.create_partition(PartitionKind.PERMANENT, ValueLayout.VARLEN)
    rng = random.Random(3)
    live = []
    for _ in range(300):
        if live and rng.random() < 0.3:
            store.delete(live.pop(rng.randrange(len(live))))
        else:
            live.append(store.put(pid, rng.randbytes(rng.randrange(1, 64))))
    before = _live_mapping(store)
    checkpoint_truncate(store, wal, snaps, None)
    assert buf.durable_len < 100  # just the checkpoint record remains
    result = recover_store(snaps, buf, FidConfig(16))
    assert _live_mapping(result.store) == before
    # no new records: truncation is a no-op
    size = buf.durable_len
    checkpoint_truncate(store, wal, snaps, None)
    assert buf.durable_len == size


def test_size_bound_triggers_truncation():
    buf = DurableBuffer()
    wal = Wal(buf, size_bound_bytes=1 * 1024 * 1024)
    store = MappingStore(FidConfig(16), journal=wal)
    snaps = SnapshotStore()
    wal.on_checkpoint = lambda: checkpoint_truncate(store, wal, snaps, None)
    pid = store.create_partition(PartitionKind.PERMANENT, ValueLayout.VARLEN)
    checkpoints_before = len(snaps.names())
    payload = bytes(1000)
    for _ in range(2200):  # > 2 MiB of records against a 1 MiB bound
        store.put(pid, payload)
    assert len(snaps.names()) > checkpoints_before
    record_ceiling = 1024 * 1024 + 1100
    assert wal.bytes_since_checkpoint <= record_ceiling
    assert buf.durable_len + buf.pending_len <= record_ceiling
    # recovery from image + truncated log equals the live store
    wal.flush()
    assert _live_mapping(recover_store(snaps, buf, FidConfig(16)).store) == \
        _live_mapping(store)


def test_crash_at_random_byte_matches_prefix_oracle():
    """Randomized workload, crash at a random byte inside the unsynced
    tail; the recovered state must equal the oracle's replay of exactly
    the surviving complete records."""
    failures = 0
    for seed in range(60):
        rng = random.Random(seed)
        store, wal, buf = _store_with_wal()
        pid = store.create_partition(PartitionKind.PERMANENT, ValueLayout.VARLEN)
        live = []
        for _ in range(rng.randrange(50, 250)):
            roll = rng.random()
            if roll < 0.6 or not live:
                live.append(store.put(pid, rng.randbytes(rng.randrange(1, 48))))
            elif roll < 0.8:
                store.delete(live.pop(rng.randrange(len(live))))
            if rng.random() < 0.1:
                wal.flush()
        torn = rng.randrange(buf.pending_len + 1)
        buf.crash(torn_bytes=torn)

        expected = replay_store_records(buf.durable)
        result = recover_store(SnapshotStore(), buf, FidConfig(16))
        got = _live_mapping(result.store)
        if got != expected:
            failures += 1
    assert failures == 0


def test_recovery_replay_time_is_linear():
    import time

    def replay_time(n):
        store, wal, buf = _store_with_wal()
        pid = store.create_partition(PartitionKind.PERMANENT, ValueLayout.FIXED, 8)
        for i in range(n):
            store.put(pid, struct.pack("<q", i))
        wal.flush()
        t0 = time.perf_counter()
        recover_store(SnapshotStore(), buf, FidConfig(16))
        return time.perf_counter() - t0

    replay_time(2000)  # warm-up
    t1 = max(replay_time(5000), 1e-4)
    t4 = replay_time(20000)
    assert t4 / t1 < 16, f"replay scaled superlinearly: {t4 / t1:.1f}x for 4x records"
