"""Durability primitives with an explicit synced/unsynced boundary.

The simulator's crash model is synced-only: bytes survive a crash iff a
sync completed for them, except that a crash injected during an in-flight
sync may persist an arbitrary prefix of the bytes being synced (a torn
write). Both primitives work purely in memory or mirrored to real files.
"""

from __future__ import annotations

import os
import tempfile


class DurableBuffer:
    """Append-only byte log split into durable and pending regions."""

    def __init__(self, path: str | None = None):
        self.path = path
        self._durable = bytearray()
        self._pending = bytearray()
        self._fail_next_sync = False
        if path is not None and os.path.exists(path):
            with open(path, "rb") as fh:
                self._durable = bytearray(fh.read())

    @property
    def durable(self) -> bytes:
        return bytes(self._durable)

    @property
    def durable_len(self) -> int:
        return len(self._durable)

    @property
    def pending_len(self) -> int:
        return len(self._pending)

    def append(self, data: bytes) -> None:
        self._pending += data

    def truncate_pending(self, keep: int) -> None:
        """Retract trailing unsynced bytes down to `keep` pending bytes."""
        del self._pending[keep:]

    def inject_sync_failure(self) -> None:
        self._fail_next_sync = True

    def sync(self) -> int:
        """Move all pending bytes into the durable region; returns new length."""
        if self._fail_next_sync:
            self._fail_next_sync = False
            raise OSError("injected sync failure")
        if self._pending:
            self._durable += self._pending
            if self.path is not None:
                with open(self.path, "ab") as fh:
                    fh.write(self._pending)
                    fh.flush()
                    os.fsync(fh.fileno())
            self._pending.clear()
        return len(self._durable)

    def crash(self, torn_bytes: int = 0) -> None:
        """Discard unsynced state, optionally keeping a torn prefix of it."""
        if torn_bytes > 0:
            kept = self._pending[:torn_bytes]
            self._durable += kept
            if self.path is not None:
                with open(self.path, "ab") as fh:
                    fh.write(kept)
        self._pending.clear()

    def replace(self, data: bytes) -> None:
        """Atomically swap the entire durable content (log truncation)."""
        self._durable = bytearray(data)
        self._pending.clear()
        if self.path is not None:
            _atomic_write(self.path, data)


class SnapshotStore:
    """Named blobs with atomic whole-object replacement.

    A put is durable when it returns (write-to-temp + rename semantics), so
    snapshots written before a crash always read back intact.
    """

    def __init__(self, dirpath: str | None = None):
        self.dirpath = dirpath
        self._blobs: dict[str, bytes] = {}
        if dirpath is not None:
            os.makedirs(dirpath, exist_ok=True)
            for name in os.listdir(dirpath):
                with open(os.path.join(dirpath, name), "rb") as fh:
                    self._blobs[name] = fh.read()

    def put_atomic(self, name: str, data: bytes) -> None:
        self._blobs[name] = bytes(data)
        if self.dirpath is not None:
            _atomic_write(os.path.join(self.dirpath, name), data)

    def get(self, name: str) -> bytes | None:
        return self._blobs.get(name)

    def delete(self, name: str) -> None:
        self._blobs.pop(name, None)
        if self.dirpath is not None:
            try:
                os.remove(os.path.join(self.dirpath, name))
            except FileNotFoundError:
                pass

    def names(self) -> list[str]:
        return sorted(self._blobs)

    def crash(self) -> None:
        """Atomic writes all survive; nothing to discard."""


def _atomic_write(path: str, data: bytes) -> None:
    dirname = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=dirname, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.remove(tmp)
        except FileNotFoundError:
            pass
        raise
