"""Transactional, versioned key-value store backing the core services.

Single mutation path: ``commit`` applies a transaction atomically iff every
read key still carries the version the caller observed (optimistic
concurrency).  Every commit bumps a global watermark; per-key history is
retained so snapshot reads and post-hoc audits see a consistent prefix of
commits.  An optional append-only journal makes the committed state
recoverable across restarts.
"""

from __future__ import annotations

import json
import os
import random
import struct
import threading
import time
from dataclasses import dataclass, field
from typing import Callable

_TOMBSTONE = None


class TxnConflict(Exception):
    """A read key's version changed since it was observed; retry."""

    def __init__(self, key: str):
        super().__init__(f"conflict on {key}")
        self.key = key


@dataclass(frozen=True)
class VersionedCell:
    key: str
    value: bytes
    version: int


@dataclass
class Transaction:
    """Read-set (key, observed version) plus buffered writes.

    Observed version 0 means "key absent"; a write value of None deletes.
    """

    reads: list = field(default_factory=list)
    writes: dict = field(default_factory=dict)

    def read(self, key: str, version: int) -> "Transaction":
        self.reads.append((key, version))
        return self

    def put(self, key: str, value: bytes) -> "Transaction":
        self.writes[key] = value
        return self

    def delete(self, key: str) -> "Transaction":
        self.writes[key] = _TOMBSTONE
        return self


class Store:
    """In-memory MVCC store with an optional append-only journal."""

    def __init__(self, journal_path: str | None = None):
        self._lock = threading.RLock()
        self._version = 0
        # key -> list of (version, value-or-None) in version order
        self._cells: dict[str, list[tuple[int, bytes | None]]] = {}
        self._journal_path = journal_path
        self._journal = None
        if journal_path:
            self._recover(journal_path)
            self._journal = open(journal_path, "ab")

    # -- reads --------------------------------------------------------------

    def snapshot(self) -> int:
        """Current global watermark; reads at it see a consistent prefix."""
        with self._lock:
            return self._version

    def get(self, key: str, at: int | None = None) -> VersionedCell | None:
        with self._lock:
            at = self._version if at is None else at
            history = self._cells.get(key, ())
            for version, value in reversed(history):
                if version <= at:
                    if value is _TOMBSTONE:
                        return None
                    return VersionedCell(key, value, version)
            return None

    def version_of(self, key: str, at: int | None = None) -> int:
        """Version of the live cell at the watermark, 0 if absent."""
        cell = self.get(key, at)
        return cell.version if cell else 0

    def scan(self, prefix: str, at: int | None = None) -> list[VersionedCell]:
        """All live cells under ``prefix`` at one consistent watermark."""
        with self._lock:
            at = self._version if at is None else at
            out = []
            for key in sorted(self._cells):
                if key.startswith(prefix):
                    cell = self.get(key, at)
                    if cell is not None:
                        out.append(cell)
            return out

    def history(self, key: str) -> list[tuple[int, bytes | None]]:
        """Full commit history of a key (for audits)."""
        with self._lock:
            return list(self._cells.get(key, ()))

    # -- commit -------------------------------------------------------------

    def commit(self, txn: Transaction) -> dict[str, int]:
        """Apply all writes atomically; raise TxnConflict on any stale read."""
        with self._lock:
            for key, observed in txn.reads:
                if self.version_of(key) != observed:
                    raise TxnConflict(key)
            self._version += 1
            version = self._version
            records = []
            for key, value in txn.writes.items():
                self._cells.setdefault(key, []).append((version, value))
                records.append((key, value))
            if self._journal is not None and records:
                self._append_journal(version, records)
            return {key: version for key, _ in records}

    # -- journal ------------------------------------------------------------

    def _append_journal(self, version: int, records: list) -> None:
        chunks = []
        for key, value in records:
            # "n" lets recovery tell a torn commit from a complete one.
            body: dict = {"version": version, "key": key, "n": len(records)}
            if value is _TOMBSTONE:
                body["tombstone"] = True
            else:
                body["value"] = value.decode("utf-8")
            data = json.dumps(body, sort_keys=True, separators=(",", ":")).encode()
            chunks.append(struct.pack(">I", len(data)) + data)
        # One write per commit so a crash cannot tear a commit apart.
        self._journal.write(b"".join(chunks))
        self._journal.flush()
        os.fsync(self._journal.fileno())

    def _recover(self, path: str) -> None:
        if not os.path.exists(path):
            return
        with open(path, "rb") as fh:
            raw = fh.read()
        pos = 0
        applied: list[dict] = []
        while pos + 4 <= len(raw):
            (length,) = struct.unpack(">I", raw[pos : pos + 4])
            if pos + 4 + length > len(raw):
                break  # torn tail from a crash mid-append
            try:
                body = json.loads(raw[pos + 4 : pos + 4 + length])
            except ValueError:
                break
            applied.append(body)
            pos += 4 + length
        # Drop the trailing commit iff its record group is incomplete.
        if applied:
            tail_version = applied[-1]["version"]
            group = [r for r in applied if r["version"] == tail_version]
            if len(group) < group[0].get("n", 1):
                applied = [r for r in applied if r["version"] != tail_version]
        for rec in applied:
            version, key = rec["version"], rec["key"]
            value = _TOMBSTONE if rec.get("tombstone") else rec["value"].encode()
            self._cells.setdefault(key, []).append((version, value))
            self._version = max(self._version, version)
        if pos < len(raw):
            with open(path, "r+b") as fh:
                fh.truncate(pos)

    def close(self) -> None:
        if self._journal is not None:
            self._journal.close()
            self._journal = None


def retry_txn(
    build: Callable[[], Transaction],
    store: Store,
    retries: int = 10,
    base_delay: float = 0.001,
    rng: random.Random | None = None,
) -> dict[str, int]:
    """Run a transaction builder until it commits, with jittered backoff.

    ``build`` must re-read its inputs each attempt so the read-set is fresh.
    """
    rng = rng or random
    last: TxnConflict | None = None
    for attempt in range(retries + 1):
        try:
            return store.commit(build())
        except TxnConflict as e:
            last = e
            if attempt < retries:
                time.sleep(base_delay * (2**min(attempt, 6)) * rng.random())
    assert last is not None
    raise last
