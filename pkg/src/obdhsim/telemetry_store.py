"""Crash-safe append-only telemetry persistence.

On-disk record framing (big-endian, bit-exact):

    +-------+--------+-------+-----------+--------+---------+--------+
    | MAGIC | dev_id | ftype | timestamp |  len   | payload | CRC-16 |
    | 0xA5  |   1B   |  1B   |  8B (ms)  |   2B   |  bytes  |   2B   |
    +-------+--------+-------+-----------+--------+---------+--------+

The CRC (same CRC-16/CCITT-FALSE as the wire codec) covers everything
from MAGIC through the payload.  A file is a sequence of such records,
possibly followed by one truncated tail left by a crash; recovery keeps
every fully written record, reports and discards the tail, and refuses to
resync past corruption in the middle of a file (a phantom record is worse
than a short read at desk scale).

Every append is flushed before the sequence number is returned, so a
record acknowledged to the caller survives a process kill.  Appends are
internally serialized; sequence numbers are gap-free across concurrent
callers.  When the active file would exceed max_bytes it is rotated
logrotate-style (path -> path.1 -> path.2 ...) and queries scan the
rotated files oldest-first so append order is preserved.
"""

from __future__ import annotations

import io
import os
import re
import struct
import threading
from dataclasses import dataclass
from pathlib import Path

from .frame_codec import FrameType, crc16

MAGIC = 0xA5
_HEADER = struct.Struct(">BBBQH")  # magic, dev_id, ftype, timestamp_ms, payload len
_CRC_LEN = 2
MIN_RECORD = _HEADER.size + _CRC_LEN  # 15
DEFAULT_MAX_BYTES = 16 * 1024 * 1024


class StoreError(Exception):
    pass


class StoreClosedError(StoreError):
    pass


class QueryError(ValueError):
    pass


@dataclass(frozen=True)
class TelemetryRecord:
    dev_id: int
    ftype: FrameType
    timestamp_ms: int
    payload: bytes

    def encode(self) -> bytes:
        if len(self.payload) > 255:
            raise StoreError(f"payload too long: {len(self.payload)}")
        head = _HEADER.pack(MAGIC, self.dev_id, self.ftype, self.timestamp_ms, len(self.payload))
        body = head + self.payload
        return body + crc16(body).to_bytes(2, "big")


@dataclass
class ScanResult:
    records: list[TelemetryRecord]
    valid_end: int            # byte offset just past the last valid record
    truncated_tail_bytes: int  # partial record at EOF (crash artifact)
    unrecovered_bytes: int     # invalid bytes not at a plausible tail


@dataclass
class RecoveryReport:
    records_recovered: int
    truncated_tail_bytes: int
    unrecovered_bytes: int


def scan_file(path: str | Path) -> ScanResult:
    """Read-only scan of one store file; never modifies it."""
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError:
        return ScanResult([], 0, 0, 0)
    records: list[TelemetryRecord] = []
    offset = 0
    size = len(data)
    while offset < size:
        remaining = size - offset
        if remaining < _HEADER.size:
            return ScanResult(records, offset, remaining, 0)
        magic, dev_id, ftype, ts, plen = _HEADER.unpack_from(data, offset)
        if magic != MAGIC:
            return ScanResult(records, offset, 0, remaining)
        total = _HEADER.size + plen + _CRC_LEN
        if remaining < total:
            return ScanResult(records, offset, remaining, 0)
        body = data[offset:offset + _HEADER.size + plen]
        crc_rx = int.from_bytes(data[offset + total - 2:offset + total], "big")
        if crc16(body) != crc_rx:
            return ScanResult(records, offset, 0, remaining)
        try:
            ft = FrameType(ftype)
        except ValueError:
            return ScanResult(records, offset, 0, remaining)
        records.append(TelemetryRecord(dev_id, ft, ts, bytes(body[_HEADER.size:])))
        offset += total
    return ScanResult(records, offset, 0, 0)


def _rotated_paths(path: Path) -> list[Path]:
    """Rotated siblings of path, oldest first (path.K ... path.1)."""
    pattern = re.compile(re.escape(path.name) + r"\.(\d+)$")
    found = []
    for sibling in path.parent.glob(path.name + ".*"):
        m = pattern.match(sibling.name)
        if m:
            found.append((int(m.group(1)), sibling))
    return [p for _, p in sorted(found, reverse=True)]


class TelemetryStore:
    """Append-only store over one active file plus rotated siblings."""

    def __init__(self, path: str | Path, max_bytes: int = DEFAULT_MAX_BYTES,
                 fsync: bool = False):
        self._path = Path(path)
        self._max_bytes = max_bytes
        self._fsync = fsync
        self._lock = threading.Lock()
        self._file: io.BufferedWriter | None = None
        self._seq = 0
        self._active_size = 0

    # -- lifecycle --------------------------------------------------------

    @classmethod
    def open(cls, path: str | Path, max_bytes: int = DEFAULT_MAX_BYTES,
             fsync: bool = False) -> "TelemetryStore":
        store, _ = cls.recover(path, max_bytes=max_bytes, fsync=fsync)
        return store

    @classmethod
    def recover(cls, path: str | Path, max_bytes: int = DEFAULT_MAX_BYTES,
                fsync: bool = False) -> tuple["TelemetryStore", RecoveryReport]:
        """Open a store, salvaging every fully written record.

        A truncated tail is cut off so appends continue after the last
        valid record; mid-file corruption is also truncated away but
        reported separately as unrecovered bytes.
        """
        store = cls(path, max_bytes=max_bytes, fsync=fsync)
        path = store._path
        path.parent.mkdir(parents=True, exist_ok=True)
        rotated_records = 0
        for rotated in _rotated_paths(path):
            rotated_records += len(scan_file(rotated).records)
        scan = scan_file(path)
        store._file = open(path, "ab")
        if store._file.tell() != scan.valid_end:
            # crash left a partial or corrupt tail: drop it
            store._file.truncate(scan.valid_end)
            store._file.seek(scan.valid_end)
        store._active_size = scan.valid_end
        store._seq = rotated_records + len(scan.records)
        report = RecoveryReport(
            records_recovered=rotated_records + len(scan.records),
            truncated_tail_bytes=scan.truncated_tail_bytes,
            unrecovered_bytes=scan.unrecovered_bytes,
        )
        return store, report

    def close(self) -> None:
        with self._lock:
            if self._file is not None:
                self._file.flush()
                self._file.close()
                self._file = None

    @property
    def path(self) -> Path:
        return self._path

    @property
    def record_count(self) -> int:
        with self._lock:
            return self._seq

    @property
    def size_bytes(self) -> int:
        with self._lock:
            return self._active_size

    # -- operations ---------------------------------------------------------

    def append(self, record: TelemetryRecord) -> int:
        """Durably append a record; returns its global sequence number."""
        encoded = record.encode()
        with self._lock:
            if self._file is None:
                raise StoreClosedError("store closed")
            if self._active_size and self._active_size + len(encoded) > self._max_bytes:
                self._rotate()
            self._file.write(encoded)
            self._file.flush()
            if self._fsync:
                os.fsync(self._file.fileno())
            self._active_size += len(encoded)
            seq = self._seq
            self._seq += 1
            return seq

    def _rotate(self) -> None:
        self._file.flush()
        self._file.close()
        older = _rotated_paths(self._path)  # oldest first
        for rotated in older:
            n = int(rotated.name.rsplit(".", 1)[1])
            rotated.rename(self._path.with_name(f"{self._path.name}.{n + 1}"))
        self._path.rename(self._path.with_name(self._path.name + ".1"))
        self._file = open(self._path, "ab")
        self._active_size = 0

    def query(self, dev_id: int | None = None, t0: int = 0,
              t1: int = 2**63 - 1) -> list[TelemetryRecord]:
        """Records with timestamp in [t0, t1] (and dev_id, if given), in append order."""
        if t0 > t1:
            raise QueryError(f"t0 > t1 ({t0} > {t1})")
        with self._lock:
            if self._file is not None:
                self._file.flush()
            files = _rotated_paths(self._path) + [self._path]
        out: list[TelemetryRecord] = []
        for f in files:
            for rec in scan_file(f).records:
                if t0 <= rec.timestamp_ms <= t1 and (dev_id is None or rec.dev_id == dev_id):
                    out.append(rec)
        return out
