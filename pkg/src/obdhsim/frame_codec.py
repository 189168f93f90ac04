"""Binary command/telemetry frame format and streaming decoder.

Frame layout (8 + payload bytes, big-endian multi-byte fields):

    +------+------+--------+-------+-----+-----+---------+--------+
    | SYNC | SYNC | dev_id | ftype | seq | len | payload | CRC-16 |
    | 0xEB | 0x90 |   1B   |  1B   | 1B  | 1B  | 0-255B  |   2B   |
    +------+------+--------+-------+-----+-----+---------+--------+

- CRC-16/CCITT-FALSE (poly 0x1021, init 0xFFFF, no reflection, no final
  XOR) computed over dev_id..payload, transmitted big-endian.
- dev_id 0 is reserved for OBDH-local frames; 1-7 address roster devices.
- The first payload byte of a CMD frame is the command code, so the codec
  itself stays subsystem-agnostic.

The deframer survives garbage, truncation and mid-stream corruption: it
hunts for the sync word, validates the CRC of every candidate frame, and
reports skipped bytes (Resync) and failed frames (CrcError) as events
rather than raising.  After a CRC failure hunting resumes at the byte
following the failed sync word, so a frame boundary hidden inside a
corrupted region is still found.  Event sequences are independent of how
the input is chunked, and the internal buffer never exceeds 263 bytes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

SYNC = b"\xeb\x90"
HEADER_LEN = 4          # dev_id + ftype + seq + len
OVERHEAD = 8            # sync(2) + header(4) + crc(2)
MAX_PAYLOAD = 255
MAX_FRAME = OVERHEAD + MAX_PAYLOAD  # 263


class FrameType(IntEnum):
    CMD = 0x01
    TLM = 0x02
    ACK = 0x03
    NAK = 0x04


_VALID_TYPES = frozenset(t.value for t in FrameType)


class FrameError(ValueError):
    """Frame violates the wire-format constraints (encode side)."""


@dataclass(frozen=True)
class Frame:
    dev_id: int
    ftype: FrameType
    seq: int
    payload: bytes = b""


def _build_crc_table() -> tuple[int, ...]:
    table = []
    for byte in range(256):
        crc = byte << 8
        for _ in range(8):
            crc = ((crc << 1) ^ 0x1021) if (crc & 0x8000) else (crc << 1)
        table.append(crc & 0xFFFF)
    return tuple(table)


_CRC_TABLE = _build_crc_table()


def crc16(data: bytes) -> int:
    """CRC-16/CCITT-FALSE of data (table-driven)."""
    crc = 0xFFFF
    for byte in data:
        crc = ((crc << 8) & 0xFFFF) ^ _CRC_TABLE[(crc >> 8) ^ byte]
    return crc


def encode_frame(frame: Frame) -> bytes:
    """Encode a frame to its on-wire byte string."""
    if len(frame.payload) > MAX_PAYLOAD:
        raise FrameError(f"payload too long: {len(frame.payload)} > {MAX_PAYLOAD}")
    if not 0 <= frame.dev_id <= 255:
        raise FrameError(f"dev_id out of range: {frame.dev_id}")
    if not 0 <= frame.seq <= 255:
        raise FrameError(f"seq out of range: {frame.seq}")
    if frame.ftype not in _VALID_TYPES:
        raise FrameError(f"invalid frame type: {frame.ftype!r}")
    body = bytes([frame.dev_id, frame.ftype, frame.seq, len(frame.payload)]) + frame.payload
    return SYNC + body + crc16(body).to_bytes(2, "big")


# --- deframer events ---------------------------------------------------

@dataclass(frozen=True)
class FrameOk:
    frame: Frame


@dataclass(frozen=True)
class CrcError:
    """A complete candidate frame failed validation.

    header is the raw dev/ftype/seq/len bytes; reason is "crc" or
    "bad_type" (CRC passed but the type byte is not a known tag).
    """
    header: bytes
    crc_received: int
    crc_computed: int
    reason: str = "crc"


@dataclass(frozen=True)
class Resync:
    bytes_skipped: int


Event = FrameOk | CrcError | Resync


@dataclass
class DeframerStats:
    frames_ok: int = 0
    crc_errors: int = 0
    resyncs: int = 0
    bytes_skipped: int = 0


class Deframer:
    """Incremental frame decoder; one instance per receive task.

    Feed bytes with push() and collect events.  Feeding byte-at-a-time or
    all-at-once yields the same event sequence.
    """

    HUNTING_SYNC = "HUNTING_SYNC"
    READING_HEADER = "READING_HEADER"
    READING_BODY = "READING_BODY"

    def __init__(self) -> None:
        self._buf = bytearray()
        self._skipped = 0
        self.stats = DeframerStats()

    @property
    def phase(self) -> str:
        if len(self._buf) < 2 or not self._buf.startswith(SYNC):
            return self.HUNTING_SYNC
        if len(self._buf) < 2 + HEADER_LEN:
            return self.READING_HEADER
        return self.READING_BODY

    @property
    def buffered(self) -> int:
        return len(self._buf)

    def push(self, data: bytes) -> list[Event]:
        """Consume data, return the complete events it produced."""
        events: list[Event] = []
        pos = 0
        n = len(data)
        while True:
            # feed at most what keeps the pending buffer within one max frame
            room = MAX_FRAME - len(self._buf)
            if room > 0 and pos < n:
                take = min(room, n - pos)
                self._buf += data[pos:pos + take]
                pos += take
            self._drain(events)
            if pos >= n:
                return events

    def _drain(self, events: list[Event]) -> None:
        buf = self._buf
        while True:
            idx = buf.find(SYNC)
            if idx < 0:
                # keep a trailing 0xEB: the 0x90 may arrive in the next push
                keep = 1 if buf and buf[-1] == SYNC[0] else 0
                discard = len(buf) - keep
                if discard > 0:
                    self._skipped += discard
                    del buf[:discard]
                return
            if idx > 0:
                self._skipped += idx
                del buf[:idx]
            if self._skipped:
                events.append(Resync(self._skipped))
                self.stats.resyncs += 1
                self.stats.bytes_skipped += self._skipped
                self._skipped = 0
            if len(buf) < 2 + HEADER_LEN:
                return
            plen = buf[5]
            total = OVERHEAD + plen
            if len(buf) < total:
                return
            body = bytes(buf[2:6 + plen])
            crc_rx = (buf[6 + plen] << 8) | buf[7 + plen]
            crc_calc = crc16(body)
            if crc_calc != crc_rx:
                events.append(CrcError(body[:HEADER_LEN], crc_rx, crc_calc))
                self.stats.crc_errors += 1
                del buf[:2]  # resume hunting just past the failed sync word
                continue
            if body[1] not in _VALID_TYPES:
                events.append(CrcError(body[:HEADER_LEN], crc_rx, crc_calc, reason="bad_type"))
                self.stats.crc_errors += 1
                del buf[:2]
                continue
            events.append(FrameOk(Frame(body[0], FrameType(body[1]), body[2], body[4:])))
            self.stats.frames_ok += 1
            del buf[:total]


def deframe_push(state: Deframer, data: bytes) -> list[Event]:
    """Functional alias for Deframer.push."""
    return state.push(data)
