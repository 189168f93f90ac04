"""Interleaved-writer corruption demo: reproduce it, then eliminate it.

Several writers share one output sink.  Each writer emits fixed-length
messages drawn from its own alphabet (writer 0 lowercase, writer 1
uppercase, ...); alphabets are pairwise disjoint, so any output run mixing
two alphabets is provably corrupted.

UNSAFE mode models a non-reentrant shared writer: each message is pushed
through the sink in chunk_size pieces with no exclusivity, and a seeded
scheduler interleaves the pieces of different writers.  SAFE mode writes
each whole message under an exclusive lease, which makes mixing
impossible by construction.

The scheduler is a uniformly random interleaving of the writers' piece
sequences (a seeded shuffle of the piece schedule), so corruption
statistics are exactly reproducible: the same config and seed always
produce the same report.  A host-scheduler mode using real threads is
available for demonstration; it is nondeterministic and excluded from any
assertion of rates.

Classification: the sink output is cut into consecutive runs of
run_length bytes; a run whose bytes do not all belong to one alphabet is
corrupted.  Bytes outside every alphabet count as their own pseudo
alphabet.  A trailing partial run is reported separately, never counted.
"""

from __future__ import annotations

import string
import threading
import time
from dataclasses import dataclass

import numpy as np

DEFAULT_RUN_LENGTH = 26


class DemoConfigError(ValueError):
    pass


@dataclass
class DemoConfig:
    mode: str = "unsafe"                 # "unsafe" | "safe"
    writer_count: int = 2
    messages_per_writer: int = 1000
    chunk_size: int = 1                  # bytes per unsynchronized write (unsafe)
    seed: int = 0
    run_length: int = DEFAULT_RUN_LENGTH
    alphabets: list[bytes] | None = None  # default: per-writer disjoint sets

    def resolved_alphabets(self) -> list[bytes]:
        alphabets = self.alphabets or default_alphabets(self.writer_count)
        if len(alphabets) < self.writer_count:
            raise DemoConfigError(
                f"{self.writer_count} writers but only {len(alphabets)} alphabets")
        return alphabets[:self.writer_count]

    def validate(self) -> None:
        if self.mode not in ("unsafe", "safe"):
            raise DemoConfigError(f'mode must be "unsafe" or "safe", got {self.mode!r}')
        if self.writer_count < 1:
            raise DemoConfigError("writer_count must be >= 1")
        if self.messages_per_writer < 1:
            raise DemoConfigError("messages_per_writer must be >= 1")
        if self.chunk_size < 1:
            raise DemoConfigError("chunk_size must be >= 1")
        if self.run_length < 1:
            raise DemoConfigError("run_length must be > 0")
        alphabets = self.resolved_alphabets()
        seen: set[int] = set()
        for i, alphabet in enumerate(alphabets):
            if not alphabet:
                raise DemoConfigError(f"alphabet {i} is empty")
            symbols = set(alphabet)
            if symbols & seen:
                raise DemoConfigError(f"alphabet {i} overlaps an earlier one")
            seen |= symbols


@dataclass
class CorruptionReport:
    messages_total: int
    messages_corrupted: int
    corruption_rate: float
    first_corruption_example: bytes | None = None
    partial_tail_bytes: int = 0

    def to_json(self) -> dict:
        example = self.first_corruption_example
        return {
            "messages_total": self.messages_total,
            "messages_corrupted": self.messages_corrupted,
            "corruption_rate": self.corruption_rate,
            "first_corruption_example": (
                example.decode("ascii", errors="backslashreplace")
                if example is not None else None),
            "partial_tail_bytes": self.partial_tail_bytes,
        }


def default_alphabets(n: int) -> list[bytes]:
    """Pairwise-disjoint per-writer symbol sets; 0=lowercase, 1=uppercase."""
    named = [
        string.ascii_lowercase.encode(),
        string.ascii_uppercase.encode(),
        string.digits.encode(),
        b"!#$%&()*+,-./:;<=>?@",
    ]
    if n <= len(named):
        return named[:n]
    used = set(b"".join(named))
    pool = [b for b in range(256) if b not in used]
    out = list(named)
    width = 8
    for i in range(n - len(named)):
        chunk = pool[i * width:(i + 1) * width]
        if len(chunk) < width:
            raise DemoConfigError(f"cannot build {n} disjoint alphabets")
        out.append(bytes(chunk))
    return out


def writer_message(alphabet: bytes, run_length: int) -> bytes:
    """One message: the alphabet cycled to run_length bytes (one pass)."""
    reps = -(-run_length // len(alphabet))
    return (alphabet * reps)[:run_length]


def classify_stream(data: bytes, writer_alphabets: list[bytes],
                    run_length: int) -> CorruptionReport:
    """Cut data into run_length runs and label each pure or corrupted."""
    if run_length <= 0:
        raise DemoConfigError("run_length must be > 0")
    arr = np.frombuffer(bytes(data), dtype=np.uint8)
    owner = np.full(256, -1, dtype=np.int16)
    for i, alphabet in enumerate(writer_alphabets):
        owner[np.frombuffer(alphabet, dtype=np.uint8)] = i
    total = len(arr) // run_length
    tail = len(arr) - total * run_length
    if total == 0:
        return CorruptionReport(0, 0, 0.0, None, tail)
    owners = owner[arr[:total * run_length]].reshape(total, run_length)
    corrupted_mask = owners.max(axis=1) != owners.min(axis=1)
    corrupted = int(corrupted_mask.sum())
    example = None
    if corrupted:
        first = int(np.argmax(corrupted_mask))
        example = bytes(arr[first * run_length:(first + 1) * run_length])
    return CorruptionReport(total, corrupted, corrupted / total, example, tail)


def _piece_schedule(counts: list[int], seed: int) -> np.ndarray:
    """Uniformly random interleaving of each writer's piece sequence."""
    ids = np.repeat(np.arange(len(counts), dtype=np.int32), counts)
    return np.random.default_rng(seed).permutation(ids)


def _emit(schedule: np.ndarray, pieces_per_writer: list[list[bytes]]) -> bytes:
    """Replay the schedule, popping each writer's next piece in order."""
    iters = [iter(pieces) for pieces in pieces_per_writer]
    out = bytearray()
    for wid in schedule:
        out += next(iters[wid])
    return bytes(out)


def _emit_uniform(schedule: np.ndarray, streams: list[bytes], piece_len: int) -> bytes:
    """Vectorized emission when every piece has the same length."""
    out = np.empty((len(schedule), piece_len), dtype=np.uint8)
    for wid, stream in enumerate(streams):
        out[schedule == wid] = np.frombuffer(stream, dtype=np.uint8).reshape(-1, piece_len)
    return out.tobytes()


def generate_sink(config: DemoConfig) -> bytes:
    """Produce the shared sink's contents under the seeded scheduler."""
    config.validate()
    alphabets = config.resolved_alphabets()
    messages = [writer_message(a, config.run_length) for a in alphabets]
    atomic = config.mode == "safe" or config.chunk_size >= config.run_length
    if atomic:
        # whole messages are written under the lease (or in one chunk)
        piece_len = config.run_length
        counts = [config.messages_per_writer] * config.writer_count
        schedule = _piece_schedule(counts, config.seed)
        streams = [m * config.messages_per_writer for m in messages]
        return _emit_uniform(schedule, streams, piece_len)
    pieces_per_message = -(-config.run_length // config.chunk_size)
    counts = [config.messages_per_writer * pieces_per_message] * config.writer_count
    schedule = _piece_schedule(counts, config.seed)
    if config.run_length % config.chunk_size == 0:
        streams = [m * config.messages_per_writer for m in messages]
        return _emit_uniform(schedule, streams, config.chunk_size)
    chunks = [
        [m[i:i + config.chunk_size] for i in range(0, config.run_length, config.chunk_size)]
        for m in messages
    ]
    pieces = [c * config.messages_per_writer for c in chunks]
    return _emit(schedule, pieces)


def run_demo(config: DemoConfig) -> CorruptionReport:
    """Run the seeded demo and classify the sink output."""
    sink = generate_sink(config)
    return classify_stream(sink, config.resolved_alphabets(), config.run_length)


def run_demo_host_threads(config: DemoConfig) -> CorruptionReport:
    """Demonstration variant on real threads (nondeterministic)."""
    config.validate()
    alphabets = config.resolved_alphabets()
    messages = [writer_message(a, config.run_length) for a in alphabets]
    sink = bytearray()
    lease = threading.Lock()

    def writer(wid: int) -> None:
        message = messages[wid]
        for _ in range(config.messages_per_writer):
            if config.mode == "safe":
                with lease:
                    sink.extend(message)
            else:
                for i in range(0, len(message), config.chunk_size):
                    sink.extend(message[i:i + config.chunk_size])
                    time.sleep(0)  # invite a context switch mid-message

    threads = [threading.Thread(target=writer, args=(w,))
               for w in range(config.writer_count)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    return classify_stream(bytes(sink), alphabets, config.run_length)
