"""In-process stand-in for the 8-port serial expansion board.

Each port is a duplex byte channel between an OBDH-side endpoint and a
device-side endpoint.  Delivery is FIFO and loss-free unless a fault spec
is injected.  With pacing enabled, bytes become readable at the line rate
of the configured serial framing (9600 8N1 = 960 bytes/s): byte ready
times are scheduled at write time, so measured throughput is exact
regardless of scheduler jitter.

Line mode (RS232/RS422/TTL) is configuration metadata; attaching a device
whose mode differs from the port's turns both directions into a black
hole (total byte loss), which makes misconfiguration observable.

A bus supports at most 8 ports.  Endpoints support one concurrent reader
and one concurrent writer each; reads and writes on distinct ports never
interact.
"""

from __future__ import annotations

import random
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

MAX_PORTS = 8
DEFAULT_CAPACITY = 64 * 1024


class LineMode(Enum):
    RS232 = "RS232"
    RS422 = "RS422"
    TTL = "TTL"


class BusError(Exception):
    pass


class DuplicatePortError(BusError):
    pass


class CapacityError(BusError):
    pass


class ClosedPortError(BusError):
    pass


class EndOfStream(BusError):
    """Peer endpoint closed and no buffered bytes remain."""


class FaultConfigError(ValueError):
    pass


@dataclass
class PortConfig:
    port_id: str
    mode: LineMode = LineMode.RS232
    baud: int = 9600
    data_bits: int = 8
    parity: str = "N"
    stop_bits: int = 1
    pacing_enabled: bool = True

    def __post_init__(self):
        if self.baud <= 0:
            raise ValueError(f"baud must be positive, got {self.baud}")

    @property
    def symbols_per_byte(self) -> int:
        # start bit + data + optional parity + stop bits
        return 1 + self.data_bits + (0 if self.parity == "N" else 1) + self.stop_bits

    @property
    def bytes_per_second(self) -> float:
        return self.baud / self.symbols_per_byte


# --- fault injection ----------------------------------------------------

@dataclass
class BitFlip:
    """Flip one random bit of a byte with probability p, per byte."""
    probability: float
    seed: int | None = None


@dataclass
class Drop:
    """Drop a byte with probability p, per byte."""
    probability: float
    seed: int | None = None


@dataclass
class BurstGarbage:
    """Insert `length` random bytes at `offset` in the delivery stream.

    The offset counts bytes delivered after the fault is armed; the burst
    fires once.
    """
    length: int
    offset: int = 0
    seed: int | None = None


FaultSpec = BitFlip | Drop | BurstGarbage


class _FaultState:
    def __init__(self, spec: FaultSpec):
        if isinstance(spec, (BitFlip, Drop)) and not 0.0 <= spec.probability <= 1.0:
            raise FaultConfigError(f"probability outside [0,1]: {spec.probability}")
        if isinstance(spec, BurstGarbage) and (spec.length < 0 or spec.offset < 0):
            raise FaultConfigError("burst length and offset must be non-negative")
        self.spec = spec
        self.rng = random.Random(spec.seed)
        self.bytes_seen = 0
        self.burst_fired = False

    def apply(self, data: bytes) -> bytes:
        spec = self.spec
        if isinstance(spec, BitFlip):
            if spec.probability == 0.0:
                return data
            out = bytearray(data)
            for i in range(len(out)):
                if self.rng.random() < spec.probability:
                    out[i] ^= 1 << self.rng.randrange(8)
            return bytes(out)
        if isinstance(spec, Drop):
            if spec.probability == 0.0:
                return data
            return bytes(b for b in data if self.rng.random() >= spec.probability)
        # BurstGarbage
        if self.burst_fired:
            return data
        start = self.bytes_seen
        self.bytes_seen += len(data)
        if self.bytes_seen < spec.offset:
            return data
        cut = max(0, spec.offset - start)
        self.burst_fired = True
        return data[:cut] + self.rng.randbytes(spec.length) + data[cut:]


# --- channel (one direction) --------------------------------------------

class _Segment:
    __slots__ = ("base", "period", "data", "taken")

    def __init__(self, base: float, period: float, data: bytes):
        self.base = base
        self.period = period
        self.data = data
        self.taken = 0

    def ready_count(self, now: float) -> int:
        """How many of the remaining bytes are readable at `now`."""
        if self.period == 0.0:
            return len(self.data) - self.taken if now >= self.base else 0
        n = int((now - self.base) // self.period)  # byte k ready at base+(k+1)*period
        return max(0, min(n, len(self.data)) - self.taken)

    def next_ready_time(self) -> float:
        return self.base + (self.taken + 1) * self.period


class _Channel:
    """One direction of a port: writer side delivers, reader side reads."""

    def __init__(self, config: PortConfig, capacity: int):
        self._cond = threading.Condition()
        self._segments: deque[_Segment] = deque()
        self._buffered = 0
        self._capacity = capacity
        self._config = config
        self._fault: _FaultState | None = None
        self._black_hole = False
        self._closed = False
        self._next_free = 0.0  # pacing: when the line is free again
        self.overruns = 0

    def set_fault(self, spec: FaultSpec | None) -> None:
        with self._cond:
            self._fault = _FaultState(spec) if spec is not None else None

    def set_black_hole(self, on: bool) -> None:
        with self._cond:
            self._black_hole = on

    def deliver(self, data: bytes) -> int:
        """Accept bytes from the writer; returns count accepted."""
        with self._cond:
            if self._closed:
                raise ClosedPortError("port closed")
            if not data:
                return 0
            free = self._capacity - self._buffered
            if free <= 0:
                self.overruns += 1
                return 0
            accepted = data[:free]
            if self._black_hole:
                return len(accepted)  # line mode mismatch: bytes vanish
            delivered = self._fault.apply(accepted) if self._fault else accepted
            if delivered:
                now = time.monotonic()
                if self._config.pacing_enabled:
                    period = 1.0 / self._config.bytes_per_second
                    base = max(now, self._next_free)
                    self._next_free = base + period * len(delivered)
                else:
                    period, base = 0.0, now
                self._segments.append(_Segment(base, period, delivered))
                self._buffered += len(delivered)
                self._cond.notify_all()
            return len(accepted)

    def read(self, max_bytes: int, wait: float) -> bytes:
        if max_bytes <= 0:
            return b""
        deadline = time.monotonic() + wait
        with self._cond:
            while True:
                now = time.monotonic()
                chunk = self._take(max_bytes, now)
                if chunk:
                    return chunk
                if self._closed and not self._segments:
                    raise EndOfStream("peer closed")
                timeout = deadline - now
                if timeout <= 0:
                    return b""
                if self._segments:  # paced bytes pending: wake when the next is due
                    timeout = min(timeout, self._segments[0].next_ready_time() - now)
                self._cond.wait(max(timeout, 0.0005))

    def _take(self, max_bytes: int, now: float) -> bytes:
        out = bytearray()
        while self._segments and len(out) < max_bytes:
            seg = self._segments[0]
            n = min(seg.ready_count(now), max_bytes - len(out))
            if n == 0:
                break
            out += seg.data[seg.taken:seg.taken + n]
            seg.taken += n
            if seg.taken == len(seg.data):
                self._segments.popleft()
        self._buffered -= len(out)
        return bytes(out)

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()


# --- endpoints and ports -------------------------------------------------

class Role(Enum):
    OBDH_SIDE = "OBDH_SIDE"
    DEVICE_SIDE = "DEVICE_SIDE"


class Endpoint:
    """One side of a port; read from the peer, write to the peer."""

    def __init__(self, role: Role, port: "Port", rx: _Channel, tx: _Channel):
        self.role = role
        self.port = port
        self._rx = rx
        self._tx = tx
        self._closed = False

    @property
    def port_id(self) -> str:
        return self.port.config.port_id

    def write(self, data: bytes) -> int:
        """Enqueue bytes to the peer; returns count accepted (0 if full)."""
        if self._closed:
            raise ClosedPortError(f"endpoint {self.port_id}/{self.role.value} closed")
        return self._tx.deliver(data)

    def write_all(self, data: bytes, poll: float = 0.001) -> None:
        """Write with retry until everything is accepted."""
        view = memoryview(data)
        while view:
            n = self.write(bytes(view))
            view = view[n:]
            if n == 0:
                time.sleep(poll)

    def read(self, max_bytes: int, wait: float = 0.0) -> bytes:
        """Return 1..max_bytes available bytes, or b"" once wait elapses."""
        if self._closed:
            raise ClosedPortError(f"endpoint {self.port_id}/{self.role.value} closed")
        return self._rx.read(max_bytes, wait)

    def inject_fault(self, spec: FaultSpec | None) -> None:
        """Perturb subsequent deliveries to this endpoint (None clears)."""
        self._rx.set_fault(spec)

    def close(self) -> None:
        self._closed = True
        self._rx.close()
        self._tx.close()


@dataclass
class Port:
    config: PortConfig
    obdh: Endpoint = field(init=False)
    device: Endpoint = field(init=False)
    attached_device_mode: LineMode | None = field(default=None, init=False)


class VirtualBus:
    """Registry of up to MAX_PORTS duplex ports."""

    def __init__(self, capacity: int = DEFAULT_CAPACITY):
        self._lock = threading.Lock()
        self._ports: dict[str, Port] = {}
        self._capacity = capacity

    def create_port(self, config: PortConfig) -> tuple[Endpoint, Endpoint]:
        """Create a port; returns (obdh_endpoint, device_endpoint)."""
        with self._lock:
            if config.port_id in self._ports:
                raise DuplicatePortError(f'duplicate port "{config.port_id}"')
            if len(self._ports) >= MAX_PORTS:
                raise CapacityError(f"bus full: {MAX_PORTS} ports")
            port = Port(config)
            to_device = _Channel(config, self._capacity)
            to_obdh = _Channel(config, self._capacity)
            port.obdh = Endpoint(Role.OBDH_SIDE, port, rx=to_obdh, tx=to_device)
            port.device = Endpoint(Role.DEVICE_SIDE, port, rx=to_device, tx=to_obdh)
            self._ports[config.port_id] = port
            return port.obdh, port.device

    def attach_device_mode(self, port_id: str, mode: LineMode) -> None:
        """Declare the attached device's line mode; mismatch kills the port."""
        with self._lock:
            port = self._ports[port_id]
            port.attached_device_mode = mode
            mismatch = mode != port.config.mode
        for ch in (port.obdh._rx, port.obdh._tx):
            ch.set_black_hole(mismatch)

    def get_port(self, port_id: str) -> Port:
        with self._lock:
            return self._ports[port_id]

    def port_ids(self) -> list[str]:
        with self._lock:
            return list(self._ports)

    def close_all(self) -> None:
        with self._lock:
            ports = list(self._ports.values())
        for port in ports:
            port.obdh.close()
            port.device.close()
