"""Deterministic subsystem simulators: WDE, star sensor, battery, GPS.

Each simulator owns its state exclusively, answers CMD frames addressed
to its device id and evolves under step(dt).  Determinism contract: the
same command sequence plus the same step schedule produces byte-identical
telemetry (no hidden clocks, no RNG).

Telemetry payload layouts (big-endian):

  WDE (32 bytes)
      0-3   wheel_speed       i32, rpm
      4-5   motor_current     u16, mA
      6-7   temperature       i16, 0.1 degC
      8     status_flags
      9     mode              0=IDLE 1=RUN
      10-13 commanded_speed   i32, rpm
      14-31 zero

  STS (24 bytes)
      0-7   quaternion w,x,y,z   4 x i16, scale 2^-14
      8-15  clock              u64, ms
      16-17 status
      18-23 zero

  Battery (8 bytes): voltage u16 mV | current i16 mA | temperature i16
  0.1 degC | state_of_charge u8 % | zero u8.

  GPS (16 bytes): latitude i32 1e-7 deg | longitude i32 1e-7 deg |
  altitude i32 mm | gps_time u32 s.

Command codes (first payload byte of a CMD frame):
  0x10 GET_TLM    no params; reply is one TLM frame echoing the seq.
  0x20 SET_SPEED  WDE only; params = signed 32-bit rpm big-endian.
Unknown codes or bad parameter lengths are NAKed with a reason byte.
"""

from __future__ import annotations

import math
import struct
import threading
import time
from dataclasses import dataclass, field
from enum import Enum, IntEnum

from .frame_codec import Deframer, Frame, FrameOk, FrameType, encode_frame
from .virtual_bus import Endpoint

GET_TLM = 0x10
SET_SPEED = 0x20

NAK_UNKNOWN_COMMAND = 0x01
NAK_BAD_LENGTH = 0x02

COMMAND_NAMES = {"GET_TLM": GET_TLM, "SET_SPEED": SET_SPEED}

WDE_TLM_LEN = 32
STS_TLM_LEN = 24
BATTERY_TLM_LEN = 8
GPS_TLM_LEN = 16


class DeviceKind(Enum):
    WDE = "WDE"
    STS = "STS"
    BATTERY = "BATTERY"
    GPS = "GPS"


class WdeMode(IntEnum):
    IDLE = 0
    RUN = 1


def _nak(dev_id: int, seq: int, reason: int) -> Frame:
    return Frame(dev_id, FrameType.NAK, seq, bytes([reason]))


class DeviceSim:
    """Base: command parsing common to all devices."""

    kind: DeviceKind

    def __init__(self, dev_id: int):
        self.dev_id = dev_id

    def telemetry(self) -> bytes:
        raise NotImplementedError

    def step(self, dt: float) -> None:
        raise NotImplementedError

    def handle_command(self, frame: Frame) -> list[Frame]:
        """Process one CMD frame addressed to this device."""
        if frame.ftype != FrameType.CMD or frame.dev_id != self.dev_id:
            return []
        if not frame.payload:
            return [_nak(self.dev_id, frame.seq, NAK_BAD_LENGTH)]
        code = frame.payload[0]
        params = frame.payload[1:]
        if code == GET_TLM:
            if params:
                return [_nak(self.dev_id, frame.seq, NAK_BAD_LENGTH)]
            return [Frame(self.dev_id, FrameType.TLM, frame.seq, self.telemetry())]
        handler = getattr(self, f"_cmd_{code:#04x}", None)
        if handler is None:
            return [_nak(self.dev_id, frame.seq, NAK_UNKNOWN_COMMAND)]
        return handler(frame.seq, params)


@dataclass
class WdeState:
    wheel_speed: float = 0.0      # rpm
    commanded_speed: int = 0      # rpm
    motor_current: int = 0        # mA
    temperature: int = 250        # 0.1 degC
    status_flags: int = 0
    mode: WdeMode = WdeMode.IDLE


def wde_telemetry(state: WdeState) -> bytes:
    """Fixed 32-byte wheel-drive telemetry payload."""
    return struct.pack(
        ">iHhBBi18x",
        int(round(state.wheel_speed)),
        state.motor_current,
        state.temperature,
        state.status_flags,
        state.mode,
        state.commanded_speed,
    )


class WdeSim(DeviceSim):
    """Reaction wheel drive electronics: first-order slew toward setpoint."""

    kind = DeviceKind.WDE

    STATUS_AT_SPEED = 0x01
    STATUS_RUNNING = 0x02

    def __init__(self, dev_id: int, max_speed: int = 6000, slew: float = 500.0):
        super().__init__(dev_id)
        self.max_speed = max_speed
        self.slew = slew  # rpm/s
        self.state = WdeState()

    def step(self, dt: float) -> None:
        s = self.state
        delta = s.commanded_speed - s.wheel_speed
        limit = self.slew * dt
        s.wheel_speed += max(-limit, min(limit, delta))
        s.motor_current = int(20 + 0.04 * abs(s.wheel_speed))
        s.temperature = 250 + int(abs(s.wheel_speed) / 50)
        s.mode = WdeMode.RUN if (s.commanded_speed or abs(s.wheel_speed) > 0.5) else WdeMode.IDLE
        s.status_flags = 0
        if abs(delta) < 1.0:
            s.status_flags |= self.STATUS_AT_SPEED
        if s.mode == WdeMode.RUN:
            s.status_flags |= self.STATUS_RUNNING

    def telemetry(self) -> bytes:
        return wde_telemetry(self.state)

    def _cmd_0x20(self, seq: int, params: bytes) -> list[Frame]:
        if len(params) != 4:
            return [_nak(self.dev_id, seq, NAK_BAD_LENGTH)]
        rpm = struct.unpack(">i", params)[0]
        rpm = max(-self.max_speed, min(self.max_speed, rpm))
        self.state.commanded_speed = rpm
        return [Frame(self.dev_id, FrameType.ACK, seq, bytes([SET_SPEED]))]


@dataclass
class StsState:
    quaternion: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)
    spin_rate: float = 0.0  # rad/s
    status: int = 0x0001    # tracking
    clock_ms: int = 0


def sts_telemetry(state: StsState) -> bytes:
    """Fixed 24-byte star-sensor telemetry payload (quaternion in Q14)."""
    comps = [max(-32768, min(32767, int(round(c * 16384)))) for c in state.quaternion]
    return struct.pack(">4hQH6x", *comps, state.clock_ms, state.status)


class StsSim(DeviceSim):
    """Star sensor: unit quaternion spinning about a fixed axis."""

    kind = DeviceKind.STS

    def __init__(self, dev_id: int, spin_rate: float = 0.05,
                 axis: tuple[float, float, float] = (0.0, 0.0, 1.0)):
        super().__init__(dev_id)
        norm = math.sqrt(sum(a * a for a in axis))
        self.axis = tuple(a / norm for a in axis)
        self.state = StsState(spin_rate=spin_rate)

    def step(self, dt: float) -> None:
        s = self.state
        s.clock_ms += int(round(dt * 1000))
        theta = s.spin_rate * dt
        if theta != 0.0:
            half = theta / 2.0
            dw, sin_half = math.cos(half), math.sin(half)
            dx, dy, dz = (sin_half * a for a in self.axis)
            w, x, y, z = s.quaternion
            q = (
                w * dw - x * dx - y * dy - z * dz,
                w * dx + x * dw + y * dz - z * dy,
                w * dy - x * dz + y * dw + z * dx,
                w * dz + x * dy - y * dx + z * dw,
            )
            norm = math.sqrt(sum(c * c for c in q))
            s.quaternion = tuple(c / norm for c in q)

    def telemetry(self) -> bytes:
        return sts_telemetry(self.state)


@dataclass
class BatteryState:
    voltage_mv: int = 8000
    current_ma: int = -250
    temperature: int = 200        # 0.1 degC
    state_of_charge: float = 100.0  # percent


def battery_telemetry(state: BatteryState) -> bytes:
    return struct.pack(">HhhBx", state.voltage_mv, state.current_ma,
                       state.temperature, int(round(state.state_of_charge)))


class BatterySim(DeviceSim):
    """Battery: linear discharge, voltage tracking state of charge."""

    kind = DeviceKind.BATTERY

    def __init__(self, dev_id: int, discharge_pct_per_s: float = 0.002):
        super().__init__(dev_id)
        self.discharge_pct_per_s = discharge_pct_per_s
        self.state = BatteryState()

    def step(self, dt: float) -> None:
        s = self.state
        s.state_of_charge = max(0.0, min(100.0, s.state_of_charge - self.discharge_pct_per_s * dt))
        s.voltage_mv = int(6500 + 15 * s.state_of_charge)
        s.current_ma = -250 if s.state_of_charge > 0 else 0

    def telemetry(self) -> bytes:
        return battery_telemetry(self.state)


# Fixed ground track: (latitude deg, longitude deg, altitude m) waypoints of
# one orbit, traversed in GROUND_TRACK_PERIOD_S and repeated.
GROUND_TRACK = [
    (0.0, 0.0, 650_000.0),
    (35.0, 28.0, 652_000.0),
    (52.0, 65.0, 655_000.0),
    (35.0, 102.0, 652_000.0),
    (0.0, 130.0, 650_000.0),
    (-35.0, 158.0, 648_000.0),
    (-52.0, -165.0, 645_000.0),
    (-35.0, -128.0, 648_000.0),
    (0.0, -100.0, 650_000.0),
    (35.0, -72.0, 652_000.0),
    (52.0, -35.0, 655_000.0),
    (35.0, 2.0, 652_000.0),
]
GROUND_TRACK_PERIOD_S = 5400.0


@dataclass
class GpsState:
    latitude: int = 0    # 1e-7 deg
    longitude: int = 0   # 1e-7 deg
    altitude: int = 0    # mm
    gps_time: float = 0.0  # s


def gps_telemetry(state: GpsState) -> bytes:
    return struct.pack(">iiiI", state.latitude, state.longitude, state.altitude,
                       int(state.gps_time) & 0xFFFFFFFF)


class GpsSim(DeviceSim):
    """GPS: position interpolated along the fixed ground-track table."""

    kind = DeviceKind.GPS

    def __init__(self, dev_id: int):
        super().__init__(dev_id)
        self.state = GpsState()
        self._update_position()

    def step(self, dt: float) -> None:
        self.state.gps_time += dt
        self._update_position()

    def _update_position(self) -> None:
        s = self.state
        n = len(GROUND_TRACK)
        phase = (s.gps_time % GROUND_TRACK_PERIOD_S) / GROUND_TRACK_PERIOD_S * n
        i = int(phase) % n
        frac = phase - int(phase)
        lat0, lon0, alt0 = GROUND_TRACK[i]
        lat1, lon1, alt1 = GROUND_TRACK[(i + 1) % n]
        dlon = (lon1 - lon0 + 180.0) % 360.0 - 180.0  # shortest way around
        s.latitude = int(round((lat0 + (lat1 - lat0) * frac) * 1e7))
        lon = lon0 + dlon * frac
        lon = (lon + 180.0) % 360.0 - 180.0
        s.longitude = int(round(lon * 1e7))
        s.altitude = int(round((alt0 + (alt1 - alt0) * frac) * 1000))

    def telemetry(self) -> bytes:
        return gps_telemetry(self.state)


def make_sim(kind: DeviceKind, dev_id: int, options: dict | None = None) -> DeviceSim:
    options = options or {}
    if kind == DeviceKind.WDE:
        return WdeSim(dev_id,
                      max_speed=options.get("max_speed", 6000),
                      slew=options.get("slew", 500.0))
    if kind == DeviceKind.STS:
        return StsSim(dev_id, spin_rate=options.get("spin_rate", 0.05))
    if kind == DeviceKind.BATTERY:
        return BatterySim(dev_id)
    if kind == DeviceKind.GPS:
        return GpsSim(dev_id)
    raise ValueError(f"unknown device kind: {kind}")


def decode_telemetry(kind: DeviceKind, payload: bytes) -> dict:
    """Best-effort human-readable view of a telemetry payload.

    Raw bytes remain authoritative; unknown lengths yield an empty dict.
    """
    try:
        if kind == DeviceKind.WDE and len(payload) == WDE_TLM_LEN:
            speed, current, temp, flags, mode, commanded = struct.unpack_from(">iHhBBi", payload)
            return {
                "wheel_speed_rpm": speed,
                "motor_current_ma": current,
                "temperature_c": temp / 10.0,
                "status_flags": flags,
                "mode": WdeMode(mode).name if mode in (0, 1) else mode,
                "commanded_speed_rpm": commanded,
            }
        if kind == DeviceKind.STS and len(payload) == STS_TLM_LEN:
            qw, qx, qy, qz, clock, status = struct.unpack_from(">4hQH", payload)
            return {
                "quaternion": [c / 16384.0 for c in (qw, qx, qy, qz)],
                "clock_ms": clock,
                "status": status,
            }
        if kind == DeviceKind.BATTERY and len(payload) == BATTERY_TLM_LEN:
            mv, ma, temp, soc = struct.unpack_from(">HhhB", payload)
            return {
                "voltage_mv": mv,
                "current_ma": ma,
                "temperature_c": temp / 10.0,
                "state_of_charge_pct": soc,
            }
        if kind == DeviceKind.GPS and len(payload) == GPS_TLM_LEN:
            lat, lon, alt, t = struct.unpack_from(">iiiI", payload)
            return {
                "latitude_deg": lat / 1e7,
                "longitude_deg": lon / 1e7,
                "altitude_m": alt / 1000.0,
                "gps_time_s": t,
            }
    except struct.error:
        pass
    return {}


class DeviceRunner:
    """Runs one simulator as its own task on the device side of a port.

    Reads CMD frames, writes replies, steps the model with measured wall
    time, and (for STS with stream_hz set) emits unsolicited telemetry.
    """

    def __init__(self, sim: DeviceSim, endpoint: Endpoint, stream_hz: float | None = None):
        self.sim = sim
        self.endpoint = endpoint
        self.stream_hz = stream_hz
        self._deframer = Deframer()
        self._stream_seq = 0
        self._stop = threading.Event()
        self._thread = threading.Thread(
            target=self._run, name=f"dev-{sim.dev_id}-{endpoint.port_id}", daemon=True)

    def start(self) -> None:
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        self._thread.join(timeout=2.0)

    def _run(self) -> None:
        from .virtual_bus import BusError
        last = time.monotonic()
        next_stream = last + (1.0 / self.stream_hz if self.stream_hz else 0.0)
        while not self._stop.is_set():
            try:
                data = self.endpoint.read(4096, wait=0.02)
            except BusError:
                return
            now = time.monotonic()
            self.sim.step(now - last)
            last = now
            replies: list[Frame] = []
            for event in self._deframer.push(data):
                if isinstance(event, FrameOk):
                    replies += self.sim.handle_command(event.frame)
            if self.stream_hz and now >= next_stream:
                replies.append(Frame(self.sim.dev_id, FrameType.TLM,
                                     self._stream_seq, self.sim.telemetry()))
                self._stream_seq = (self._stream_seq + 1) & 0xFF
                next_stream += 1.0 / self.stream_hz
            try:
                for reply in replies:
                    self._write_frame(reply)
            except BusError:
                return

    def _write_frame(self, frame: Frame) -> None:
        data = encode_frame(frame)
        view = memoryview(data)
        while view and not self._stop.is_set():
            n = self.endpoint.write(bytes(view))
            view = view[n:]
            if n == 0:
                time.sleep(0.001)
