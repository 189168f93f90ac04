"""OBDH supervisor: one receive task per port, command dispatch, routing.

Structure mirrors the flight software being modeled: every port gets its
own receive task (thread) that hunts frames out of the byte stream and
routes them; device simulators run as their own tasks on the device side
of each port.  Suspending one port's task never touches the others.

Concurrency rules:
  - Writes to a port go through that port's exclusive writer lease, so a
    frame is always contiguous on the wire (the multitasking fix for the
    interleaved-writer corruption this system exists to avoid).
  - One outstanding command per device; concurrent dispatchers to the
    same device queue in FIFO order.  Responses are matched by
    (dev_id, seq); stale ACK/NAK frames are counted and dropped.
  - Every received TLM frame is appended to the telemetry store exactly
    once and published to telemetry listeners, whether or not a command
    is waiting on it.
"""

from __future__ import annotations

import logging
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

from .config import DeviceDescriptor, RunConfig
from .frame_codec import (
    CrcError,
    Deframer,
    Frame,
    FrameOk,
    FrameType,
    Resync,
    encode_frame,
)
from .subsystem_sims import GET_TLM, DeviceRunner, decode_telemetry, make_sim
from .telemetry_store import TelemetryRecord, TelemetryStore
from .virtual_bus import BusError, Endpoint, VirtualBus

log = logging.getLogger("obdhsim.supervisor")

DEFAULT_COMMAND_TIMEOUT = 1.0


class SupervisorError(Exception):
    pass


class UnknownDeviceError(SupervisorError):
    pass


class UnknownTaskError(SupervisorError):
    pass


class TaskState(Enum):
    """RUNNING <-> SLEEPING are internal (timed); SUSPENDED is operator-driven."""

    RUNNING = "RUNNING"
    SLEEPING = "SLEEPING"
    SUSPENDED = "SUSPENDED"


class OutcomeStatus(Enum):
    ACK = "ack"
    NAK = "nak"
    TIMEOUT = "timeout"
    PORT_SUSPENDED = "port_suspended"


@dataclass
class CommandOutcome:
    status: OutcomeStatus
    response_frame: Frame | None = None
    round_trip: float = 0.0


@dataclass
class TaskDescriptor:
    task_id: str
    port_id: str
    dev_id: int | None
    state: TaskState
    frames_ok: int = 0
    crc_errors: int = 0
    resyncs: int = 0
    stale_frames: int = 0
    last_activity_ms: int | None = None


@dataclass
class DeviceSummary:
    dev_id: int
    name: str
    kind: str
    port_id: str
    line_mode: str
    cmds_sent: int = 0
    acks: int = 0
    naks: int = 0
    timeouts: int = 0
    last_tlm_ms: int | None = None
    last_tlm_hex: str | None = None


@dataclass
class Snapshot:
    tasks: list[TaskDescriptor]
    devices: list[DeviceSummary]
    store_records: int
    store_bytes: int
    store_path: str

    def to_json(self) -> dict:
        return {
            "tasks": [
                {
                    "task_id": t.task_id, "port_id": t.port_id, "dev_id": t.dev_id,
                    "state": t.state.value, "frames_ok": t.frames_ok,
                    "crc_errors": t.crc_errors, "resyncs": t.resyncs,
                    "stale_frames": t.stale_frames, "last_activity_ms": t.last_activity_ms,
                }
                for t in self.tasks
            ],
            "devices": [
                {
                    "dev_id": d.dev_id, "name": d.name, "kind": d.kind,
                    "port_id": d.port_id, "line_mode": d.line_mode,
                    "cmds_sent": d.cmds_sent, "acks": d.acks, "naks": d.naks,
                    "timeouts": d.timeouts, "last_tlm_ms": d.last_tlm_ms,
                    "last_tlm_hex": d.last_tlm_hex,
                }
                for d in self.devices
            ],
            "store": {
                "records": self.store_records,
                "bytes": self.store_bytes,
                "path": self.store_path,
            },
        }


class _FifoLock:
    """Mutex granting the lock in strict arrival order."""

    def __init__(self):
        self._cond = threading.Condition()
        self._waiters: deque[object] = deque()
        self._held = False

    def __enter__(self):
        ticket = object()
        with self._cond:
            self._waiters.append(ticket)
            while self._held or self._waiters[0] is not ticket:
                self._cond.wait()
            self._waiters.popleft()
            self._held = True
        return self

    def __exit__(self, *exc):
        with self._cond:
            self._held = False
            self._cond.notify_all()


class _Waiter:
    __slots__ = ("seq", "event", "frame")

    def __init__(self, seq: int):
        self.seq = seq
        self.event = threading.Event()
        self.frame: Frame | None = None


class _DeviceCtx:
    def __init__(self, descriptor: DeviceDescriptor, runner: DeviceRunner):
        self.descriptor = descriptor
        self.runner = runner
        self.dispatch_lock = _FifoLock()
        self.lock = threading.Lock()
        self.next_seq = 0
        self.waiter: _Waiter | None = None
        self.summary = DeviceSummary(
            dev_id=descriptor.dev_id, name=descriptor.name,
            kind=descriptor.kind.value, port_id=descriptor.port_id,
            line_mode=descriptor.line_mode.value)

    def take_seq(self) -> int:
        with self.lock:
            seq = self.next_seq
            self.next_seq = (self.next_seq + 1) & 0xFF
            return seq


class _PortTask:
    """One receive task per port: deframes and routes inbound bytes."""

    def __init__(self, supervisor: "Supervisor", port_id: str,
                 endpoint: Endpoint, device: _DeviceCtx):
        self.supervisor = supervisor
        self.port_id = port_id
        self.task_id = f"rx-{port_id}"
        self.endpoint = endpoint
        self.device = device
        self.deframer = Deframer()
        self.write_lease = threading.Lock()
        self.stale_frames = 0
        self.misrouted = 0
        self.last_activity_ms: int | None = None
        self._state = TaskState.RUNNING
        self._state_cond = threading.Condition()
        self._stop = False
        self._thread = threading.Thread(target=self._run, name=self.task_id, daemon=True)

    # -- state ---------------------------------------------------------

    @property
    def state(self) -> TaskState:
        return self._state

    def suspend(self) -> None:
        with self._state_cond:
            if self._state is not TaskState.SUSPENDED:
                self._state = TaskState.SUSPENDED
                self._state_cond.notify_all()

    def resume(self) -> None:
        with self._state_cond:
            if self._state is TaskState.SUSPENDED:
                self._state = TaskState.RUNNING
                self._state_cond.notify_all()

    @property
    def suspended(self) -> bool:
        return self._state is TaskState.SUSPENDED

    # -- lifecycle -------------------------------------------------------

    def start(self) -> None:
        self._thread.start()

    def stop(self) -> None:
        with self._state_cond:
            self._stop = True
            self._state_cond.notify_all()
        self._thread.join(timeout=2.0)

    def _run(self) -> None:
        while True:
            with self._state_cond:
                while self._state is TaskState.SUSPENDED and not self._stop:
                    self._state_cond.wait()
                if self._stop:
                    return
            try:
                data = self.endpoint.read(4096, wait=0.05)
            except BusError:
                return
            if not data:
                continue
            self.last_activity_ms = int(time.time() * 1000)
            for event in self.deframer.push(data):
                self._route(event)

    # -- routing ---------------------------------------------------------

    def _route(self, event) -> None:
        if isinstance(event, FrameOk):
            self._route_frame(event.frame)
        elif isinstance(event, CrcError):
            log.warning("crc_error port=%s task=%s reason=%s", self.port_id,
                        self.task_id, event.reason)
        elif isinstance(event, Resync):
            log.warning("resync port=%s skipped=%d", self.port_id, event.bytes_skipped)

    def _route_frame(self, frame: Frame) -> None:
        ctx = self.device
        if frame.dev_id != ctx.descriptor.dev_id:
            self.misrouted += 1
            log.warning("misrouted_frame port=%s dev=%d", self.port_id, frame.dev_id)
            return
        now_ms = int(time.time() * 1000)
        if frame.ftype == FrameType.TLM:
            self.supervisor._ingest_telemetry(ctx, frame, now_ms)
        if frame.ftype in (FrameType.TLM, FrameType.ACK, FrameType.NAK):
            with ctx.lock:
                waiter = ctx.waiter
                if waiter is not None and waiter.seq == frame.seq and not waiter.event.is_set():
                    waiter.frame = frame
                    waiter.event.set()
                    return
            # unmatched TLM is the unsolicited stream (already ingested);
            # unmatched ACK/NAK means a stale or duplicate response
            if frame.ftype != FrameType.TLM:
                self.stale_frames += 1
        else:
            self.stale_frames += 1


class Supervisor:
    """Owns the bus, the port tasks, the device runners and the store."""

    def __init__(self, config: RunConfig):
        config.validate()
        self.config = config
        self.bus = VirtualBus()
        self.store: TelemetryStore | None = None
        self.ground_link = None
        self._tasks: dict[str, _PortTask] = {}
        self._devices: dict[int, _DeviceCtx] = {}
        self._pollers: list[_PollTask] = []
        self._telemetry_listeners: list = []
        self._task_listeners: list = []
        self._stats_lock = threading.Lock()
        self._started = False

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> "Supervisor":
        if self._started:
            return self
        self.store, report = TelemetryStore.recover(self.config.store_path)
        if report.truncated_tail_bytes or report.unrecovered_bytes:
            log.warning("store_recovery records=%d tail_bytes=%d unrecovered=%d",
                        report.records_recovered, report.truncated_tail_bytes,
                        report.unrecovered_bytes)
        ports_by_id = {p.port_id: p for p in self.config.ports}
        for desc in self.config.roster:
            obdh_ep, device_ep = self.bus.create_port(ports_by_id[desc.port_id])
            self.bus.attach_device_mode(desc.port_id, desc.line_mode)
            sim = make_sim(desc.kind, desc.dev_id, desc.options)
            runner = DeviceRunner(sim, device_ep, stream_hz=desc.stream_hz)
            ctx = _DeviceCtx(desc, runner)
            self._devices[desc.dev_id] = ctx
            task = _PortTask(self, desc.port_id, obdh_ep, ctx)
            self._tasks[task.task_id] = task
        for ctx in self._devices.values():
            ctx.runner.start()
        for task in self._tasks.values():
            task.start()
            log.info("task_started task=%s port=%s dev=%d", task.task_id,
                     task.port_id, task.device.descriptor.dev_id)
        for desc in self.config.roster:
            if desc.poll_period_s:
                poller = _PollTask(self, desc.dev_id, desc.poll_period_s)
                self._pollers.append(poller)
                poller.start()
                log.info("task_started task=%s dev=%d", poller.task_id, desc.dev_id)
        if self.config.ground_listen:
            from .ground_link import GroundLink
            host, _, port = self.config.ground_listen.rpartition(":")
            self.ground_link = GroundLink(self, host or "127.0.0.1", int(port))
            self.ground_link.serve()
            log.info("ground_link_listening address=%s:%d", *self.ground_link.address)
        self._started = True
        return self

    def stop(self) -> None:
        if not self._started:
            return
        self._started = False
        if self.ground_link is not None:
            self.ground_link.close()
        for poller in self._pollers:
            poller.stop()
        for task in self._tasks.values():
            task.stop()
        for ctx in self._devices.values():
            ctx.runner.stop()
        self.bus.close_all()
        if self.store is not None:
            self.store.close()
        log.info("supervisor_stopped")

    # -- operations ---------------------------------------------------------

    def dispatch_command(self, dev_id: int, command_code: int, params: bytes = b"",
                         timeout: float = DEFAULT_COMMAND_TIMEOUT) -> CommandOutcome:
        """Send one command frame and await its matching-seq response."""
        ctx = self._devices.get(dev_id)
        if ctx is None:
            raise UnknownDeviceError(f"unknown device {dev_id}")
        task = self._tasks[f"rx-{ctx.descriptor.port_id}"]
        with ctx.dispatch_lock:  # one outstanding command per device, FIFO
            if task.suspended:
                return CommandOutcome(OutcomeStatus.PORT_SUSPENDED)
            seq = ctx.take_seq()
            waiter = _Waiter(seq)
            with ctx.lock:
                ctx.waiter = waiter
            frame = Frame(dev_id, FrameType.CMD, seq, bytes([command_code]) + params)
            encoded = encode_frame(frame)
            t0 = time.monotonic()
            try:
                with task.write_lease:  # frame hits the wire contiguously
                    task.endpoint.write_all(encoded)
                answered = waiter.event.wait(timeout)
            finally:
                with ctx.lock:
                    ctx.waiter = None
            round_trip = time.monotonic() - t0
            with self._stats_lock:
                ctx.summary.cmds_sent += 1
                if not answered:
                    ctx.summary.timeouts += 1
                elif waiter.frame.ftype == FrameType.NAK:
                    ctx.summary.naks += 1
                else:
                    ctx.summary.acks += 1
            if not answered:
                log.warning("command_timeout dev=%d code=0x%02x seq=%d", dev_id,
                            command_code, seq)
                return CommandOutcome(OutcomeStatus.TIMEOUT, None, round_trip)
            status = (OutcomeStatus.NAK if waiter.frame.ftype == FrameType.NAK
                      else OutcomeStatus.ACK)
            return CommandOutcome(status, waiter.frame, round_trip)

    def suspend_task(self, task_id: str) -> None:
        task = self._find_task(task_id)
        task.suspend()
        log.info("task_suspended task=%s", task_id)
        self._notify_task(task_id, TaskState.SUSPENDED)

    def resume_task(self, task_id: str) -> None:
        task = self._find_task(task_id)
        task.resume()
        log.info("task_resumed task=%s", task_id)
        self._notify_task(task_id, TaskState.RUNNING)

    def _find_task(self, task_id: str) -> _PortTask:
        task = self._tasks.get(task_id)
        if task is None:
            raise UnknownTaskError(f"unknown task {task_id!r}")
        return task

    def snapshot(self) -> Snapshot:
        tasks = []
        for task in self._tasks.values():
            stats = task.deframer.stats
            tasks.append(TaskDescriptor(
                task_id=task.task_id, port_id=task.port_id,
                dev_id=task.device.descriptor.dev_id, state=task.state,
                frames_ok=stats.frames_ok, crc_errors=stats.crc_errors,
                resyncs=stats.resyncs, stale_frames=task.stale_frames,
                last_activity_ms=task.last_activity_ms))
        for poller in self._pollers:
            tasks.append(TaskDescriptor(
                task_id=poller.task_id, port_id=self._devices[poller.dev_id].descriptor.port_id,
                dev_id=poller.dev_id, state=poller.state))
        with self._stats_lock:
            devices = [
                DeviceSummary(**vars(ctx.summary))
                for ctx in sorted(self._devices.values(), key=lambda c: c.descriptor.dev_id)
            ]
        return Snapshot(
            tasks=tasks, devices=devices,
            store_records=self.store.record_count if self.store else 0,
            store_bytes=self.store.size_bytes if self.store else 0,
            store_path=str(self.store.path) if self.store else "")

    # -- listeners (ground link) ---------------------------------------------

    def add_telemetry_listener(self, fn) -> None:
        """fn(dev_id, seq, timestamp_ms, payload) on every received TLM."""
        self._telemetry_listeners.append(fn)

    def add_task_listener(self, fn) -> None:
        """fn(task_id, state) on operator-driven task state changes."""
        self._task_listeners.append(fn)

    def _ingest_telemetry(self, ctx: _DeviceCtx, frame: Frame, now_ms: int) -> None:
        try:
            self.store.append(TelemetryRecord(frame.dev_id, frame.ftype, now_ms, frame.payload))
        except Exception:
            log.exception("store_append_failed dev=%d", frame.dev_id)
        with self._stats_lock:
            ctx.summary.last_tlm_ms = now_ms
            ctx.summary.last_tlm_hex = frame.payload.hex()
        for fn in self._telemetry_listeners:
            try:
                fn(frame.dev_id, frame.seq, now_ms, frame.payload)
            except Exception:
                log.exception("telemetry_listener_failed")

    def _notify_task(self, task_id: str, state: TaskState) -> None:
        for fn in self._task_listeners:
            try:
                fn(task_id, state)
            except Exception:
                log.exception("task_listener_failed")

    def decode_payload(self, dev_id: int, payload: bytes) -> dict:
        ctx = self._devices.get(dev_id)
        if ctx is None:
            return {}
        return decode_telemetry(ctx.descriptor.kind, payload)

    def device_ids(self) -> list[int]:
        return sorted(self._devices)

    def task_ids(self) -> list[str]:
        return list(self._tasks)


class _PollTask:
    """Optional housekeeping poller: periodic GET_TLM to one device."""

    def __init__(self, supervisor: Supervisor, dev_id: int, period_s: float):
        self.supervisor = supervisor
        self.dev_id = dev_id
        self.period_s = period_s
        self.task_id = f"poll-dev{dev_id}"
        self.state = TaskState.SLEEPING
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, name=self.task_id, daemon=True)

    def start(self) -> None:
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        self._thread.join(timeout=2.0)

    def _run(self) -> None:
        while not self._stop.wait(self.period_s):
            self.state = TaskState.RUNNING
            try:
                self.supervisor.dispatch_command(self.dev_id, GET_TLM)
            except SupervisorError:
                return
            self.state = TaskState.SLEEPING


def start(config: RunConfig) -> Supervisor:
    """Bring up the whole OBDH per the run configuration."""
    return Supervisor(config).start()
