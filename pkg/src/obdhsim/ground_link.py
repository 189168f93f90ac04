"""Operator-facing network endpoint: commands, live telemetry, queries.

Wire protocol: UTF-8 JSON objects over TCP, one object per line.  The
same listener also accepts a browser WebSocket handshake (HTTP Upgrade on
the first line); after the 101 response each text frame carries exactly
one JSON object with the identical schema, so the CLI and the web console
speak one protocol.

Requests (op field selects the kind):
    {"op":"ping"}
    {"op":"send_cmd","dev":1,"code":"GET_TLM","params_hex":"","timeout_ms":1000}
    {"op":"subscribe","dev":4}        dev may be "all"
    {"op":"unsubscribe","dev":4}
    {"op":"task","action":"suspend","task_id":"rx-ttyOS2"}
    {"op":"status"}
    {"op":"store_query","dev":4,"t0":0,"t1":9999999999999}

Replies/streams: pong, cmd_result, subscribed/unsubscribed, task_result,
status_report, store_batch (done flag on the last), error (names the
offending field), telemetry (to subscribers), task_event (broadcast on
operator task actions).  Hex fields are lowercase without separators;
raw payload hex is always present next to any decoded view.

A malformed request produces an error reply, never a disconnect.  Each
session has a bounded outbound queue (default 10,000 events); a session
too slow to drain it is dropped so it can never stall the OBDH or other
sessions.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import socket
import struct
import threading
import time
from collections import deque

from .obdh_supervisor import OutcomeStatus, Supervisor, UnknownDeviceError, UnknownTaskError
from .subsystem_sims import COMMAND_NAMES

log = logging.getLogger("obdhsim.ground_link")

MAX_QUEUE = 10_000
STORE_BATCH = 500
_WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"


class ProtocolError(Exception):
    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


def _parse_code(value) -> int:
    if isinstance(value, int):
        code = value
    elif isinstance(value, str):
        if value in COMMAND_NAMES:
            return COMMAND_NAMES[value]
        try:
            code = int(value, 0)
        except ValueError:
            raise ProtocolError(f"unknown command code {value!r}", field="code")
    else:
        raise ProtocolError("code must be a name or an integer", field="code")
    if not 0 <= code <= 255:
        raise ProtocolError(f"code {code} outside 0-255", field="code")
    return code


class _Session:
    _next_id = 0
    _id_lock = threading.Lock()

    def __init__(self, link: "GroundLink", sock: socket.socket):
        with _Session._id_lock:
            _Session._next_id += 1
            self.session_id = _Session._next_id
        self.link = link
        self.sock = sock
        self.subscriptions: set[int] = set()
        self.subscribe_all = False
        self._queue: deque = deque()
        self._cond = threading.Condition()
        self._sending = False
        self._dead = False
        self._websocket = False
        self._recv_buffer = b""

    # -- outbound ----------------------------------------------------------

    def enqueue(self, message: dict) -> None:
        with self._cond:
            if self._dead:
                return
            if len(self._queue) >= self.link.max_queue:
                # slow consumer: drop the session, never stall the OBDH
                self._dead = True
                self._cond.notify_all()
                log.warning("session_dropped session=%d reason=queue_overflow",
                            self.session_id)
                return
            self._queue.append(message)
            self._cond.notify_all()

    def _enqueue_ws_control(self, opcode: int, payload: bytes) -> None:
        # control frames share the writer thread so ws frames never interleave
        with self._cond:
            if not self._dead:
                self._queue.append((opcode, payload))
                self._cond.notify_all()

    def _writer_loop(self) -> None:
        while True:
            with self._cond:
                self._sending = False
                self._cond.notify_all()  # wake drain waiters
                while not self._queue and not self._dead:
                    self._cond.wait()
                if self._dead and not self._queue:
                    break
                message = self._queue.popleft()
                self._sending = True
            try:
                self._send(message)
            except OSError:
                self.kill()
                break
        with self._cond:
            self._sending = False
            self._cond.notify_all()
        try:
            self.sock.close()
        except OSError:
            pass

    def _drain_outbound(self, timeout: float) -> None:
        deadline = time.monotonic() + timeout
        with self._cond:
            while ((self._queue or self._sending) and not self._dead
                   and time.monotonic() < deadline):
                self._cond.wait(0.05)

    def _send(self, message) -> None:
        if isinstance(message, tuple):  # (opcode, payload) websocket control
            self.sock.sendall(_ws_encode(*message))
            return
        data = json.dumps(message, separators=(",", ":")).encode()
        if self._websocket:
            self.sock.sendall(_ws_encode_text(data))
        else:
            self.sock.sendall(data + b"\n")

    def kill(self) -> None:
        with self._cond:
            self._dead = True
            self._cond.notify_all()
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass

    @property
    def dead(self) -> bool:
        return self._dead

    # -- inbound -----------------------------------------------------------

    def _recv_exact(self, n: int) -> bytes:
        while len(self._recv_buffer) < n:
            chunk = self.sock.recv(4096)
            if not chunk:
                raise ConnectionError("peer closed")
            self._recv_buffer += chunk
        out, self._recv_buffer = self._recv_buffer[:n], self._recv_buffer[n:]
        return out

    def _recv_line(self) -> bytes:
        while b"\n" not in self._recv_buffer:
            if len(self._recv_buffer) > 1 << 20:
                raise ConnectionError("request line too long")
            chunk = self.sock.recv(4096)
            if not chunk:
                raise ConnectionError("peer closed")
            self._recv_buffer += chunk
        line, _, self._recv_buffer = self._recv_buffer.partition(b"\n")
        return line.rstrip(b"\r")

    def _reader_loop(self) -> None:
        try:
            first = self._recv_line()
            if first.startswith(b"GET "):
                self._websocket_handshake(first)
                self._websocket = True
                self._read_websocket()
            else:
                if first.strip():
                    self._handle_line(first)
                while not self._dead:
                    self._handle_line(self._recv_line())
        except (ConnectionError, OSError):
            pass
        except Exception:
            log.exception("session_failed session=%d", self.session_id)
        finally:
            self.kill()
            self.link._forget(self)

    def _handle_line(self, line: bytes) -> None:
        if not line.strip():
            return
        try:
            message = json.loads(line)
            if not isinstance(message, dict):
                raise ValueError("not an object")
        except ValueError:
            self.enqueue({"op": "error", "message": "request is not a JSON object"})
            return
        self.link.handle_request(self, message)

    # -- websocket transport ----------------------------------------------

    def _websocket_handshake(self, request_line: bytes) -> None:
        headers = {}
        while True:
            line = self._recv_line()
            if not line:
                break
            name, _, value = line.decode("latin-1").partition(":")
            headers[name.strip().lower()] = value.strip()
        key = headers.get("sec-websocket-key")
        if headers.get("upgrade", "").lower() != "websocket" or not key:
            self.sock.sendall(b"HTTP/1.1 400 Bad Request\r\n\r\n")
            raise ConnectionError("not a websocket upgrade")
        accept = base64.b64encode(
            hashlib.sha1((key + _WS_GUID).encode()).digest()).decode()
        self.sock.sendall(
            b"HTTP/1.1 101 Switching Protocols\r\n"
            b"Upgrade: websocket\r\n"
            b"Connection: Upgrade\r\n"
            b"Sec-WebSocket-Accept: " + accept.encode() + b"\r\n\r\n")

    def _read_websocket(self) -> None:
        fragments = b""
        while not self._dead:
            fin, opcode, payload = self._read_ws_frame()
            if opcode == 0x8:  # close
                self._enqueue_ws_control(0x8, payload[:2])
                self._drain_outbound(0.5)
                return
            if opcode == 0x9:  # ping -> pong
                self._enqueue_ws_control(0xA, payload)
                continue
            if opcode == 0xA:  # unsolicited pong
                continue
            if opcode in (0x0, 0x1, 0x2):
                fragments += payload
                if fin:
                    self._handle_line(fragments)
                    fragments = b""

    def _read_ws_frame(self) -> tuple[bool, int, bytes]:
        head = self._recv_exact(2)
        fin = bool(head[0] & 0x80)
        opcode = head[0] & 0x0F
        masked = bool(head[1] & 0x80)
        length = head[1] & 0x7F
        if length == 126:
            length = struct.unpack(">H", self._recv_exact(2))[0]
        elif length == 127:
            length = struct.unpack(">Q", self._recv_exact(8))[0]
        if length > 1 << 20:
            raise ConnectionError("websocket frame too large")
        mask = self._recv_exact(4) if masked else b""
        payload = self._recv_exact(length)
        if masked:
            payload = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
        return fin, opcode, payload


def _ws_encode(opcode: int, payload: bytes) -> bytes:
    head = bytes([0x80 | opcode])
    n = len(payload)
    if n < 126:
        head += bytes([n])
    elif n < 1 << 16:
        head += bytes([126]) + struct.pack(">H", n)
    else:
        head += bytes([127]) + struct.pack(">Q", n)
    return head + payload


def _ws_encode_text(payload: bytes) -> bytes:
    return _ws_encode(0x1, payload)


class GroundLink:
    """TCP listener bridging operator sessions to the supervisor."""

    def __init__(self, supervisor: Supervisor, host: str = "127.0.0.1",
                 port: int = 0, max_queue: int = MAX_QUEUE):
        self.supervisor = supervisor
        self.max_queue = max_queue
        self._listen_sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listen_sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listen_sock.bind((host, port))
        self._sessions: set[_Session] = set()
        self._sessions_lock = threading.Lock()
        self._closed = False
        self._accept_thread: threading.Thread | None = None
        supervisor.add_telemetry_listener(self._on_telemetry)
        supervisor.add_task_listener(self._on_task_event)

    @property
    def address(self) -> tuple[str, int]:
        return self._listen_sock.getsockname()[:2]

    def serve(self) -> "GroundLink":
        self._listen_sock.listen(16)
        self._accept_thread = threading.Thread(
            target=self._accept_loop, name="ground-link-accept", daemon=True)
        self._accept_thread.start()
        return self

    def close(self) -> None:
        self._closed = True
        try:
            self._listen_sock.close()
        except OSError:
            pass
        with self._sessions_lock:
            sessions = list(self._sessions)
        for session in sessions:
            session.kill()

    def _accept_loop(self) -> None:
        while not self._closed:
            try:
                sock, addr = self._listen_sock.accept()
            except OSError:
                return
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            session = _Session(self, sock)
            with self._sessions_lock:
                self._sessions.add(session)
            log.info("session_opened session=%d peer=%s:%d", session.session_id, *addr[:2])
            threading.Thread(target=session._writer_loop, daemon=True,
                             name=f"gl-w-{session.session_id}").start()
            threading.Thread(target=session._reader_loop, daemon=True,
                             name=f"gl-r-{session.session_id}").start()

    def _forget(self, session: _Session) -> None:
        with self._sessions_lock:
            self._sessions.discard(session)
        log.info("session_closed session=%d", session.session_id)

    # -- supervisor event fan-out -------------------------------------------

    def _on_telemetry(self, dev_id: int, seq: int, timestamp_ms: int, payload: bytes) -> None:
        message = None
        with self._sessions_lock:
            sessions = list(self._sessions)
        for session in sessions:
            if session.subscribe_all or dev_id in session.subscriptions:
                if message is None:
                    message = {
                        "op": "telemetry", "dev": dev_id, "seq": seq,
                        "timestamp_ms": timestamp_ms, "raw_hex": payload.hex(),
                        "decoded": self.supervisor.decode_payload(dev_id, payload),
                    }
                session.enqueue(message)

    def _on_task_event(self, task_id: str, state) -> None:
        with self._sessions_lock:
            sessions = list(self._sessions)
        for session in sessions:
            session.enqueue({"op": "task_event", "task_id": task_id,
                             "state": state.value})

    # -- request handling ------------------------------------------------------

    def handle_request(self, session: _Session, message: dict) -> None:
        op = message.get("op")
        handler = {
            "ping": self._op_ping,
            "send_cmd": self._op_send_cmd,
            "subscribe": self._op_subscribe,
            "unsubscribe": self._op_unsubscribe,
            "task": self._op_task,
            "status": self._op_status,
            "store_query": self._op_store_query,
        }.get(op)
        if handler is None:
            session.enqueue({"op": "error", "message": f"unknown op {op!r}", "field": "op"})
            return
        try:
            handler(session, message)
        except ProtocolError as e:
            reply = {"op": "error", "message": str(e)}
            if e.field:
                reply["field"] = e.field
            session.enqueue(reply)
        except Exception:
            log.exception("request_failed op=%s", op)
            session.enqueue({"op": "error", "message": "internal error"})

    def _op_ping(self, session: _Session, message: dict) -> None:
        session.enqueue({"op": "pong"})

    def _require_dev(self, message: dict) -> int:
        dev = message.get("dev")
        if not isinstance(dev, int):
            raise ProtocolError("dev must be an integer", field="dev")
        return dev

    def _op_send_cmd(self, session: _Session, message: dict) -> None:
        dev = self._require_dev(message)
        code = _parse_code(message.get("code", "GET_TLM"))
        params_hex = message.get("params_hex", "") or ""
        try:
            params = bytes.fromhex(params_hex)
        except ValueError:
            raise ProtocolError(f"params_hex is not valid hex: {params_hex!r}",
                                field="params_hex")
        timeout = float(message.get("timeout_ms", 1000)) / 1000.0
        try:
            outcome = self.supervisor.dispatch_command(dev, code, params, timeout=timeout)
        except UnknownDeviceError:
            raise ProtocolError(f"unknown device {dev}", field="dev")
        reply = {
            "op": "cmd_result",
            "dev": dev,
            "code": code,
            "status": outcome.status.value,
            "round_trip_ms": round(outcome.round_trip * 1000.0, 3),
        }
        frame = outcome.response_frame
        if frame is not None:
            reply["seq"] = frame.seq
            reply["ftype"] = frame.ftype.name
            reply["raw_hex"] = frame.payload.hex()
            if outcome.status is OutcomeStatus.ACK:
                decoded = self.supervisor.decode_payload(dev, frame.payload)
                if decoded:
                    reply["decoded"] = decoded
        session.enqueue(reply)

    def _op_subscribe(self, session: _Session, message: dict) -> None:
        dev = message.get("dev", "all")
        if dev == "all":
            session.subscribe_all = True
        elif isinstance(dev, int):
            session.subscriptions.add(dev)
        else:
            raise ProtocolError('dev must be an integer or "all"', field="dev")
        session.enqueue({"op": "subscribed", "dev": dev})

    def _op_unsubscribe(self, session: _Session, message: dict) -> None:
        dev = message.get("dev", "all")
        if dev == "all":
            session.subscribe_all = False
            session.subscriptions.clear()
        elif isinstance(dev, int):
            session.subscriptions.discard(dev)
        else:
            raise ProtocolError('dev must be an integer or "all"', field="dev")
        session.enqueue({"op": "unsubscribed", "dev": dev})

    def _op_task(self, session: _Session, message: dict) -> None:
        action = message.get("action")
        task_id = message.get("task_id")
        if action not in ("suspend", "resume"):
            raise ProtocolError('action must be "suspend" or "resume"', field="action")
        if not isinstance(task_id, str):
            raise ProtocolError("task_id must be a string", field="task_id")
        try:
            if action == "suspend":
                self.supervisor.suspend_task(task_id)
            else:
                self.supervisor.resume_task(task_id)
        except UnknownTaskError:
            raise ProtocolError(f"unknown task {task_id!r}", field="task_id")
        state = next(t.state for t in self.supervisor.snapshot().tasks
                     if t.task_id == task_id)
        session.enqueue({"op": "task_result", "task_id": task_id, "state": state.value})

    def _op_status(self, session: _Session, message: dict) -> None:
        report = self.supervisor.snapshot().to_json()
        report["op"] = "status_report"
        session.enqueue(report)

    def _op_store_query(self, session: _Session, message: dict) -> None:
        dev = message.get("dev")
        if dev is not None and not isinstance(dev, int):
            raise ProtocolError("dev must be an integer or absent", field="dev")
        t0 = message.get("t0", 0)
        t1 = message.get("t1", 2**63 - 1)
        if not isinstance(t0, int) or not isinstance(t1, int):
            raise ProtocolError("t0/t1 must be integers (ms)", field="t0")
        if t0 > t1:
            raise ProtocolError(f"t0 > t1 ({t0} > {t1})", field="t0")
        records = self.supervisor.store.query(dev, t0, t1)
        for start in range(0, max(len(records), 1), STORE_BATCH):
            batch = records[start:start + STORE_BATCH]
            session.enqueue({
                "op": "store_batch",
                "records": [
                    {"dev": r.dev_id, "timestamp_ms": r.timestamp_ms,
                     "payload_hex": r.payload.hex()}
                    for r in batch
                ],
                "done": start + STORE_BATCH >= len(records),
            })
