"""Ground link protocol tests over real sockets."""

import base64
import hashlib
import json
import os
import socket
import struct
import threading
import time

import pytest

from obdhsim.config import default_config
from obdhsim.ground_link import GroundLink
from obdhsim.obdh_supervisor import Supervisor

WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"


class LineClient:
    """Newline-delimited JSON test client."""

    def __init__(self, address):
        self.sock = socket.create_connection(address, timeout=5)
        self.buf = b""

    def send(self, obj):
        self.sock.sendall(json.dumps(obj).encode() + b"\n")

    def send_raw(self, data: bytes):
        self.sock.sendall(data)

    def recv(self, timeout=5.0):
        self.sock.settimeout(timeout)
        while b"\n" not in self.buf:
            chunk = self.sock.recv(4096)
            if not chunk:
                raise ConnectionError("closed")
            self.buf += chunk
        line, _, self.buf = self.buf.partition(b"\n")
        return json.loads(line)

    def recv_op(self, op, timeout=5.0, collect=None):
        """Read until a message with the given op arrives."""
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            msg = self.recv(timeout=deadline - time.monotonic())
            if msg.get("op") == op:
                return msg
            if collect is not None:
                collect.append(msg)
        raise TimeoutError(f"no {op} within {timeout}s")

    def close(self):
        self.sock.close()


class WsClient:
    """Minimal RFC6455 client: masked text frames, one JSON object each."""

    def __init__(self, address):
        self.sock = socket.create_connection(address, timeout=5)
        self.buf = b""
        key = base64.b64encode(os.urandom(16)).decode()
        self.sock.sendall(
            f"GET / HTTP/1.1\r\nHost: x\r\nUpgrade: websocket\r\n"
            f"Connection: Upgrade\r\nSec-WebSocket-Key: {key}\r\n"
            f"Sec-WebSocket-Version: 13\r\n\r\n".encode())
        response = b""
        while b"\r\n\r\n" not in response:
            response += self.sock.recv(4096)
        head, _, self.buf = response.partition(b"\r\n\r\n")
        assert b"101" in head.split(b"\r\n")[0]
        accept = [l for l in head.split(b"\r\n") if l.lower().startswith(b"sec-websocket-accept")]
        expected = base64.b64encode(hashlib.sha1((key + WS_GUID).encode()).digest())
        assert accept[0].split(b":")[1].strip() == expected

    def _recv_exact(self, n):
        while len(self.buf) < n:
            chunk = self.sock.recv(4096)
            if not chunk:
                raise ConnectionError("closed")
            self.buf += chunk
        out, self.buf = self.buf[:n], self.buf[n:]
        return out

    def send_frame(self, payload: bytes, opcode=0x1):
        mask = os.urandom(4)
        head = bytes([0x80 | opcode])
        n = len(payload)
        if n < 126:
            head += bytes([0x80 | n])
        else:
            head += bytes([0x80 | 126]) + struct.pack(">H", n)
        masked = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
        self.sock.sendall(head + mask + masked)

    def send(self, obj):
        self.send_frame(json.dumps(obj).encode())

    def recv_frame(self, timeout=5.0):
        self.sock.settimeout(timeout)
        head = self._recv_exact(2)
        opcode = head[0] & 0x0F
        length = head[1] & 0x7F
        if length == 126:
            length = struct.unpack(">H", self._recv_exact(2))[0]
        elif length == 127:
            length = struct.unpack(">Q", self._recv_exact(8))[0]
        return opcode, self._recv_exact(length)

    def recv(self, timeout=5.0):
        opcode, payload = self.recv_frame(timeout)
        assert opcode == 0x1
        return json.loads(payload)

    def close(self):
        self.sock.close()


@pytest.fixture
def system(tmp_path):
    config = default_config(store_path=str(tmp_path / "t.dat"),
                            ground_listen=None, pacing_enabled=False)
    supervisor = Supervisor(config).start()
    link = GroundLink(supervisor, "127.0.0.1", 0).serve()
    yield supervisor, link
    link.close()
    supervisor.stop()


class TestBasics:
    def test_address_in_use_is_startup_error(self, system):
        supervisor, link = system
        with pytest.raises(OSError):
            GroundLink(supervisor, link.address[0], link.address[1])

    def test_ping_pong(self, system):
        _, link = system
        c = LineClient(link.address)
        c.send({"op": "ping"})
        assert c.recv() == {"op": "pong"}
        c.close()

    def test_send_cmd_get_tlm(self, system):
        _, link = system
        c = LineClient(link.address)
        c.send({"op": "send_cmd", "dev": 1, "code": "GET_TLM"})
        reply = c.recv()
        assert reply["op"] == "cmd_result"
        assert reply["status"] == "ack"
        assert len(reply["raw_hex"]) == 64  # 32-byte payload
        assert "wheel_speed_rpm" in reply["decoded"]
        assert reply["round_trip_ms"] > 0
        c.close()

    def test_unknown_device_error(self, system):
        _, link = system
        c = LineClient(link.address)
        c.send({"op": "send_cmd", "dev": 9, "code": "GET_TLM"})
        reply = c.recv()
        assert reply["op"] == "error"
        assert "unknown device" in reply["message"]
        assert reply["field"] == "dev"
        c.close()

    def test_bad_requests_never_kill_session(self, system):
        _, link = system
        c = LineClient(link.address)
        c.send_raw(b"this is not json\n")
        assert c.recv()["op"] == "error"
        c.send({"op": "nonsense"})
        assert c.recv()["field"] == "op"
        c.send({"op": "send_cmd", "dev": "one"})
        assert c.recv()["field"] == "dev"
        c.send({"op": "send_cmd", "dev": 1, "params_hex": "xyz"})
        assert c.recv()["field"] == "params_hex"
        c.send({"op": "ping"})  # session still alive
        assert c.recv() == {"op": "pong"}
        c.close()

    def test_status_report(self, system):
        _, link = system
        c = LineClient(link.address)
        c.send({"op": "status"})
        report = c.recv()
        assert report["op"] == "status_report"
        assert len(report["tasks"]) == 7
        assert {t["state"] for t in report["tasks"]} == {"RUNNING"}
        assert len(report["devices"]) == 7
        c.close()


class TestSubscriptions:
    def test_per_device_filtering(self, system):
        supervisor, link = system
        a = LineClient(link.address)
        b = LineClient(link.address)
        a.send({"op": "subscribe", "dev": 4})
        assert a.recv()["op"] == "subscribed"
        b.send({"op": "subscribe", "dev": 1})
        assert b.recv()["op"] == "subscribed"
        supervisor.dispatch_command(4, 0x10)
        supervisor.dispatch_command(1, 0x10)
        tlm_a = a.recv_op("telemetry")
        tlm_b = b.recv_op("telemetry")
        assert tlm_a["dev"] == 4
        assert tlm_b["dev"] == 1
        assert "quaternion" in tlm_a["decoded"]
        a.close(); b.close()

    def test_unsubscribe_stops_events(self, system):
        supervisor, link = system
        c = LineClient(link.address)
        c.send({"op": "subscribe", "dev": 6})
        c.recv_op("subscribed")
        supervisor.dispatch_command(6, 0x10)
        c.recv_op("telemetry")
        c.send({"op": "unsubscribe", "dev": 6})
        c.recv_op("unsubscribed")
        supervisor.dispatch_command(6, 0x10)
        c.send({"op": "ping"})
        assert c.recv_op("pong", timeout=2.0)  # pong arrives with no telemetry before it
        c.close()

    def test_subscribe_all(self, system):
        supervisor, link = system
        c = LineClient(link.address)
        c.send({"op": "subscribe", "dev": "all"})
        c.recv_op("subscribed")
        for dev in (1, 4, 7):
            supervisor.dispatch_command(dev, 0x10)
        seen = {c.recv_op("telemetry")["dev"] for _ in range(3)}
        assert seen == {1, 4, 7}
        c.close()


class TestTaskControl:
    def test_suspend_resume_round_trip(self, system):
        _, link = system
        c = LineClient(link.address)
        c.send({"op": "task", "action": "suspend", "task_id": "rx-ttyOS2"})
        events = []
        result = c.recv_op("task_result", collect=events)
        assert result["state"] == "SUSPENDED"
        c.send({"op": "send_cmd", "dev": 3, "code": "GET_TLM"})
        reply = c.recv_op("cmd_result")
        assert reply["status"] == "port_suspended"
        c.send({"op": "task", "action": "resume", "task_id": "rx-ttyOS2"})
        assert c.recv_op("task_result")["state"] == "RUNNING"
        c.send({"op": "send_cmd", "dev": 3, "code": "GET_TLM"})
        assert c.recv_op("cmd_result")["status"] == "ack"
        c.close()

    def test_task_event_broadcast(self, system):
        _, link = system
        a = LineClient(link.address)
        b = LineClient(link.address)
        a.send({"op": "ping"}); a.recv()
        b.send({"op": "ping"}); b.recv()
        a.send({"op": "task", "action": "suspend", "task_id": "rx-ttyOS1"})
        assert b.recv_op("task_event")["task_id"] == "rx-ttyOS1"
        a.send({"op": "task", "action": "resume", "task_id": "rx-ttyOS1"})
        a.close(); b.close()

    def test_unknown_task(self, system):
        _, link = system
        c = LineClient(link.address)
        c.send({"op": "task", "action": "suspend", "task_id": "rx-bogus"})
        assert c.recv()["field"] == "task_id"
        c.close()


class TestStoreQuery:
    def test_query_round_trip(self, system):
        supervisor, link = system
        for _ in range(5):
            supervisor.dispatch_command(4, 0x10)
        c = LineClient(link.address)
        c.send({"op": "store_query", "dev": 4, "t0": 0, "t1": 2**62})
        batch = c.recv_op("store_batch")
        assert batch["done"] is True
        assert len(batch["records"]) == 5
        assert all(r["dev"] == 4 for r in batch["records"])
        c.close()

    def test_inverted_range_rejected(self, system):
        _, link = system
        c = LineClient(link.address)
        c.send({"op": "store_query", "t0": 10, "t1": 5})
        assert c.recv()["op"] == "error"
        c.close()

    def test_empty_store_query(self, system):
        _, link = system
        c = LineClient(link.address)
        c.send({"op": "store_query", "t0": 0, "t1": 1})
        batch = c.recv_op("store_batch")
        assert batch["records"] == [] and batch["done"] is True
        c.close()


class TestConcurrencyAndBackpressure:
    def test_ten_concurrent_sessions(self, system):
        _, link = system
        results = {}

        def worker(i):
            c = LineClient(link.address)
            dev = (i % 7) + 1
            c.send({"op": "send_cmd", "dev": dev, "code": "GET_TLM"})
            results[i] = (dev, c.recv_op("cmd_result"))
            c.close()

        threads = [threading.Thread(target=worker, args=(i,)) for i in range(10)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert len(results) == 10
        for i, (dev, reply) in results.items():
            assert reply["status"] == "ack", f"session {i}"
            assert reply["dev"] == dev

    def test_stalled_session_dropped_not_stalling_others(self, tmp_path):
        config = default_config(store_path=str(tmp_path / "t.dat"),
                                ground_listen=None, pacing_enabled=False)
        supervisor = Supervisor(config).start()
        link = GroundLink(supervisor, "127.0.0.1", 0, max_queue=50).serve()
        try:
            stalled = LineClient(link.address)
            stalled.send({"op": "subscribe", "dev": "all"})
            active = LineClient(link.address)
            # generate way more events than the stalled session's queue bound
            t0 = time.monotonic()
            for i in range(200):
                active.send({"op": "send_cmd", "dev": (i % 7) + 1, "code": "GET_TLM"})
                reply = active.recv_op("cmd_result")
                assert reply["status"] == "ack"
            elapsed = time.monotonic() - t0
            assert elapsed < 30.0  # active session was never stalled
            # the stalled session's socket ends up closed by the server
            stalled.sock.settimeout(5.0)
            with pytest.raises((ConnectionError, OSError)):
                while True:
                    if not stalled.sock.recv(1 << 16):
                        raise ConnectionError("closed")
        finally:
            link.close()
            supervisor.stop()


class TestWebSocket:
    def test_handshake_and_round_trip(self, system):
        _, link = system
        ws = WsClient(link.address)
        ws.send({"op": "ping"})
        assert ws.recv() == {"op": "pong"}
        ws.send({"op": "send_cmd", "dev": 1, "code": "GET_TLM"})
        reply = ws.recv()
        assert reply["op"] == "cmd_result" and reply["status"] == "ack"
        ws.close()

    def test_ws_ping_frame_answered_with_pong(self, system):
        _, link = system
        ws = WsClient(link.address)
        ws.send_frame(b"hello", opcode=0x9)
        opcode, payload = ws.recv_frame()
        assert opcode == 0xA and payload == b"hello"
        ws.close()

    def test_ws_telemetry_stream(self, system):
        supervisor, link = system
        ws = WsClient(link.address)
        ws.send({"op": "subscribe", "dev": 2})
        assert ws.recv()["op"] == "subscribed"
        supervisor.dispatch_command(2, 0x10)
        msg = ws.recv()
        assert msg["op"] == "telemetry" and msg["dev"] == 2
        ws.close()

    def test_ws_close_handshake(self, system):
        _, link = system
        ws = WsClient(link.address)
        ws.send_frame(struct.pack(">H", 1000), opcode=0x8)
        opcode, _ = ws.recv_frame()
        assert opcode == 0x8
