"""CLI tests: subcommands, exit codes, end-to-end run process."""

import json
import signal
import socket
import subprocess
import sys
import time

import pytest

from obdhsim import config as config_mod
from obdhsim.cli import main
from obdhsim.frame_codec import FrameType
from obdhsim.telemetry_store import TelemetryRecord, TelemetryStore, scan_file


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


class TestDemoReentrancy:
    def test_safe_mode_rate_zero(self, capsys):
        rc = main(["demo-reentrancy", "--mode", "safe", "--writers", "2",
                   "--messages", "1000"])
        assert rc == 0
        report = json.loads(capsys.readouterr().out)
        assert report["corruption_rate"] == 0.0

    def test_unsafe_seed42_golden(self, capsys):
        rc = main(["demo-reentrancy", "--mode", "unsafe", "--writers", "2",
                   "--chunk", "1", "--messages", "1000", "--seed", "42"])
        assert rc == 0
        report = json.loads(capsys.readouterr().out)
        # frozen golden report for this seed
        assert report["messages_total"] == 2000
        assert report["messages_corrupted"] == 2000
        assert report["first_corruption_example"] == "AabcdBefCDEgFGhHijklImJKnL"

    def test_single_writer_unsafe_rate_zero(self, capsys):
        rc = main(["demo-reentrancy", "--mode", "unsafe", "--writers", "1"])
        assert rc == 0
        assert json.loads(capsys.readouterr().out)["corruption_rate"] == 0.0

    def test_overlapping_alphabet_count_rejected(self, capsys):
        rc = main(["demo-reentrancy", "--writers", "99"])
        assert rc == 2


class TestDumpStore:
    def test_empty_store(self, tmp_path, capsys):
        path = tmp_path / "t.dat"
        TelemetryStore.open(path).close()
        assert main(["dump-store", str(path)]) == 0
        assert capsys.readouterr().out == ""

    def test_filter_matches_query_oracle(self, tmp_path, capsys):
        path = tmp_path / "t.dat"
        store = TelemetryStore.open(path)
        for i in range(12):
            store.append(TelemetryRecord(4 if i % 2 else 1, FrameType.TLM, i, bytes([i])))
        expected = store.query(dev_id=4)
        store.close()
        assert main(["dump-store", str(path), "--dev", "4"]) == 0
        lines = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
        assert len(lines) == len(expected) == 6
        for line, record in zip(lines, expected):
            assert line["dev"] == record.dev_id
            assert line["payload_hex"] == record.payload.hex()

    def test_truncated_tail_diagnostic_on_stderr(self, tmp_path, capsys):
        path = tmp_path / "t.dat"
        store = TelemetryStore.open(path)
        store.append(TelemetryRecord(1, FrameType.TLM, 0, b"full"))
        store.close()
        blob = path.read_bytes()
        path.write_bytes(blob + blob[:7])  # partial extra record
        assert main(["dump-store", str(path)]) == 0
        captured = capsys.readouterr()
        assert len(captured.out.splitlines()) == 1
        assert "truncated tail: 7 bytes" in captured.err


class TestSendErrors:
    def test_connection_refused_exit_code(self, capsys):
        rc = main(["send", "1", "GET_TLM", "--address",
                   f"127.0.0.1:{free_port()}", "--timeout", "0.5"])
        assert rc == 3

    def test_run_with_bad_config_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({
            "roster": [
                {"dev_id": 1, "kind": "WDE", "port_id": "ttyOS0", "line_mode": "TTL"},
                {"dev_id": 1, "kind": "WDE", "port_id": "ttyOS1", "line_mode": "TTL"},
            ]}))
        rc = main(["run", "--config", str(bad)])
        assert rc == 2
        assert "duplicate dev_id 1" in capsys.readouterr().err


@pytest.fixture
def running_obdh(tmp_path):
    """A real `obdhsim run` process with STS streaming, on an ephemeral port."""
    port = free_port()
    config = config_mod.default_config(
        store_path=str(tmp_path / "t.dat"),
        ground_listen=f"127.0.0.1:{port}",
        pacing_enabled=False)
    config.roster[3].stream_hz = 50.0
    config_path = tmp_path / "config.json"
    config_path.write_text(config_mod.to_json(config))
    proc = subprocess.Popen(
        [sys.executable, "-m", "obdhsim.cli", "run", "--config", str(config_path)],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
    # wait until the ground link accepts connections
    deadline = time.monotonic() + 10.0
    while time.monotonic() < deadline:
        try:
            socket.create_connection(("127.0.0.1", port), timeout=0.2).close()
            break
        except OSError:
            time.sleep(0.05)
    else:
        proc.kill()
        raise RuntimeError("obdhsim run did not come up")
    yield proc, port, tmp_path / "t.dat"
    if proc.poll() is None:
        proc.kill()
        proc.wait()


class TestRunProcess:
    def test_startup_logs_one_line_per_task(self, running_obdh):
        proc, port, store_path = running_obdh
        rc = main(["send", "1", "GET_TLM", "--address", f"127.0.0.1:{port}"])
        assert rc == 0
        proc.send_signal(signal.SIGINT)
        proc.wait(timeout=10)
        stderr = proc.stderr.read()
        assert stderr.count("task_started") == 7
        assert "ground_link_listening" in stderr

    def test_send_round_trip_and_exit_codes(self, running_obdh, capsys):
        proc, port, _ = running_obdh
        rc = main(["send", "1", "GET_TLM", "--address", f"127.0.0.1:{port}"])
        assert rc == 0
        reply = json.loads(capsys.readouterr().out)
        assert reply["status"] == "ack"
        assert len(reply["raw_hex"]) == 64
        rc = main(["send", "9", "GET_TLM", "--address", f"127.0.0.1:{port}"])
        assert rc == 1
        assert "unknown device" in json.loads(capsys.readouterr().out)["message"]

    def test_set_speed_converges_via_cli(self, running_obdh, capsys):
        proc, port, _ = running_obdh
        rc = main(["send", "2", "SET_SPEED", "000003e8",
                   "--address", f"127.0.0.1:{port}"])
        assert rc == 0
        capsys.readouterr()
        deadline = time.monotonic() + 10.0
        speed = None
        while time.monotonic() < deadline:
            assert main(["send", "2", "GET_TLM", "--address", f"127.0.0.1:{port}"]) == 0
            reply = json.loads(capsys.readouterr().out)
            speed = reply["decoded"]["wheel_speed_rpm"]
            if speed == 1000:
                break
            time.sleep(0.2)
        assert speed == 1000

    def test_interrupt_during_streaming_recovers_clean(self, running_obdh):
        proc, port, store_path = running_obdh
        time.sleep(1.0)  # let the STS stream build up store traffic
        proc.send_signal(signal.SIGINT)
        proc.wait(timeout=10)
        scan = scan_file(store_path)
        assert len(scan.records) > 20
        assert scan.unrecovered_bytes == 0
        assert scan.truncated_tail_bytes == 0  # clean shutdown flushed
        # restart continues sequence numbers after recovery
        store, report = TelemetryStore.recover(store_path)
        assert report.records_recovered == len(scan.records)
        assert store.append(TelemetryRecord(4, FrameType.TLM, 0, b"")) == len(scan.records)
        store.close()
