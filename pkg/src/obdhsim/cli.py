"""Command-line entry points.

Subcommands:
    run              bring up the OBDH (supervisor + ground link) from a config
    send             one-shot command through a running OBDH's ground link
    dump-store       print telemetry records from a store file as JSON lines
    demo-reentrancy  run the interleaved-writer corruption demo

Exit codes (distinct and stable for scripting):
    0  success / command ACKed
    1  command refused (NAK, suspended port, or server error reply)
    2  configuration or usage error
    3  connection error (no OBDH at the given address)
    4  command timeout
    5  internal error
"""

from __future__ import annotations

import argparse
import datetime
import json
import logging
import signal
import socket
import sys
import threading

from . import config as config_mod
from .config import ConfigError
from .reentrancy_lab import DemoConfig, DemoConfigError, run_demo, run_demo_host_threads
from .telemetry_store import scan_file

EXIT_OK = 0
EXIT_REFUSED = 1
EXIT_CONFIG = 2
EXIT_CONNECT = 3
EXIT_TIMEOUT = 4
EXIT_INTERNAL = 5


class _IsoFormatter(logging.Formatter):
    def formatTime(self, record, datefmt=None):
        return datetime.datetime.fromtimestamp(record.created).isoformat(timespec="milliseconds")


def _setup_logging(log_file: str | None) -> None:
    handler = (logging.FileHandler(log_file) if log_file
               else logging.StreamHandler(sys.stderr))
    handler.setFormatter(_IsoFormatter("%(asctime)s %(levelname)s %(name)s %(message)s"))
    root = logging.getLogger("obdhsim")
    root.setLevel(logging.INFO)
    root.addHandler(handler)


def cmd_run(args) -> int:
    from .obdh_supervisor import Supervisor

    _setup_logging(args.log_file)
    try:
        if args.config:
            run_config = config_mod.load_config(args.config)
        else:
            run_config = config_mod.default_config()
        if args.store:
            run_config.store_path = args.store
        if args.listen:
            run_config.ground_listen = args.listen
        supervisor = Supervisor(run_config).start()
    except (ConfigError, OSError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    stop = threading.Event()

    def on_signal(signum, frame):
        stop.set()

    signal.signal(signal.SIGINT, on_signal)
    signal.signal(signal.SIGTERM, on_signal)
    print(f"obdhsim up: {len(run_config.roster)} devices, "
          f"ground link {run_config.ground_listen or 'disabled'}, "
          f"store {run_config.store_path}", file=sys.stderr)
    stop.wait()
    supervisor.stop()  # flushes and closes the store
    return EXIT_OK


def _ground_request(address: str, request: dict, timeout: float):
    """One-shot ground link exchange; returns the first direct reply."""
    host, _, port = address.rpartition(":")
    sock = socket.create_connection((host or "127.0.0.1", int(port)), timeout=timeout)
    try:
        sock.sendall(json.dumps(request).encode() + b"\n")
        buf = b""
        while b"\n" not in buf:
            chunk = sock.recv(4096)
            if not chunk:
                raise ConnectionError("ground link closed the session")
            buf += chunk
        line = buf.partition(b"\n")[0]
        return json.loads(line)
    finally:
        sock.close()


def cmd_send(args) -> int:
    request = {"op": "send_cmd", "dev": args.dev, "code": args.code,
               "timeout_ms": int(args.timeout * 1000)}
    if args.params_hex:
        request["params_hex"] = args.params_hex
    try:
        reply = _ground_request(args.address, request, timeout=args.timeout + 5.0)
    except (OSError, ConnectionError) as e:
        print(f"connection error: {e}", file=sys.stderr)
        return EXIT_CONNECT
    print(json.dumps(reply))
    if reply.get("op") == "error":
        return EXIT_REFUSED
    status = reply.get("status")
    if status == "ack":
        return EXIT_OK
    if status == "timeout":
        return EXIT_TIMEOUT
    return EXIT_REFUSED


def cmd_dump_store(args) -> int:
    try:
        scan = scan_file(args.path)
    except OSError as e:
        print(f"cannot read store: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if args.t0 > args.t1:
        print(f"bad range: t0 {args.t0} > t1 {args.t1}", file=sys.stderr)
        return EXIT_CONFIG
    for record in scan.records:
        if args.dev is not None and record.dev_id != args.dev:
            continue
        if not args.t0 <= record.timestamp_ms <= args.t1:
            continue
        print(json.dumps({
            "dev": record.dev_id,
            "ftype": record.ftype.name,
            "timestamp_ms": record.timestamp_ms,
            "payload_hex": record.payload.hex(),
        }))
    if scan.truncated_tail_bytes:
        print(f"truncated tail: {scan.truncated_tail_bytes} bytes dropped",
              file=sys.stderr)
    if scan.unrecovered_bytes:
        print(f"unrecovered: {scan.unrecovered_bytes} bytes after corruption",
              file=sys.stderr)
    return EXIT_OK


def cmd_demo_reentrancy(args) -> int:
    config = DemoConfig(mode=args.mode, writer_count=args.writers,
                        messages_per_writer=args.messages,
                        chunk_size=args.chunk, seed=args.seed,
                        run_length=args.run_length)
    try:
        report = (run_demo_host_threads(config) if args.host_threads
                  else run_demo(config))
    except DemoConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps(report.to_json()))
    mixed = report.messages_corrupted
    print(f"{report.messages_total} messages, {mixed} corrupted "
          f"({report.corruption_rate:.2%})", file=sys.stderr)
    if report.first_corruption_example:
        example = report.first_corruption_example.decode("ascii", errors="backslashreplace")
        print(f"first corrupted run: {example}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="obdhsim",
                                     description="Multitasking OBDH desk simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the OBDH until interrupted")
    p_run.add_argument("--config", help="JSON run configuration (default: bundled roster)")
    p_run.add_argument("--store", help="override telemetry store path")
    p_run.add_argument("--listen", help="override ground link host:port")
    p_run.add_argument("--log-file", help="write the event log here instead of stderr")
    p_run.set_defaults(func=cmd_run)

    p_send = sub.add_parser("send", help="send one command via a running OBDH")
    p_send.add_argument("dev", type=int, help="device id (1-7)")
    p_send.add_argument("code", help="command name (GET_TLM, SET_SPEED) or numeric code")
    p_send.add_argument("params_hex", nargs="?", default="",
                        help="command parameters as hex")
    p_send.add_argument("--address", default="127.0.0.1:47600")
    p_send.add_argument("--timeout", type=float, default=1.0, help="seconds")
    p_send.set_defaults(func=cmd_send)

    p_dump = sub.add_parser("dump-store", help="print store records as JSON lines")
    p_dump.add_argument("path")
    p_dump.add_argument("--dev", type=int)
    p_dump.add_argument("--t0", type=int, default=0)
    p_dump.add_argument("--t1", type=int, default=2**63 - 1)
    p_dump.set_defaults(func=cmd_dump_store)

    p_demo = sub.add_parser("demo-reentrancy", help="interleaved-writer corruption demo")
    p_demo.add_argument("--mode", choices=["unsafe", "safe"], default="unsafe")
    p_demo.add_argument("--writers", type=int, default=2)
    p_demo.add_argument("--messages", type=int, default=1000)
    p_demo.add_argument("--chunk", type=int, default=1)
    p_demo.add_argument("--seed", type=int, default=0)
    p_demo.add_argument("--run-length", type=int, default=26)
    p_demo.add_argument("--host-threads", action="store_true",
                        help="use real threads instead of the seeded scheduler")
    p_demo.set_defaults(func=cmd_demo_reentrancy)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return EXIT_OK
    except Exception as e:  # anything unexpected: documented distinct code
        print(f"internal error: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
