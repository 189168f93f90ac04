// In-memory stand-in for the ground link: an independent schema check of
// every request (mirroring the server's parser, not reusing the client's
// validator) plus canned replies shaped like the real link's.

import { SocketLike } from "../src/client.js";

export interface ReceivedRequest {
  raw: string;
  obj: Record<string, unknown>;
}

const TASK_IDS = ["rx-ttyOS0", "rx-ttyOS1", "rx-ttyOS2", "rx-ttyOS3",
  "rx-ttyOS4", "rx-ttyOS5", "rx-ttyOS6"];

export function statusReportFixture(taskStates: Record<string, string> = {}) {
  return {
    op: "status_report",
    tasks: TASK_IDS.map((taskId, i) => ({
      task_id: taskId,
      port_id: taskId.slice(3),
      dev_id: i + 1,
      state: taskStates[taskId] ?? "RUNNING",
      frames_ok: 10 * i,
      crc_errors: 0,
      resyncs: 0,
      stale_frames: 0,
      last_activity_ms: 1700000000000 + i,
    })),
    devices: TASK_IDS.map((taskId, i) => ({
      dev_id: i + 1,
      name: i < 3 ? `WDE ${i + 1}` : i < 5 ? `STS ${i - 2}` : i === 5 ? "Battery" : "GPS",
      kind: i < 3 ? "WDE" : i < 5 ? "STS" : i === 5 ? "BATTERY" : "GPS",
      port_id: taskId.slice(3),
      line_mode: i < 3 ? "TTL" : i < 5 ? "RS422" : "RS232",
      cmds_sent: 0, acks: 0, naks: 0, timeouts: 0,
      last_tlm_ms: null, last_tlm_hex: null,
    })),
    store: { records: 12, bytes: 444, path: "telemetry.dat" },
  };
}

/** Server-side request check, written against the protocol docs. */
export function serverSideValidate(obj: Record<string, unknown>): string | null {
  if (typeof obj.op !== "string") return "missing op";
  switch (obj.op) {
    case "ping":
    case "status":
      return null;
    case "send_cmd":
      if (typeof obj.dev !== "number" || !Number.isInteger(obj.dev)) return "dev";
      if (obj.code !== undefined &&
          typeof obj.code !== "string" && typeof obj.code !== "number") return "code";
      if (obj.params_hex !== undefined) {
        if (typeof obj.params_hex !== "string") return "params_hex";
        if (!/^([0-9a-fA-F]{2})*$/.test(obj.params_hex)) return "params_hex";
      }
      return null;
    case "subscribe":
    case "unsubscribe":
      if (obj.dev !== "all" && !Number.isInteger(obj.dev)) return "dev";
      return null;
    case "task":
      if (obj.action !== "suspend" && obj.action !== "resume") return "action";
      if (typeof obj.task_id !== "string") return "task_id";
      return null;
    case "store_query":
      if (obj.dev !== undefined && !Number.isInteger(obj.dev)) return "dev";
      if (!Number.isInteger(obj.t0) || !Number.isInteger(obj.t1)) return "t0";
      if ((obj.t0 as number) > (obj.t1 as number)) return "t0";
      return null;
    default:
      return "op";
  }
}

export class MockGroundLink {
  received: ReceivedRequest[] = [];
  violations: string[] = [];
  taskStates: Record<string, string> = {};
  storeRecords = [
    { dev: 4, timestamp_ms: 1700000000100, payload_hex: "40000000" },
    { dev: 4, timestamp_ms: 1700000000200, payload_hex: "40000001" },
  ];
  private sockets: MockSocket[] = [];

  factory = (url: string): SocketLike => {
    const socket = new MockSocket(this);
    this.sockets.push(socket);
    queueMicrotask(() => socket.onopen?.());
    return socket;
  };

  handle(socket: MockSocket, raw: string): void {
    const obj = JSON.parse(raw) as Record<string, unknown>;
    this.received.push({ raw, obj });
    const violation = serverSideValidate(obj);
    if (violation) {
      this.violations.push(`${obj.op}: field ${violation}`);
      socket.deliver({ op: "error", message: `bad field ${violation}`, field: violation });
      return;
    }
    switch (obj.op) {
      case "ping":
        socket.deliver({ op: "pong" });
        break;
      case "status":
        socket.deliver(statusReportFixture(this.taskStates));
        break;
      case "send_cmd":
        socket.deliver({
          op: "cmd_result", dev: obj.dev, code: 16, status: "ack",
          round_trip_ms: 1.8, seq: 0, ftype: "TLM",
          raw_hex: "00".repeat(32),
          decoded: { wheel_speed_rpm: 0, commanded_speed_rpm: 0 },
        });
        break;
      case "subscribe":
        socket.deliver({ op: "subscribed", dev: obj.dev });
        break;
      case "unsubscribe":
        socket.deliver({ op: "unsubscribed", dev: obj.dev });
        break;
      case "task": {
        const state = obj.action === "suspend" ? "SUSPENDED" : "RUNNING";
        this.taskStates[obj.task_id as string] = state;
        socket.deliver({ op: "task_result", task_id: obj.task_id, state });
        break;
      }
      case "store_query":
        socket.deliver({
          op: "store_batch",
          records: this.storeRecords.filter(
            (r) => (obj.dev === undefined || r.dev === obj.dev)
              && r.timestamp_ms >= (obj.t0 as number)
              && r.timestamp_ms <= (obj.t1 as number)),
          done: true,
        });
        break;
    }
  }

  pushTelemetry(dev: number, seq: number): void {
    for (const socket of this.sockets) {
      socket.deliver({
        op: "telemetry", dev, seq, timestamp_ms: Date.now(),
        raw_hex: "ab".repeat(24), decoded: { clock_ms: seq * 100 },
      });
    }
  }
}

export class MockSocket implements SocketLike {
  onopen: (() => void) | null = null;
  onmessage: ((data: string) => void) | null = null;
  onclose: (() => void) | null = null;
  lastDeliveredAt = 0;

  constructor(private link: MockGroundLink) {}

  send(data: string): void {
    this.link.handle(this, data);
  }

  deliver(obj: unknown): void {
    this.lastDeliveredAt = performance.now();
    this.onmessage?.(JSON.stringify(obj));
  }

  close(): void {
    this.onclose?.();
  }
}
