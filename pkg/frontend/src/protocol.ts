// Ground link message schemas: the console speaks exactly this protocol
// (JSON over a WebSocket; one object per message) and nothing else.

export type DeviceId = number;

export interface SendCmdRequest {
  op: "send_cmd";
  dev: DeviceId;
  code: string | number;
  params_hex?: string;
  timeout_ms?: number;
}

export interface SubscribeRequest {
  op: "subscribe" | "unsubscribe";
  dev: DeviceId | "all";
}

export interface TaskRequest {
  op: "task";
  action: "suspend" | "resume";
  task_id: string;
}

export interface StatusRequest {
  op: "status";
}

export interface StoreQueryRequest {
  op: "store_query";
  dev?: DeviceId;
  t0: number;
  t1: number;
}

export interface PingRequest {
  op: "ping";
}

export type Request =
  | SendCmdRequest
  | SubscribeRequest
  | TaskRequest
  | StatusRequest
  | StoreQueryRequest
  | PingRequest;

export interface CmdResult {
  op: "cmd_result";
  dev: DeviceId;
  code: number;
  status: "ack" | "nak" | "timeout" | "port_suspended";
  round_trip_ms: number;
  seq?: number;
  ftype?: string;
  raw_hex?: string;
  decoded?: Record<string, unknown>;
}

export interface TaskRow {
  task_id: string;
  port_id: string;
  dev_id: number | null;
  state: string;
  frames_ok: number;
  crc_errors: number;
  resyncs: number;
  stale_frames: number;
  last_activity_ms: number | null;
}

export interface DeviceRow {
  dev_id: number;
  name: string;
  kind: string;
  port_id: string;
  line_mode: string;
  cmds_sent: number;
  acks: number;
  naks: number;
  timeouts: number;
  last_tlm_ms: number | null;
  last_tlm_hex: string | null;
}

export interface StatusReport {
  op: "status_report";
  tasks: TaskRow[];
  devices: DeviceRow[];
  store: { records: number; bytes: number; path: string };
}

export interface TelemetryEvent {
  op: "telemetry";
  dev: DeviceId;
  seq: number;
  timestamp_ms: number;
  raw_hex: string;
  decoded?: Record<string, unknown>;
}

export interface TaskResult {
  op: "task_result";
  task_id: string;
  state: string;
}

export interface TaskEvent {
  op: "task_event";
  task_id: string;
  state: string;
}

export interface StoreBatch {
  op: "store_batch";
  records: { dev: number; timestamp_ms: number; payload_hex: string }[];
  done: boolean;
}

export interface ErrorReply {
  op: "error";
  message: string;
  field?: string;
}

export type ServerMessage =
  | { op: "pong" }
  | { op: "subscribed"; dev: DeviceId | "all" }
  | { op: "unsubscribed"; dev: DeviceId | "all" }
  | CmdResult
  | StatusReport
  | TelemetryEvent
  | TaskResult
  | TaskEvent
  | StoreBatch
  | ErrorReply;

export const COMMAND_CODES = ["GET_TLM", "SET_SPEED"] as const;

const HEX_RE = /^([0-9a-f]{2})*$/;

export function isValidParamsHex(value: string): boolean {
  return HEX_RE.test(value);
}

/** Validate an outgoing request against the documented schema.
 *  Returns null when valid, otherwise a human-readable reason. */
export function validateRequest(msg: unknown): string | null {
  if (typeof msg !== "object" || msg === null) return "not an object";
  const m = msg as Record<string, unknown>;
  switch (m.op) {
    case "ping":
      return null;
    case "send_cmd": {
      if (!Number.isInteger(m.dev)) return "send_cmd.dev must be an integer";
      const code = m.code;
      if (typeof code !== "number" && typeof code !== "string")
        return "send_cmd.code must be a name or number";
      if (m.params_hex !== undefined) {
        if (typeof m.params_hex !== "string" || !isValidParamsHex(m.params_hex))
          return "send_cmd.params_hex must be lowercase hex of even length";
      }
      if (m.timeout_ms !== undefined && !Number.isInteger(m.timeout_ms))
        return "send_cmd.timeout_ms must be an integer";
      return null;
    }
    case "subscribe":
    case "unsubscribe":
      if (m.dev !== "all" && !Number.isInteger(m.dev))
        return `${m.op}.dev must be an integer or "all"`;
      return null;
    case "task":
      if (m.action !== "suspend" && m.action !== "resume")
        return 'task.action must be "suspend" or "resume"';
      if (typeof m.task_id !== "string" || m.task_id.length === 0)
        return "task.task_id must be a non-empty string";
      return null;
    case "status":
      return null;
    case "store_query": {
      if (m.dev !== undefined && !Number.isInteger(m.dev))
        return "store_query.dev must be an integer or absent";
      if (!Number.isInteger(m.t0) || !Number.isInteger(m.t1))
        return "store_query.t0/t1 must be integers";
      if ((m.t0 as number) > (m.t1 as number)) return "store_query.t0 > t1";
      return null;
    }
    default:
      return `unknown op ${String(m.op)}`;
  }
}

export function parseServerMessage(data: string): ServerMessage | null {
  let obj: unknown;
  try {
    obj = JSON.parse(data);
  } catch {
    return null;
  }
  if (typeof obj !== "object" || obj === null) return null;
  const op = (obj as { op?: unknown }).op;
  if (typeof op !== "string") return null;
  return obj as ServerMessage;
}
