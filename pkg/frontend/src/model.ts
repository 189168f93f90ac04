// Console state: a pure projection of received ground-link messages plus
// local input. All mutation flows through apply() (server messages) and
// the action*() helpers (operator input), so the view can re-render from
// state alone and tests can drive the console without a DOM.

import {
  CmdResult,
  DeviceRow,
  Request,
  ServerMessage,
  StoreBatch,
  TaskRow,
  TelemetryEvent,
  isValidParamsHex,
  validateRequest,
} from "./protocol.js";

export interface HistoryEntry {
  id: number;
  dev: number;
  code: string | number;
  paramsHex: string;
  sentAt: number;
  result?: CmdResult;
  error?: string;
}

export interface TelemetryPanel {
  latest: TelemetryEvent;
  stale: boolean;
  count: number;
}

export interface StoreView {
  records: StoreBatch["records"];
  done: boolean;
  error: string | null;
  loading: boolean;
  page: number;
  pageSize: number;
}

export interface ConsoleState {
  connection: "connecting" | "connected" | "disconnected";
  version: number; // bumped on every visible change
  tasks: Map<string, TaskRow>;
  devices: DeviceRow[];
  storeInfo: { records: number; bytes: number; path: string } | null;
  history: HistoryEntry[];
  pendingByDev: Map<number, number[]>; // dev -> history entry ids awaiting result
  telemetry: Map<number, TelemetryPanel>;
  feed: TelemetryEvent[];
  subscriptions: Set<number>;
  subscribedAll: boolean;
  storeView: StoreView;
  lastError: string | null;
}

export const FEED_LIMIT = 200;
let nextHistoryId = 1;

export function initialState(): ConsoleState {
  return {
    connection: "disconnected",
    version: 0,
    tasks: new Map(),
    devices: [],
    storeInfo: null,
    history: [],
    pendingByDev: new Map(),
    telemetry: new Map(),
    feed: [],
    subscriptions: new Set(),
    subscribedAll: false,
    storeView: { records: [], done: true, error: null, loading: false, page: 0, pageSize: 20 },
    lastError: null,
  };
}

function bump(state: ConsoleState): void {
  state.version += 1;
}

export function setConnection(state: ConsoleState, connection: ConsoleState["connection"]): void {
  state.connection = connection;
  bump(state);
}

/** Fold one server message into the state. */
export function apply(state: ConsoleState, msg: ServerMessage): void {
  switch (msg.op) {
    case "pong":
      break;
    case "status_report": {
      state.tasks = new Map(msg.tasks.map((t) => [t.task_id, t]));
      state.devices = msg.devices;
      state.storeInfo = msg.store;
      break;
    }
    case "task_result":
    case "task_event": {
      const row = state.tasks.get(msg.task_id);
      if (row) row.state = msg.state;
      break;
    }
    case "cmd_result": {
      const queue = state.pendingByDev.get(msg.dev);
      const id = queue?.shift();
      const entry = state.history.find((h) => h.id === id);
      if (entry) entry.result = msg;
      break;
    }
    case "telemetry": {
      const panel = state.telemetry.get(msg.dev);
      state.telemetry.set(msg.dev, {
        latest: msg,
        stale: false,
        count: (panel?.count ?? 0) + 1,
      });
      state.feed.push(msg);
      if (state.feed.length > FEED_LIMIT) state.feed.splice(0, state.feed.length - FEED_LIMIT);
      break;
    }
    case "subscribed": {
      if (msg.dev === "all") state.subscribedAll = true;
      else state.subscriptions.add(msg.dev);
      break;
    }
    case "unsubscribed": {
      if (msg.dev === "all") {
        state.subscribedAll = false;
        state.subscriptions.clear();
        for (const panel of state.telemetry.values()) panel.stale = true;
      } else {
        state.subscriptions.delete(msg.dev);
        const panel = state.telemetry.get(msg.dev);
        if (panel) panel.stale = true;
      }
      break;
    }
    case "store_batch": {
      if (state.storeView.loading) {
        state.storeView.records = state.storeView.records.concat(msg.records);
        state.storeView.done = msg.done;
        if (msg.done) state.storeView.loading = false;
      }
      break;
    }
    case "error": {
      state.lastError = msg.field ? `${msg.message} (field: ${msg.field})` : msg.message;
      if (state.storeView.loading) {
        state.storeView.loading = false;
        state.storeView.error = msg.message;
      }
      break;
    }
  }
  bump(state);
}

// -- operator actions: each returns the request(s) to send, or an inline
//    validation error without touching the wire ----------------------------

export interface ActionResult {
  requests: Request[];
  error?: string;
}

function guarded(state: ConsoleState, requests: Request[]): ActionResult {
  if (state.connection !== "connected") {
    return { requests: [], error: "not connected" };
  }
  for (const request of requests) {
    const problem = validateRequest(request);
    if (problem) throw new Error(`console produced invalid request: ${problem}`);
  }
  return { requests };
}

export function actionSendCommand(
  state: ConsoleState,
  dev: number,
  code: string | number,
  paramsHex: string,
): ActionResult {
  const cleaned = paramsHex.trim().toLowerCase();
  if (!isValidParamsHex(cleaned)) {
    return { requests: [], error: "params must be hex pairs (even length)" };
  }
  if (!Number.isInteger(dev) || dev < 1) {
    return { requests: [], error: "device id must be a positive integer" };
  }
  const result = guarded(state, [
    cleaned
      ? { op: "send_cmd", dev, code, params_hex: cleaned }
      : { op: "send_cmd", dev, code },
  ]);
  if (result.error) return result;
  const entry: HistoryEntry = {
    id: nextHistoryId++,
    dev,
    code,
    paramsHex: cleaned,
    sentAt: Date.now(),
  };
  state.history.unshift(entry);
  if (!state.pendingByDev.has(dev)) state.pendingByDev.set(dev, []);
  state.pendingByDev.get(dev)!.push(entry.id);
  bump(state);
  return result;
}

export function actionTask(
  state: ConsoleState,
  taskId: string,
  action: "suspend" | "resume",
): ActionResult {
  // no optimistic flip: the row changes when task_result/task_event lands
  return guarded(state, [{ op: "task", action, task_id: taskId }]);
}

export function actionSubscribe(state: ConsoleState, dev: number | "all"): ActionResult {
  return guarded(state, [{ op: "subscribe", dev }]);
}

export function actionUnsubscribe(state: ConsoleState, dev: number | "all"): ActionResult {
  return guarded(state, [{ op: "unsubscribe", dev }]);
}

export function actionStatus(state: ConsoleState): ActionResult {
  return guarded(state, [{ op: "status" }]);
}

export function actionStoreQuery(
  state: ConsoleState,
  dev: number | null,
  t0: number,
  t1: number,
): ActionResult {
  if (!Number.isInteger(t0) || !Number.isInteger(t1)) {
    return { requests: [], error: "t0/t1 must be integer milliseconds" };
  }
  if (t0 > t1) {
    return { requests: [], error: "t0 must not exceed t1" };
  }
  const result = guarded(state, [
    dev === null ? { op: "store_query", t0, t1 } : { op: "store_query", dev, t0, t1 },
  ]);
  if (result.error) return result;
  state.storeView = {
    records: [], done: false, error: null, loading: true, page: 0,
    pageSize: state.storeView.pageSize,
  };
  bump(state);
  return result;
}

/** Requests to replay after (re)connecting: status, then subscriptions. */
export function reconnectRequests(state: ConsoleState): Request[] {
  const requests: Request[] = [{ op: "status" }];
  if (state.subscribedAll) requests.push({ op: "subscribe", dev: "all" });
  else for (const dev of state.subscriptions) requests.push({ op: "subscribe", dev });
  return requests;
}

export function storePage(view: StoreView): StoreBatch["records"] {
  const start = view.page * view.pageSize;
  return view.records.slice(start, start + view.pageSize);
}
