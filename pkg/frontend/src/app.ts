// Wire the model, the view and the ground link together in the browser.

import { GroundLinkClient, SocketFactory, browserSocketFactory } from "./client.js";
import {
  actionSendCommand,
  actionStatus,
  actionStoreQuery,
  actionSubscribe,
  actionTask,
  actionUnsubscribe,
  apply,
  initialState,
  reconnectRequests,
  setConnection,
} from "./model.js";
import { ConsoleView } from "./view.js";

export interface ConsoleHandle {
  state: ReturnType<typeof initialState>;
  view: ConsoleView;
  client: GroundLinkClient;
}

export function startConsole(
  root: HTMLElement,
  url: string,
  factory: SocketFactory = browserSocketFactory,
  statusPollMs: number | null = 2000,
): ConsoleHandle {
  const state = initialState();
  let view: ConsoleView;

  const client = new GroundLinkClient(url, {
    onConnect: () => {
      setConnection(state, "connected");
      client.sendAll(reconnectRequests(state)); // status{} rebuilds the task table
      view.render(state);
    },
    onDisconnect: () => {
      setConnection(state, "disconnected");
      view.render(state);
    },
    onMessage: (msg) => {
      apply(state, msg);
      view.render(state);
    },
  }, factory);

  view = new ConsoleView(root, {
    onSendCommand: (dev, code, paramsHex) => {
      const action = actionSendCommand(state, dev, code, paramsHex);
      view.showCommandError(action.error ?? "");
      client.sendAll(action.requests);
      view.render(state);
    },
    onTask: (taskId, taskAction) => {
      client.sendAll(actionTask(state, taskId, taskAction).requests);
    },
    onSubscribe: (dev) => client.sendAll(actionSubscribe(state, dev).requests),
    onUnsubscribe: (dev) => client.sendAll(actionUnsubscribe(state, dev).requests),
    onStoreQuery: (dev, t0, t1) => {
      const action = actionStoreQuery(state, dev, t0, t1);
      view.showStoreError(action.error ?? "");
      client.sendAll(action.requests);
      view.render(state);
    },
    onStorePage: (delta) => {
      const pages = Math.ceil(state.storeView.records.length / state.storeView.pageSize);
      state.storeView.page = Math.max(0, Math.min(pages - 1, state.storeView.page + delta));
      state.version += 1;
      view.render(state);
    },
  });

  setConnection(state, "connecting");
  view.render(state);
  client.connect();

  // periodic status keeps counters fresh without flooding the link
  if (statusPollMs !== null) {
    setInterval(() => {
      if (state.connection === "connected") {
        client.sendAll(actionStatus(state).requests);
      }
    }, statusPollMs);
  }
  return { state, view, client };
}

declare global {
  interface Window {
    startConsole: typeof startConsole;
  }
}

if (typeof window !== "undefined") {
  window.startConsole = startConsole;
}
