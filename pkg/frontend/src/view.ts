// DOM rendering: a straight function of ConsoleState. No state lives in
// the DOM beyond the input fields the operator is typing into.

import { ConsoleState, HistoryEntry, storePage } from "./model.js";
import { TaskRow } from "./protocol.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function fmtTime(ms: number | null | undefined): string {
  if (!ms) return "-";
  return new Date(ms).toISOString().slice(11, 23);
}

export interface ViewCallbacks {
  onSendCommand(dev: number, code: string, paramsHex: string): void;
  onTask(taskId: string, action: "suspend" | "resume"): void;
  onSubscribe(dev: number | "all"): void;
  onUnsubscribe(dev: number | "all"): void;
  onStoreQuery(dev: number | null, t0: number, t1: number): void;
  onStorePage(delta: number): void;
}

export class ConsoleView {
  private lastVersion = -1;

  constructor(
    private root: HTMLElement,
    private callbacks: ViewCallbacks,
  ) {}

  render(state: ConsoleState): void {
    if (state.version === this.lastVersion) return;
    this.lastVersion = state.version;
    this.renderConnection(state);
    this.renderTaskTable(state);
    this.renderCommandPanel(state);
    this.renderTelemetry(state);
    this.renderStoreBrowser(state);
  }

  private section(id: string): HTMLElement {
    let node = this.root.querySelector<HTMLElement>(`#${id}`);
    if (!node) {
      node = el("section");
      node.id = id;
      this.root.appendChild(node);
    }
    return node;
  }

  private renderConnection(state: ConsoleState): void {
    const bar = this.section("connection");
    bar.innerHTML = "";
    bar.appendChild(el("span", `badge conn-${state.connection}`, state.connection));
    if (state.lastError) bar.appendChild(el("span", "last-error", state.lastError));
  }

  private renderCommandPanel(state: ConsoleState): void {
    const panel = this.section("command-panel");
    let form = panel.querySelector<HTMLFormElement>("form");
    if (!form) {
      form = el("form");
      form.innerHTML = `
        <h2>Telecommand</h2>
        <label>Device <select name="dev"></select></label>
        <label>Command <select name="code">
          <option>GET_TLM</option><option>SET_SPEED</option>
        </select></label>
        <label>Params (hex) <input name="params" placeholder="000003e8" spellcheck="false"></label>
        <button type="submit">Send</button>
        <span class="inline-error" data-role="cmd-error"></span>`;
      form.addEventListener("submit", (event) => {
        event.preventDefault();
        const dev = Number((form!.elements.namedItem("dev") as HTMLSelectElement).value);
        const code = (form!.elements.namedItem("code") as HTMLSelectElement).value;
        const params = (form!.elements.namedItem("params") as HTMLInputElement).value;
        this.callbacks.onSendCommand(dev, code, params);
      });
      panel.appendChild(form);
      panel.appendChild(el("div", "history"));
    }
    const devSelect = form.elements.namedItem("dev") as HTMLSelectElement;
    const current = devSelect.value;
    devSelect.innerHTML = "";
    for (const device of state.devices) {
      const option = el("option", undefined, `${device.dev_id} — ${device.name}`);
      option.value = String(device.dev_id);
      devSelect.appendChild(option);
    }
    if (current) devSelect.value = current;
    const disabled = state.connection !== "connected";
    for (const input of form.querySelectorAll("select,input,button")) {
      (input as HTMLInputElement).disabled = disabled;
    }
    const history = panel.querySelector(".history")!;
    history.innerHTML = "";
    for (const entry of state.history.slice(0, 30)) {
      history.appendChild(this.historyRow(entry));
    }
  }

  private historyRow(entry: HistoryEntry): HTMLElement {
    const row = el("div", "history-row");
    const status = entry.result?.status ?? "pending";
    row.appendChild(el("span", `badge status-${status}`, status));
    row.appendChild(el("span", "cmd",
      `dev ${entry.dev} ${entry.code}${entry.paramsHex ? " " + entry.paramsHex : ""}`));
    if (entry.result) {
      row.appendChild(el("span", "rtt", `${entry.result.round_trip_ms.toFixed(1)} ms`));
      if (entry.result.raw_hex !== undefined) {
        row.appendChild(el("code", "raw", entry.result.raw_hex));
      }
      if (entry.result.decoded) {
        row.appendChild(el("span", "decoded", JSON.stringify(entry.result.decoded)));
      }
    }
    return row;
  }

  private renderTaskTable(state: ConsoleState): void {
    const panel = this.section("task-table");
    panel.innerHTML = "<h2>Port tasks</h2>";
    const table = el("table");
    table.innerHTML = `<thead><tr>
      <th>task</th><th>port</th><th>dev</th><th>state</th>
      <th>frames</th><th>crc err</th><th>resyncs</th><th></th>
    </tr></thead>`;
    const body = el("tbody");
    for (const task of state.tasks.values()) {
      body.appendChild(this.taskRow(task));
    }
    table.appendChild(body);
    panel.appendChild(table);
  }

  private taskRow(task: TaskRow): HTMLElement {
    const row = el("tr", `task-state-${task.state.toLowerCase()}`);
    for (const text of [task.task_id, task.port_id, String(task.dev_id ?? "-")]) {
      row.appendChild(el("td", undefined, text));
    }
    row.appendChild(el("td", `badge state-${task.state.toLowerCase()}`, task.state));
    for (const n of [task.frames_ok, task.crc_errors, task.resyncs]) {
      row.appendChild(el("td", "num", String(n)));
    }
    const cell = el("td");
    const suspended = task.state === "SUSPENDED";
    const button = el("button", undefined, suspended ? "resume" : "suspend");
    button.addEventListener("click", () => {
      this.callbacks.onTask(task.task_id, suspended ? "resume" : "suspend");
    });
    cell.appendChild(button);
    row.appendChild(cell);
    return row;
  }

  private renderTelemetry(state: ConsoleState): void {
    const panel = this.section("telemetry");
    panel.innerHTML = "<h2>Live telemetry</h2>";
    const controls = el("div", "sub-controls");
    const subAll = el("button", undefined, state.subscribedAll ? "unsubscribe all" : "subscribe all");
    subAll.addEventListener("click", () => {
      if (state.subscribedAll) this.callbacks.onUnsubscribe("all");
      else this.callbacks.onSubscribe("all");
    });
    controls.appendChild(subAll);
    for (const device of state.devices) {
      const on = state.subscribedAll || state.subscriptions.has(device.dev_id);
      const button = el("button", on ? "sub-on" : "", `dev ${device.dev_id}`);
      button.addEventListener("click", () => {
        if (on) this.callbacks.onUnsubscribe(device.dev_id);
        else this.callbacks.onSubscribe(device.dev_id);
      });
      controls.appendChild(button);
    }
    panel.appendChild(controls);
    const panels = el("div", "tlm-panels");
    for (const [dev, tlm] of state.telemetry) {
      const card = el("div", tlm.stale ? "tlm-card stale" : "tlm-card");
      card.appendChild(el("h3", undefined,
        `dev ${dev}${tlm.stale ? " (stale)" : ""} — ${tlm.count} frames`));
      if (tlm.latest.decoded && Object.keys(tlm.latest.decoded).length) {
        const list = el("dl");
        for (const [key, value] of Object.entries(tlm.latest.decoded)) {
          list.appendChild(el("dt", undefined, key));
          list.appendChild(el("dd", undefined,
            Array.isArray(value)
              ? value.map((v) => Number(v).toFixed(4)).join(", ")
              : String(value)));
        }
        card.appendChild(list);
      }
      card.appendChild(el("code", "raw", tlm.latest.raw_hex));
      panels.appendChild(card);
    }
    panel.appendChild(panels);
    const feed = el("div", "feed");
    for (const event of state.feed.slice(-15).reverse()) {
      feed.appendChild(el("div", "feed-line",
        `${fmtTime(event.timestamp_ms)} dev ${event.dev} seq ${event.seq} ${event.raw_hex}`));
    }
    panel.appendChild(feed);
  }

  private renderStoreBrowser(state: ConsoleState): void {
    const panel = this.section("store-browser");
    let form = panel.querySelector<HTMLFormElement>("form");
    if (!form) {
      form = el("form");
      form.innerHTML = `
        <h2>Stored telemetry</h2>
        <label>Device <input name="dev" placeholder="all" size="4"></label>
        <label>From (ms) <input name="t0" value="0" size="14"></label>
        <label>To (ms) <input name="t1" value="9999999999999" size="14"></label>
        <button type="submit">Query</button>
        <span class="inline-error" data-role="store-error"></span>`;
      form.addEventListener("submit", (event) => {
        event.preventDefault();
        const devRaw = (form!.elements.namedItem("dev") as HTMLInputElement).value.trim();
        const t0 = Number((form!.elements.namedItem("t0") as HTMLInputElement).value);
        const t1 = Number((form!.elements.namedItem("t1") as HTMLInputElement).value);
        this.callbacks.onStoreQuery(devRaw ? Number(devRaw) : null, t0, t1);
      });
      panel.appendChild(form);
      panel.appendChild(el("div", "store-results"));
    }
    const results = panel.querySelector<HTMLElement>(".store-results")!;
    results.innerHTML = "";
    const view = state.storeView;
    if (view.error) {
      results.appendChild(el("div", "inline-error", view.error));
      return;
    }
    if (view.loading) {
      results.appendChild(el("div", "loading", "loading..."));
      return;
    }
    if (!view.records.length) {
      results.appendChild(el("div", "empty", "no records in range"));
      return;
    }
    const table = el("table");
    table.innerHTML = "<thead><tr><th>dev</th><th>time</th><th>payload</th></tr></thead>";
    const body = el("tbody");
    for (const record of storePage(view)) {
      const row = el("tr");
      row.appendChild(el("td", undefined, String(record.dev)));
      row.appendChild(el("td", undefined, fmtTime(record.timestamp_ms)));
      row.appendChild(el("td", "raw", record.payload_hex));
      body.appendChild(row);
    }
    table.appendChild(body);
    results.appendChild(table);
    const pager = el("div", "pager");
    const pages = Math.ceil(view.records.length / view.pageSize);
    const prev = el("button", undefined, "prev");
    prev.disabled = view.page === 0;
    prev.addEventListener("click", () => this.callbacks.onStorePage(-1));
    const next = el("button", undefined, "next");
    next.disabled = view.page >= pages - 1;
    next.addEventListener("click", () => this.callbacks.onStorePage(1));
    pager.appendChild(prev);
    pager.appendChild(el("span", undefined,
      ` page ${view.page + 1}/${pages} — ${view.records.length} records `));
    pager.appendChild(next);
    results.appendChild(pager);
  }

  showCommandError(message: string): void {
    const node = this.root.querySelector<HTMLElement>('[data-role="cmd-error"]');
    if (node) node.textContent = message;
  }

  showStoreError(message: string): void {
    const node = this.root.querySelector<HTMLElement>('[data-role="store-error"]');
    if (node) node.textContent = message;
  }
}
