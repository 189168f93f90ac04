// Ground link client: one WebSocket, auto-reconnect, schema-checked sends.
// The socket is injected so tests can wire the client to a mock server.

import { Request, ServerMessage, parseServerMessage, validateRequest } from "./protocol.js";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: (() => void) | null;
  onmessage: ((data: string) => void) | null;
  onclose: (() => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export function browserSocketFactory(url: string): SocketLike {
  const ws = new WebSocket(url);
  const wrapper: SocketLike = {
    send: (data) => ws.send(data),
    close: () => ws.close(),
    onopen: null,
    onmessage: null,
    onclose: null,
  };
  ws.onopen = () => wrapper.onopen?.();
  ws.onmessage = (event) => wrapper.onmessage?.(String(event.data));
  ws.onclose = () => wrapper.onclose?.();
  ws.onerror = () => ws.close();
  return wrapper;
}

export interface ClientHandlers {
  onMessage: (msg: ServerMessage) => void;
  onConnect: () => void;
  onDisconnect: () => void;
}

export class GroundLinkClient {
  private socket: SocketLike | null = null;
  private closed = false;
  private reconnectDelayMs = 500;

  constructor(
    private url: string,
    private handlers: ClientHandlers,
    private factory: SocketFactory = browserSocketFactory,
    private reconnect: boolean = true,
  ) {}

  connect(): void {
    this.closed = false;
    const socket = this.factory(this.url);
    this.socket = socket;
    socket.onopen = () => {
      this.reconnectDelayMs = 500;
      this.handlers.onConnect();
    };
    socket.onmessage = (data) => {
      const msg = parseServerMessage(data);
      if (msg) this.handlers.onMessage(msg);
    };
    socket.onclose = () => {
      this.socket = null;
      this.handlers.onDisconnect();
      if (!this.closed && this.reconnect) {
        setTimeout(() => this.connect(), this.reconnectDelayMs);
        this.reconnectDelayMs = Math.min(this.reconnectDelayMs * 2, 10_000);
      }
    };
  }

  /** Send one request; throws if the console built an off-schema message. */
  send(request: Request): void {
    const problem = validateRequest(request);
    if (problem) throw new Error(`refusing to send invalid request: ${problem}`);
    if (!this.socket) throw new Error("not connected");
    this.socket.send(JSON.stringify(request));
  }

  sendAll(requests: Request[]): void {
    for (const request of requests) this.send(request);
  }

  close(): void {
    this.closed = true;
    this.socket?.close();
  }
}
