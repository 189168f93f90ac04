// Protocol conformance: replay every console action against the mock
// ground link and assert the console only ever emits schema-valid
// messages (checked by the mock's own server-side validator).

import { beforeEach, describe, expect, it } from "vitest";

import { GroundLinkClient } from "../src/client.js";
import {
  ConsoleState,
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
} from "../src/model.js";
import { ServerMessage } from "../src/protocol.js";
import { MockGroundLink } from "./mock_link.js";

function connectedFixture() {
  const link = new MockGroundLink();
  const state = initialState();
  const client = new GroundLinkClient("ws://mock/", {
    onConnect: () => {
      setConnection(state, "connected");
      client.sendAll(reconnectRequests(state));
    },
    onDisconnect: () => setConnection(state, "disconnected"),
    onMessage: (msg: ServerMessage) => apply(state, msg),
  }, link.factory, false);
  client.connect();
  return { link, state, client };
}

async function settle() {
  await new Promise((resolve) => setTimeout(resolve, 0));
}

describe("console protocol conformance", () => {
  let link: MockGroundLink;
  let state: ConsoleState;
  let client: GroundLinkClient;

  beforeEach(async () => {
    ({ link, state, client } = connectedFixture());
    await settle();
  });

  it("every UI action produces only schema-valid requests", async () => {
    client.sendAll(actionSendCommand(state, 1, "GET_TLM", "").requests);
    client.sendAll(actionSendCommand(state, 2, "SET_SPEED", "000003e8").requests);
    client.sendAll(actionSendCommand(state, 7, 0x10, "").requests);
    client.sendAll(actionSubscribe(state, 4).requests);
    client.sendAll(actionSubscribe(state, "all").requests);
    client.sendAll(actionUnsubscribe(state, 4).requests);
    client.sendAll(actionUnsubscribe(state, "all").requests);
    client.sendAll(actionTask(state, "rx-ttyOS2", "suspend").requests);
    client.sendAll(actionTask(state, "rx-ttyOS2", "resume").requests);
    client.sendAll(actionStatus(state).requests);
    client.sendAll(actionStoreQuery(state, 4, 0, 9999999999).requests);
    client.sendAll(actionStoreQuery(state, null, 0, 1).requests);
    await settle();
    expect(link.violations).toEqual([]);
    // reconnect replay (status) + 12 actions
    expect(link.received.length).toBeGreaterThanOrEqual(13);
  });

  it("client-side validation stops bad input before the wire", () => {
    const before = link.received.length;
    const odd = actionSendCommand(state, 1, "GET_TLM", "abc");
    expect(odd.error).toMatch(/hex/);
    expect(odd.requests).toEqual([]);
    const badRange = actionStoreQuery(state, null, 10, 5);
    expect(badRange.error).toMatch(/t0/);
    expect(badRange.requests).toEqual([]);
    const badDev = actionSendCommand(state, 0, "GET_TLM", "");
    expect(badDev.error).toBeTruthy();
    expect(link.received.length).toBe(before); // nothing was sent
    expect(link.violations).toEqual([]);
  });

  it("actions while disconnected are refused locally", () => {
    setConnection(state, "disconnected");
    const result = actionSendCommand(state, 1, "GET_TLM", "");
    expect(result.error).toBe("not connected");
    expect(result.requests).toEqual([]);
  });

  it("reconnect replays status and the subscription set", async () => {
    client.sendAll(actionSubscribe(state, 4).requests);
    client.sendAll(actionSubscribe(state, 5).requests);
    await settle();
    const replay = reconnectRequests(state);
    expect(replay[0]).toEqual({ op: "status" });
    const subs = replay.slice(1).map((r) => (r as { dev: number }).dev).sort();
    expect(subs).toEqual([4, 5]);
  });
});
