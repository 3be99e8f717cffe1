import { describe, expect, it } from "vitest";

import {
  activeFaults,
  applyEvent,
  applyEvents,
  approvalQueue,
  foldSessionView,
  initialViewState,
  sessionList,
} from "../src/state.js";
import type { EventBatch, GatewayEvent, SessionView } from "../src/types.js";
import { loadFixture } from "./fixture-service.js";

const pending = loadFixture<EventBatch>("events_pending.json");
const decisions = loadFixture<EventBatch>("events_decisions.json");
const faultFeed = loadFixture<EventBatch>("events_fault.json");

describe("event folding", () => {
  it("session events become cards with decision controls enabled", () => {
    const state = applyEvents(initialViewState(), pending.events);
    expect(state.cursor).toBe(3);
    expect(Object.keys(state.sessions)).toHaveLength(3);
    const card = state.sessions["sess-0001"]!;
    expect(card.state).toBe("PendingApproval");
    expect(card.canDecide).toBe(true);
    expect(card.routeId).toBe("U1/P1/P2/U2");
    expect(card.modeId).toBe("A-400-16Q");
    expect(card.channelIndex).toBe(0);
    expect(card.gsnrDb).toBeCloseTo(27.5275, 3);
    expect(card.seq).toBe(1);
  });

  it("approval queue is ordered by event seq", () => {
    const state = applyEvents(initialViewState(), pending.events);
    expect(approvalQueue(state).map((c) => c.sessionId)).toEqual([
      "sess-0001",
      "sess-0002",
      "sess-0003",
    ]);
  });

  it("decision events retire cards from the queue", () => {
    const state = applyEvents(initialViewState(), [...pending.events, ...decisions.events]);
    expect(state.cursor).toBe(5);
    expect(state.sessions["sess-0001"]!.state).toBe("Committed");
    expect(state.sessions["sess-0001"]!.canDecide).toBe(false);
    expect(state.sessions["sess-0001"]!.decision?.verdict).toBe("approve");
    expect(state.sessions["sess-0002"]!.state).toBe("RolledBack");
    expect(approvalQueue(state).map((c) => c.sessionId)).toEqual(["sess-0003"]);
    // queue position is pinned to the seq that first surfaced the session
    expect(state.sessions["sess-0001"]!.seq).toBe(1);
    expect(state.sessions["sess-0001"]!.updatedSeq).toBe(4);
  });

  it("a replayed event is ignored and cannot regress a card", () => {
    const state = applyEvents(initialViewState(), [...pending.events, ...decisions.events]);
    const replayed = applyEvent(state, pending.events[0]!);
    expect(replayed).toBe(state);
    expect(replayed.cursor).toBe(5);
    expect(replayed.sessions["sess-0001"]!.state).toBe("Committed");
  });

  it("a shuffled batch folds to the same state as the ordered one", () => {
    const ordered = applyEvents(initialViewState(), [...pending.events, ...decisions.events]);
    const shuffled = [
      decisions.events[1]!,
      pending.events[2]!,
      pending.events[0]!,
      decisions.events[0]!,
      pending.events[1]!,
    ];
    expect(applyEvents(initialViewState(), shuffled)).toEqual(ordered);
  });

  it("fault events toggle the active flag", () => {
    let state = applyEvents(initialViewState(), faultFeed.events);
    const fault = state.faults["pinch-after-e2"]!;
    expect(fault.active).toBe(true);
    expect(fault.linkId).toBe("line-p1-p2");
    expect(fault.magnitudeDb).toBe(2.0);
    expect(fault.distanceKm).toBe(160.0);
    expect(activeFaults(state)).toHaveLength(1);

    const clear: GatewayEvent = {
      seq: state.cursor + 1,
      timestamp: state.cursor + 1,
      kind: "fault",
      payload: { op: "clear", fault_id: "pinch-after-e2" },
      effects: [],
      state: {},
    };
    state = applyEvent(state, clear);
    expect(state.faults["pinch-after-e2"]!.active).toBe(false);
    expect(activeFaults(state)).toHaveLength(0);
  });

  it("calibration and settings events only advance the cursor", () => {
    const calibration: GatewayEvent = {
      seq: 9,
      timestamp: 9,
      kind: "calibration",
      payload: { calibration_id: "cal-0001", link_id: "line-p1-p2" },
      effects: [],
      state: {},
    };
    const state = applyEvent(initialViewState(), calibration);
    expect(state.cursor).toBe(9);
    expect(sessionList(state)).toHaveLength(0);
  });
});

describe("foldSessionView", () => {
  it("keeps the queue position and the cursor untouched", () => {
    const state = applyEvents(initialViewState(), pending.events);
    const committed = loadFixture<SessionView>("decision_approve.json");
    const next = foldSessionView(state, committed);
    expect(next.cursor).toBe(3);
    expect(next.sessions["sess-0001"]!.state).toBe("Committed");
    expect(next.sessions["sess-0001"]!.canDecide).toBe(false);
    expect(next.sessions["sess-0001"]!.seq).toBe(1);
  });
});
