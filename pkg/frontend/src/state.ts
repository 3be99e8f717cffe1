import type { OverlayModel } from "./overlay.js";
import type {
  Decision,
  DecisionEventPayload,
  FaultEventPayload,
  GatewayEvent,
  SessionEventPayload,
  SessionView,
} from "./types.js";

/** One session as shown in the console. `canDecide` mirrors the server's
 * gate: the approve/rollback controls render only while the API reports the
 * session as PendingApproval. */
export interface SessionCard {
  sessionId: string;
  state: string;
  canDecide: boolean;
  routeId: string | null;
  modeId: string | null;
  channelIndex: number | null;
  gsnrDb: number | null;
  decision: Decision | null;
  error: string | null;
  /** Event seq that first surfaced the session; fixes its queue position. */
  seq: number;
  /** Event seq of the latest update folded in. */
  updatedSeq: number;
}

export interface FaultRow {
  faultId: string;
  linkId: string | null;
  kind: string | null;
  magnitudeDb: number | null;
  distanceKm: number | null;
  edfaId: string | null;
  active: boolean;
  seq: number;
}

export interface ViewState {
  /** Last event seq folded in; never decreases. */
  readonly cursor: number;
  /** Connectivity problem shown to the operator, or null when healthy. */
  readonly banner: string | null;
  readonly selectedSession: string | null;
  readonly selectedLink: string | null;
  readonly sessions: Readonly<Record<string, SessionCard>>;
  readonly faults: Readonly<Record<string, FaultRow>>;
  readonly overlay: OverlayModel | null;
}

export function initialViewState(): ViewState {
  return {
    cursor: 0,
    banner: null,
    selectedSession: null,
    selectedLink: null,
    sessions: {},
    faults: {},
    overlay: null,
  };
}

function cardFromView(view: SessionView, seq: number, previous?: SessionCard): SessionCard {
  return {
    sessionId: view.session_id,
    state: view.state,
    canDecide: view.state === "PendingApproval",
    routeId: view.route_id,
    modeId: view.mode_id,
    channelIndex: view.channel_index,
    gsnrDb: view.gsnr_db,
    decision: view.decision,
    error: view.error,
    seq: previous?.seq ?? seq,
    updatedSeq: Math.max(seq, previous?.updatedSeq ?? 0),
  };
}

/** Fold a session view fetched outside the event stream (e.g. a decision
 * response or a 409 reconciliation) into the state. Queue position and
 * cursor are untouched — only the event feed advances the cursor. */
export function foldSessionView(state: ViewState, view: SessionView): ViewState {
  const previous = state.sessions[view.session_id];
  const card = cardFromView(view, previous?.seq ?? state.cursor, previous);
  return { ...state, sessions: { ...state.sessions, [view.session_id]: card } };
}

function applySessionPayload(state: ViewState, seq: number, view: SessionView): ViewState {
  const previous = state.sessions[view.session_id];
  return {
    ...state,
    sessions: { ...state.sessions, [view.session_id]: cardFromView(view, seq, previous) },
  };
}

function applyFaultPayload(state: ViewState, seq: number, payload: FaultEventPayload): ViewState {
  const previous = state.faults[payload.fault_id];
  const row: FaultRow =
    payload.op === "inject"
      ? {
          faultId: payload.fault_id,
          linkId: payload.link_id ?? null,
          kind: payload.kind ?? null,
          magnitudeDb: payload.magnitude_db ?? null,
          distanceKm: payload.distance_km ?? null,
          edfaId: payload.edfa_id ?? null,
          active: true,
          seq,
        }
      : previous === undefined
        ? {
            faultId: payload.fault_id,
            linkId: null,
            kind: null,
            magnitudeDb: null,
            distanceKm: null,
            edfaId: null,
            active: false,
            seq,
          }
        : { ...previous, active: false, seq: previous.seq };
  return { ...state, faults: { ...state.faults, [payload.fault_id]: row } };
}

/** Fold one event into the state. The cursor is the dedupe watermark:
 * an event at or below it has already been folded and is ignored, so a
 * replayed delivery can never regress a card. */
export function applyEvent(state: ViewState, event: GatewayEvent): ViewState {
  if (event.seq <= state.cursor) {
    return state;
  }
  const cursor = event.seq;
  let next: ViewState = state;
  switch (event.kind) {
    case "session": {
      const payload = event.payload as unknown as SessionEventPayload;
      next = applySessionPayload(state, event.seq, payload.session);
      break;
    }
    case "decision": {
      const payload = event.payload as unknown as DecisionEventPayload;
      next = applySessionPayload(state, event.seq, payload.session);
      break;
    }
    case "fault": {
      next = applyFaultPayload(state, event.seq, event.payload as unknown as FaultEventPayload);
      break;
    }
    default:
      // calibration/settings events carry no console-visible state yet
      break;
  }
  return next.cursor === cursor ? next : { ...next, cursor };
}

/** Fold a batch, serialized in seq order regardless of arrival order. */
export function applyEvents(state: ViewState, events: GatewayEvent[]): ViewState {
  return [...events].sort((a, b) => a.seq - b.seq).reduce(applyEvent, state);
}

/** Sessions awaiting a decision, in the order they entered the feed. */
export function approvalQueue(state: ViewState): SessionCard[] {
  return Object.values(state.sessions)
    .filter((card) => card.canDecide)
    .sort((a, b) => a.seq - b.seq);
}

/** All sessions, feed order. */
export function sessionList(state: ViewState): SessionCard[] {
  return Object.values(state.sessions).sort((a, b) => a.seq - b.seq);
}

/** Currently active faults, feed order. */
export function activeFaults(state: ViewState): FaultRow[] {
  return Object.values(state.faults)
    .filter((row) => row.active)
    .sort((a, b) => a.seq - b.seq);
}

export function selectSession(state: ViewState, sessionId: string | null): ViewState {
  return { ...state, selectedSession: sessionId };
}

export function selectLink(state: ViewState, linkId: string | null): ViewState {
  return { ...state, selectedLink: linkId };
}

export function setOverlay(state: ViewState, overlay: OverlayModel | null): ViewState {
  return { ...state, overlay };
}
