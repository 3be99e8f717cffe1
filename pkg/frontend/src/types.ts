/** Wire types for the dcxtwin gateway HTTP/JSON API. */

export type Verdict = "approve" | "rollback";

export interface Decision {
  verdict: Verdict;
  reason: string;
}

/** One provisioning session as the gateway reports it. */
export interface SessionView {
  session_id: string;
  state: string;
  pending: boolean;
  route_id: string | null;
  mode_id: string | null;
  channel_index: number | null;
  gsnr_db: number | null;
  error: string | null;
  decision: Decision | null;
}

export interface SessionLogEntry {
  seq: number;
  session_id: string;
  direction: string;
  kind: string;
  payload: Record<string, unknown>;
  resulting_state: string;
}

export type EventKind = "session" | "fault" | "calibration" | "decision" | "settings";

/** One entry of the gateway's append-only event feed. */
export interface GatewayEvent {
  seq: number;
  timestamp: number;
  kind: EventKind;
  payload: Record<string, unknown>;
  effects: unknown[];
  state: Record<string, unknown>;
}

export interface EventBatch {
  events: GatewayEvent[];
  cursor: number;
}

/** Payload of a `session` event: the session reached a resting state. */
export interface SessionEventPayload {
  session_id: string;
  terminal: string;
  session: SessionView;
  log: SessionLogEntry[];
}

/** Payload of a `decision` event: an operator (or policy) decided. */
export interface DecisionEventPayload {
  session_id: string;
  verdict: Verdict;
  reason: string;
  session: SessionView;
}

/** Payload of a `fault` event: chaos was injected or cleared. */
export interface FaultEventPayload {
  op: "inject" | "clear";
  fault_id: string;
  link_id?: string;
  kind?: string;
  magnitude_db?: number;
  distance_km?: number | null;
  edfa_id?: string | null;
}

export interface ProfileResponse {
  link_id: string;
  resolution_km: number;
  header: string[];
  rows: Array<[number, number]>;
}

export interface GsnrResponse {
  link_id: string;
  gsnr_db: number[];
  per_edfa_gsnr_db: Array<{ edfa_id: string; gsnr_db: number[] }>;
}

export interface FaultRequest {
  link_id: string;
  kind: "step_loss" | "nf_degradation";
  magnitude_db: number;
  distance_km?: number;
  edfa_id?: string;
  id?: string;
}
