export { ApiError, GatewayClient } from "./client.js";
export type { FetchLike, FetchResponseLike } from "./client.js";
export { submitDecision } from "./decisions.js";
export {
  buildProfileOverlay,
  estimateStepFromDifference,
  markersFromFaults,
  seriesFromProfile,
} from "./overlay.js";
export type { ChartSeries, LossMarker, OverlayModel, SeriesPoint } from "./overlay.js";
export { DEFAULT_POLL_INTERVAL_MS, pollAndRender, startPolling } from "./poll.js";
export { renderConsole } from "./render.js";
export {
  activeFaults,
  applyEvent,
  applyEvents,
  approvalQueue,
  foldSessionView,
  initialViewState,
  selectLink,
  selectSession,
  sessionList,
  setOverlay,
} from "./state.js";
export type { FaultRow, SessionCard, ViewState } from "./state.js";
export type {
  Decision,
  DecisionEventPayload,
  EventBatch,
  EventKind,
  FaultEventPayload,
  FaultRequest,
  GatewayEvent,
  GsnrResponse,
  ProfileResponse,
  SessionEventPayload,
  SessionLogEntry,
  SessionView,
  Verdict,
} from "./types.js";
