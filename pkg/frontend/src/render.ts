import { estimateStepFromDifference, type OverlayModel } from "./overlay.js";
import {
  activeFaults,
  approvalQueue,
  sessionList,
  type SessionCard,
  type ViewState,
} from "./state.js";

function db(value: number | null): string {
  return value === null ? "?" : `${value.toFixed(2)} dB`;
}

function km(value: number | null): string {
  return value === null ? "?" : `${value.toFixed(1)} km`;
}

function queueLine(card: SessionCard): string {
  const route = card.routeId ?? "route ?";
  const mode = card.modeId ?? "?";
  const channel = card.channelIndex === null ? "?" : String(card.channelIndex);
  // the [approve] [rollback] controls appear here and only here: queue
  // membership is exactly the server-reported PendingApproval state
  return `  [seq ${card.seq}] ${card.sessionId}  ${route}  mode ${mode}  ch ${channel}  GSNR ${db(card.gsnrDb)}  [approve] [rollback]`;
}

function sessionLine(card: SessionCard): string {
  let suffix = "";
  if (card.decision !== null) {
    suffix = `  (${card.decision.verdict}: ${card.decision.reason})`;
  } else if (card.error !== null) {
    suffix = `  (${card.error})`;
  }
  return `  ${card.sessionId}  ${card.state}${suffix}`;
}

function overlayLines(overlay: OverlayModel): string[] {
  const lines = [`Overlay - ${overlay.linkId}`];
  if (overlay.status === "placeholder") {
    lines.push(`  unavailable: ${overlay.reason} [retry]`);
    return lines;
  }
  lines.push(
    `  baseline ${overlay.baseline.points.length} pts, current ${overlay.current.points.length} pts`,
  );
  if (overlay.markers.length === 0) {
    lines.push("  markers: none");
  } else {
    for (const marker of overlay.markers) {
      lines.push(
        `  marker: ${marker.label} @ ${km(marker.distanceKm)} (${marker.magnitudeDb.toFixed(2)} dB)`,
      );
    }
  }
  const step = estimateStepFromDifference(overlay.difference);
  lines.push(
    step === null
      ? "  difference: flat"
      : `  difference: ${step.magnitudeDb.toFixed(2)} dB step @ ${km(step.distanceKm)}`,
  );
  return lines;
}

/** Render the whole console as text. A pure function of the view state:
 * equal states produce byte-identical output. */
export function renderConsole(state: ViewState): string {
  const lines: string[] = ["== dcxtwin console =="];
  if (state.banner !== null) {
    lines.push(`!! ${state.banner}`);
  }

  const queue = approvalQueue(state);
  lines.push("", `Approval queue (${queue.length})`);
  if (queue.length === 0) {
    lines.push("  (nothing pending)");
  } else {
    lines.push(...queue.map(queueLine));
  }

  const sessions = sessionList(state);
  lines.push("", `Sessions (${sessions.length})`);
  if (sessions.length === 0) {
    lines.push("  (none)");
  } else {
    lines.push(...sessions.map(sessionLine));
  }

  const faults = activeFaults(state);
  lines.push("", `Faults (${faults.length} active)`);
  if (faults.length === 0) {
    lines.push("  (none)");
  } else {
    for (const fault of faults) {
      const where = fault.edfaId === null ? (fault.linkId ?? "?") : `${fault.linkId} / ${fault.edfaId}`;
      const size = fault.magnitudeDb === null ? "?" : `${fault.magnitudeDb.toFixed(1)} dB`;
      const at = fault.distanceKm === null ? "" : ` @ ${km(fault.distanceKm)}`;
      lines.push(`  ${fault.faultId}  ${fault.kind ?? "?"} on ${where}  ${size}${at}`);
    }
  }

  if (state.overlay !== null) {
    lines.push("", ...overlayLines(state.overlay));
  }
  return lines.join("\n");
}
