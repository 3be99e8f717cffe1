import type { FaultRow } from "./state.js";
import type { ProfileResponse } from "./types.js";

export interface SeriesPoint {
  distanceKm: number;
  powerDb: number;
}

export interface ChartSeries {
  label: string;
  points: SeriesPoint[];
}

/** A server-reported loss event drawn on the chart at its distance. */
export interface LossMarker {
  distanceKm: number;
  magnitudeDb: number;
  label: string;
}

export type OverlayModel =
  | {
      status: "ready";
      linkId: string;
      baseline: ChartSeries;
      current: ChartSeries;
      /** Pointwise `current − baseline`, same distance grid as the inputs. */
      difference: ChartSeries;
      markers: LossMarker[];
    }
  | { status: "placeholder"; linkId: string; reason: string; retry: true };

export function seriesFromProfile(label: string, profile: ProfileResponse): ChartSeries {
  return {
    label,
    points: profile.rows.map(([distanceKm, powerDb]) => ({ distanceKm, powerDb })),
  };
}

function placeholder(linkId: string, reason: string): OverlayModel {
  return { status: "placeholder", linkId, reason, retry: true };
}

/** Build the baseline-vs-current chart model for one link.
 *
 * The difference trace is recomputed client-side from the two fetched series,
 * so the drawn plateau can be cross-checked against the markers the server
 * reported (see {@link estimateStepFromDifference}). A missing or empty
 * series yields a placeholder the UI renders with a retry affordance.
 */
export function buildProfileOverlay(
  linkId: string,
  baseline: ProfileResponse | null | undefined,
  current: ProfileResponse | null | undefined,
  markers: LossMarker[] = [],
): OverlayModel {
  if (!baseline || baseline.rows.length === 0) {
    return placeholder(linkId, "baseline profile unavailable");
  }
  if (!current || current.rows.length === 0) {
    return placeholder(linkId, "current profile unavailable");
  }
  if (baseline.rows.length !== current.rows.length) {
    return placeholder(linkId, "profiles sampled on different grids");
  }
  const difference: SeriesPoint[] = [];
  for (let i = 0; i < baseline.rows.length; i++) {
    const [baseDistance, basePower] = baseline.rows[i]!;
    const [curDistance, curPower] = current.rows[i]!;
    if (baseDistance !== curDistance) {
      return placeholder(linkId, "profiles sampled on different grids");
    }
    difference.push({ distanceKm: curDistance, powerDb: curPower - basePower });
  }
  return {
    status: "ready",
    linkId,
    baseline: seriesFromProfile("baseline", baseline),
    current: seriesFromProfile("current", current),
    difference: { label: "current − baseline", points: difference },
    markers: [...markers].sort((a, b) => a.distanceKm - b.distanceKm),
  };
}

/** Chart markers for the server-reported loss events on a link: the active
 * step-loss faults with a known distance. A fault adding N dB of loss shows
 * up as a −N dB drop in the difference trace, so the marker carries the
 * signed change the chart should agree with. */
export function markersFromFaults(faults: FaultRow[]): LossMarker[] {
  const markers: LossMarker[] = [];
  for (const fault of faults) {
    if (fault.active && fault.kind === "step_loss" && fault.distanceKm !== null) {
      markers.push({
        distanceKm: fault.distanceKm,
        magnitudeDb: -(fault.magnitudeDb ?? 0),
        label: fault.faultId,
      });
    }
  }
  return markers;
}

/** Largest single-sample step in a difference trace.
 *
 * Returns the distance of the first sample past the jump and the signed jump
 * size, or null when no jump reaches `minStepDb`. This is the client-side
 * sanity check that the plateau it draws agrees with the server-reported
 * marker to within one sample spacing.
 */
export function estimateStepFromDifference(
  difference: ChartSeries,
  minStepDb = 0.5,
): { distanceKm: number; magnitudeDb: number } | null {
  let best: { distanceKm: number; magnitudeDb: number } | null = null;
  for (let i = 1; i < difference.points.length; i++) {
    const jump = difference.points[i]!.powerDb - difference.points[i - 1]!.powerDb;
    if (Math.abs(jump) >= minStepDb && (best === null || Math.abs(jump) > Math.abs(best.magnitudeDb))) {
      best = { distanceKm: difference.points[i]!.distanceKm, magnitudeDb: jump };
    }
  }
  return best;
}
