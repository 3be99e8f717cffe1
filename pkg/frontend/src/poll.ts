import type { GatewayClient } from "./client.js";
import { applyEvents, type ViewState } from "./state.js";

export const DEFAULT_POLL_INTERVAL_MS = 2000;

function describe(err: unknown): string {
  return err instanceof Error ? err.message : String(err);
}

/** One polling turn: fetch everything past the cursor and fold it in.
 *
 * - No new events: returns the state unchanged (same object), cursor kept.
 * - New events: applied serialized by seq; the cursor advances monotonically.
 * - Transport failure: sets a banner and returns — pending cards, cursor,
 *   and overlays all survive; the next successful poll clears the banner.
 */
export async function pollAndRender(client: GatewayClient, state: ViewState): Promise<ViewState> {
  let batch;
  try {
    batch = await client.events(state.cursor);
  } catch (err) {
    return { ...state, banner: `gateway unreachable: ${describe(err)}` };
  }
  if (batch.events.length === 0) {
    return state.banner === null ? state : { ...state, banner: null };
  }
  const next = applyEvents(state, batch.events);
  const cursor = Math.max(next.cursor, batch.cursor);
  return { ...next, cursor, banner: null };
}

/** Recursive-setTimeout polling loop: the next turn starts only after the
 * previous one settles, so a slow gateway never piles up requests. Returns
 * a stop function. */
export function startPolling(
  tick: () => Promise<void>,
  intervalMs = DEFAULT_POLL_INTERVAL_MS,
): () => void {
  let stopped = false;
  let timer: ReturnType<typeof setTimeout> | undefined;
  const loop = () => {
    void tick()
      .catch(() => {
        // a tick owns its own errors; the loop just keeps going
      })
      .finally(() => {
        if (!stopped) timer = setTimeout(loop, intervalMs);
      });
  };
  loop();
  return () => {
    stopped = true;
    if (timer !== undefined) clearTimeout(timer);
  };
}
