import { ApiError, type GatewayClient } from "./client.js";
import { foldSessionView, type ViewState } from "./state.js";
import type { SessionView, Verdict } from "./types.js";

/** Submit approve/rollback for a session the console shows as pending.
 *
 * On success the returned terminal view is folded in: the card leaves the
 * approval queue and shows its final state. On 409 someone (or an
 * auto-approve policy) decided first — the session is re-fetched and the
 * server's answer wins. Anything else propagates to the caller.
 */
export async function submitDecision(
  client: GatewayClient,
  state: ViewState,
  sessionId: string,
  verdict: Verdict,
  reason = "",
): Promise<ViewState> {
  const card = state.sessions[sessionId];
  if (card === undefined || !card.canDecide) {
    throw new Error(`session ${sessionId} is not awaiting a decision`);
  }
  let view: SessionView;
  try {
    view = await client.decide(sessionId, verdict, reason);
  } catch (err) {
    if (err instanceof ApiError && err.status === 409) {
      view = await client.session(sessionId);
    } else {
      throw err;
    }
  }
  return foldSessionView(state, view);
}
