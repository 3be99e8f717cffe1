/** In-memory stand-in for the gateway, replaying wire fixtures captured from
 * a live service. It implements just enough of the HTTP surface for the
 * console: the event feed, session views, the decision endpoint with its
 * success/conflict behavior, link profiles, and fault injection. */

import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import type { FetchLike, FetchResponseLike } from "../src/client.js";
import type {
  EventBatch,
  GatewayEvent,
  ProfileResponse,
  SessionView,
  Verdict,
} from "../src/types.js";

const FIXTURE_DIR = join(dirname(fileURLToPath(import.meta.url)), "fixtures");

export function loadFixture<T>(name: string): T {
  return JSON.parse(readFileSync(join(FIXTURE_DIR, name), "utf8")) as T;
}

function jsonResponse(status: number, body: unknown): FetchResponseLike {
  return {
    ok: status >= 200 && status < 300,
    status,
    json: () => Promise.resolve(body),
  };
}

function errorResponse(status: number, error: string, detail: string): FetchResponseLike {
  return jsonResponse(status, { detail: { error, detail } });
}

export class FixtureService {
  private readonly events: GatewayEvent[] = [];
  private readonly sessions = new Map<string, SessionView>();
  private nextSeq = 1;

  /** When true, profile requests serve the faulted capture. */
  faultActive = false;
  /** Reject the next request with a network error (connectivity loss). */
  failNextRequest = false;
  /** Every request seen, as "METHOD url" — lets tests assert read-only-ness. */
  readonly requests: string[] = [];

  /** Load a captured event batch into the feed and session table. */
  seedEvents(batch: EventBatch): void {
    for (const event of batch.events) {
      this.events.push(event);
      this.nextSeq = Math.max(this.nextSeq, event.seq + 1);
      const view = (event.payload as { session?: SessionView }).session;
      if (view !== undefined) {
        this.sessions.set(view.session_id, view);
      }
    }
  }

  private pushDecision(sessionId: string, verdict: Verdict, reason: string): SessionView {
    const view = this.sessions.get(sessionId);
    if (view === undefined) {
      throw new Error(`fixture has no session ${sessionId}`);
    }
    const decided: SessionView = {
      ...view,
      pending: false,
      state: verdict === "approve" ? "Committed" : "RolledBack",
      decision: { verdict, reason },
    };
    this.sessions.set(sessionId, decided);
    const seq = this.nextSeq++;
    this.events.push({
      seq,
      timestamp: seq,
      kind: "decision",
      payload: { session_id: sessionId, verdict, reason, session: decided },
      effects: [],
      state: {},
    });
    return decided;
  }

  /** Decide server-side without telling the client — races the operator. */
  decideOutOfBand(sessionId: string, verdict: Verdict): void {
    this.pushDecision(sessionId, verdict, "raced by another operator");
  }

  readonly fetch: FetchLike = (url, init) => {
    if (this.failNextRequest) {
      this.failNextRequest = false;
      return Promise.reject(new TypeError("fetch failed"));
    }
    const method = init?.method ?? "GET";
    this.requests.push(`${method} ${url}`);
    const { pathname, searchParams } = new URL(url);
    return Promise.resolve(this.route(method, pathname, searchParams, init?.body));
  };

  private route(
    method: string,
    pathname: string,
    searchParams: URLSearchParams,
    body: string | undefined,
  ): FetchResponseLike {
    if (method === "GET" && pathname === "/events") {
      const since = Number(searchParams.get("since") ?? "0");
      const events = this.events.filter((e) => e.seq > since);
      const cursor = events.length > 0 ? events[events.length - 1]!.seq : since;
      return jsonResponse(200, { events, cursor });
    }

    const sessionMatch = /^\/sessions\/([^/]+)$/.exec(pathname);
    if (method === "GET" && sessionMatch !== null) {
      const view = this.sessions.get(sessionMatch[1]!);
      if (view === undefined) {
        return errorResponse(404, "UnknownTarget", `unknown session ${sessionMatch[1]}`);
      }
      return jsonResponse(200, { ...view, log: [] });
    }

    const decisionMatch = /^\/sessions\/([^/]+)\/decision$/.exec(pathname);
    if (method === "POST" && decisionMatch !== null) {
      const sessionId = decisionMatch[1]!;
      const view = this.sessions.get(sessionId);
      if (view === undefined) {
        return errorResponse(404, "UnknownTarget", `unknown session ${sessionId}`);
      }
      if (!view.pending) {
        return errorResponse(
          409,
          "NotPending",
          `session ${sessionId} is ${view.state}, not PendingApproval`,
        );
      }
      const req = JSON.parse(body ?? "{}") as { verdict: Verdict; reason?: string };
      return jsonResponse(200, this.pushDecision(sessionId, req.verdict, req.reason ?? ""));
    }

    const profileMatch = /^\/links\/([^/]+)\/profile$/.exec(pathname);
    if (method === "GET" && profileMatch !== null) {
      const fixture = this.faultActive ? "profile_faulted.json" : "profile_baseline.json";
      const profile = loadFixture<ProfileResponse>(fixture);
      if (profile.link_id !== profileMatch[1]) {
        return errorResponse(404, "UnknownTarget", `unknown link ${profileMatch[1]}`);
      }
      return jsonResponse(200, profile);
    }

    if (method === "POST" && pathname === "/faults") {
      const req = JSON.parse(body ?? "{}") as Record<string, unknown>;
      const faultId = String(req["id"] ?? `fault-${this.nextSeq}`);
      this.faultActive = true;
      const seq = this.nextSeq++;
      this.events.push({
        seq,
        timestamp: seq,
        kind: "fault",
        payload: {
          op: "inject",
          fault_id: faultId,
          link_id: req["link_id"],
          kind: req["kind"],
          magnitude_db: req["magnitude_db"],
          distance_km: req["distance_km"] ?? null,
          edfa_id: req["edfa_id"] ?? null,
        },
        effects: [],
        state: {},
      });
      return jsonResponse(201, { fault_id: faultId });
    }

    return errorResponse(404, "UnknownTarget", `${method} ${pathname} not wired in fixture`);
  }
}
