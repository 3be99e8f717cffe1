import type {
  EventBatch,
  FaultRequest,
  GsnrResponse,
  ProfileResponse,
  SessionLogEntry,
  SessionView,
  Verdict,
} from "./types.js";

/** Structural subset of a fetch Response — enough to read a JSON body. */
export interface FetchResponseLike {
  ok: boolean;
  status: number;
  json(): Promise<unknown>;
}

/** Injectable transport. The global `fetch` satisfies it; tests supply an
 * in-memory fixture service instead. */
export type FetchLike = (
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<FetchResponseLike>;

/** A non-2xx reply, carrying the gateway's machine-readable error code. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

interface ErrorBody {
  detail?: { error?: unknown; detail?: unknown };
}

/** Thin typed wrapper over the gateway HTTP/JSON API. Every method maps to
 * exactly one endpoint; no client-side interpretation happens here. */
export class GatewayClient {
  private readonly baseUrl: string;
  private readonly fetchImpl: FetchLike;

  constructor(baseUrl: string, fetchImpl: FetchLike = fetch as unknown as FetchLike) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
    this.fetchImpl = fetchImpl;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init =
      body === undefined
        ? { method }
        : {
            method,
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify(body),
          };
    const res = await this.fetchImpl(this.baseUrl + path, init);
    if (!res.ok) {
      let code = "HttpError";
      let message = `HTTP ${res.status}`;
      try {
        const doc = (await res.json()) as ErrorBody;
        if (doc.detail?.error !== undefined) {
          code = String(doc.detail.error);
          message = String(doc.detail.detail ?? message);
        }
      } catch {
        // non-JSON error body; keep the generic message
      }
      throw new ApiError(res.status, code, message);
    }
    return (await res.json()) as T;
  }

  topology(): Promise<Record<string, unknown>> {
    return this.request("GET", "/topology");
  }

  events(since: number): Promise<EventBatch> {
    return this.request("GET", `/events?since=${since}`);
  }

  sessions(state?: string): Promise<{ sessions: SessionView[] }> {
    const query = state === undefined ? "" : `?state=${encodeURIComponent(state)}`;
    return this.request("GET", `/sessions${query}`);
  }

  session(sessionId: string): Promise<SessionView & { log: SessionLogEntry[] }> {
    return this.request("GET", `/sessions/${encodeURIComponent(sessionId)}`);
  }

  startSession(
    siteA: string,
    siteB: string,
    policy: Record<string, unknown> = {},
  ): Promise<SessionView> {
    return this.request("POST", "/sessions", { site_a: siteA, site_b: siteB, policy });
  }

  decide(sessionId: string, verdict: Verdict, reason = ""): Promise<SessionView> {
    return this.request("POST", `/sessions/${encodeURIComponent(sessionId)}/decision`, {
      verdict,
      reason,
    });
  }

  profile(
    linkId: string,
    opts: { launchDbm?: number; resolutionKm?: number; noiseSigmaDb?: number } = {},
  ): Promise<ProfileResponse> {
    const params = new URLSearchParams();
    if (opts.launchDbm !== undefined) params.set("launch_dbm", String(opts.launchDbm));
    if (opts.resolutionKm !== undefined) params.set("resolution_km", String(opts.resolutionKm));
    if (opts.noiseSigmaDb !== undefined) params.set("noise_sigma_db", String(opts.noiseSigmaDb));
    const query = params.size > 0 ? `?${params.toString()}` : "";
    return this.request("GET", `/links/${encodeURIComponent(linkId)}/profile${query}`);
  }

  gsnr(linkId: string, launchDbm = 0.0): Promise<GsnrResponse> {
    return this.request("GET", `/links/${encodeURIComponent(linkId)}/gsnr?launch_dbm=${launchDbm}`);
  }

  injectFault(req: FaultRequest): Promise<{ fault_id: string }> {
    return this.request("POST", "/faults", req);
  }

  clearFault(faultId: string): Promise<{ fault_id: string; cleared: boolean }> {
    return this.request("DELETE", `/faults/${encodeURIComponent(faultId)}`);
  }

  calibrate(linkId: string, launchDbm = 0.0): Promise<Record<string, unknown>> {
    return this.request("POST", "/calibrations", { link_id: linkId, launch_dbm: launchDbm });
  }

  optimize(linkId: string, calibrationId?: string): Promise<Record<string, unknown>> {
    return this.request("POST", "/optimizations", {
      link_id: linkId,
      calibration_id: calibrationId ?? null,
    });
  }
}
