import type { QueryResponse, RecordReportPayload } from "./types.js";

export class BackendError extends Error {
  constructor(message: string, readonly status?: number) {
    super(message);
  }
}

/** Thin fetch client; at most one query request is in flight at a time. */
export class BackendClient {
  private inflight: AbortController | null = null;

  constructor(readonly baseUrl: string) {}

  /** POST /query. A newer submission aborts the pending one. */
  async query(q: string, k = 10): Promise<QueryResponse> {
    this.inflight?.abort();
    const controller = new AbortController();
    this.inflight = controller;
    let resp: Response;
    try {
      resp = await fetch(`${this.baseUrl}/query`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ q, k }),
        signal: controller.signal,
      });
    } catch (err) {
      if ((err as Error).name === "AbortError") throw err;
      throw new BackendError(`backend unreachable: ${(err as Error).message}`);
    } finally {
      if (this.inflight === controller) this.inflight = null;
    }
    if (!resp.ok) {
      throw new BackendError(`query failed (${resp.status})`, resp.status);
    }
    return (await resp.json()) as QueryResponse;
  }

  /** GET /records/{id}/report. */
  async recordReport(recordId: string): Promise<RecordReportPayload> {
    let resp: Response;
    try {
      resp = await fetch(`${this.baseUrl}/records/${encodeURIComponent(recordId)}/report`);
    } catch (err) {
      throw new BackendError(`backend unreachable: ${(err as Error).message}`);
    }
    if (!resp.ok) {
      throw new BackendError(`report unavailable (${resp.status})`, resp.status);
    }
    return (await resp.json()) as RecordReportPayload;
  }
}
