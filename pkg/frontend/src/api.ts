// Thin typed client over the curation HTTP API.  Every server interaction
// of the app goes through this module, so tests can swap the transport.

import type { Decision, PairDetail, QueuePage, Stats } from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

export interface QueueQuery {
  status?: "pending" | "decided";
  offset?: number;
  limit?: number;
  order?: "asc" | "desc";
}

export interface DecisionBody {
  decision: Decision;
  annotator: string;
  confident: boolean;
}

export interface Client {
  queue(q?: QueueQuery): Promise<QueuePage>;
  pair(pairId: string): Promise<PairDetail>;
  decide(pairId: string, body: DecisionBody): Promise<void>;
  stats(): Promise<Stats>;
  exportUrl: string;
}

async function errorMessage(res: Response): Promise<string> {
  try {
    const body = await res.json();
    if (body && typeof body.error === "string") return body.error;
  } catch {
    // non-JSON error body; fall through to the status line
  }
  return `request failed with status ${res.status}`;
}

export function makeClient(fetchImpl: FetchLike, base = ""): Client {
  async function getJson<T>(path: string): Promise<T> {
    const res = await fetchImpl(base + path);
    if (!res.ok) throw new ApiError(res.status, await errorMessage(res));
    return (await res.json()) as T;
  }

  return {
    exportUrl: base + "/api/export/accepted",

    queue(q: QueueQuery = {}): Promise<QueuePage> {
      const params = new URLSearchParams();
      if (q.status !== undefined) params.set("status", q.status);
      if (q.offset !== undefined) params.set("offset", String(q.offset));
      if (q.limit !== undefined) params.set("limit", String(q.limit));
      if (q.order !== undefined) params.set("order", q.order);
      const qs = params.toString();
      return getJson<QueuePage>("/api/pairs" + (qs ? "?" + qs : ""));
    },

    pair(pairId: string): Promise<PairDetail> {
      return getJson<PairDetail>(`/api/pairs/${encodeURIComponent(pairId)}`);
    },

    async decide(pairId: string, body: DecisionBody): Promise<void> {
      const res = await fetchImpl(
        base + `/api/pairs/${encodeURIComponent(pairId)}/decision`,
        {
          method: "POST",
          headers: { "content-type": "application/json" },
          body: JSON.stringify(body),
        },
      );
      if (!res.ok) throw new ApiError(res.status, await errorMessage(res));
    },

    stats(): Promise<Stats> {
      return getJson<Stats>("/api/stats");
    },
  };
}
