/** Shared fixtures for the API-mock-only test environment. */

import { vi } from "vitest";
import type {
  ClustersPayload,
  MembersPayload,
  ProjectionPayload,
  RunSummary,
  VerdictRecord,
} from "../src/api.js";

export interface MockResponseInit {
  status?: number;
  body: unknown;
}

export function jsonResponse(body: unknown, status = 200): Response {
  return {
    ok: status >= 200 && status < 300,
    status,
    json: async () => body,
  } as Response;
}

export function apiError(status: number, code: string, message: string): Response {
  return jsonResponse({ code, message }, status);
}

export interface Deferred<T> {
  promise: Promise<T>;
  resolve: (value: T) => void;
  reject: (error: unknown) => void;
}

export function deferred<T>(): Deferred<T> {
  let resolve!: (value: T) => void;
  let reject!: (error: unknown) => void;
  const promise = new Promise<T>((res, rej) => {
    resolve = res;
    reject = rej;
  });
  return { promise, resolve, reject };
}

/** A promise that settles like fetch: aborts reject with AbortError. */
export function abortable(
  pending: Promise<Response>,
  signal?: AbortSignal | null,
): Promise<Response> {
  return new Promise((resolve, reject) => {
    if (signal) {
      signal.addEventListener("abort", () =>
        reject(new DOMException("the request was aborted", "AbortError")),
      );
    }
    pending.then(resolve, reject);
  });
}

export type FetchHandler = (
  url: string,
  init?: RequestInit,
) => Response | Promise<Response>;

export interface FetchLog {
  url: string;
  method: string;
  body: unknown;
}

/** Install a fetch mock; returns the log of every request made. */
export function installFetch(handler: FetchHandler): FetchLog[] {
  const log: FetchLog[] = [];
  vi.stubGlobal(
    "fetch",
    vi.fn((input: RequestInfo | URL, init?: RequestInit) => {
      const url = String(input);
      log.push({
        url,
        method: init?.method ?? "GET",
        body: typeof init?.body === "string" ? JSON.parse(init.body) : null,
      });
      return Promise.resolve(handler(url, init));
    }),
  );
  return log;
}

export async function flush(times = 12): Promise<void> {
  for (let i = 0; i < times; i++) await Promise.resolve();
}

// -- canned payloads ----------------------------------------------------------

export function runSummary(overrides: Partial<RunSummary> = {}): RunSummary {
  return {
    id: "demo",
    seed: 7,
    note: "demo run",
    n_players: 46,
    n_days: 1,
    ready: true,
    ...overrides,
  };
}

export function verdictRecord(overrides: Partial<VerdictRecord> = {}): VerdictRecord {
  return {
    seq: 0,
    q: "0.0500",
    cluster_id: 0,
    decision: "ban",
    note: "",
    at: "2026-08-14T12:00:00Z",
    ...overrides,
  };
}

export function clustersPayload(
  overrides: Partial<ClustersPayload> = {},
): ClustersPayload {
  return {
    run_id: "demo",
    q: 0.05,
    epsilon: 0.0412,
    min_samples: 4,
    detecting_count: 11,
    metrics: {
      pos_mean: 0.731,
      neg_mean: 0.000271,
      access_homogeneity: 1.25,
      detecting_count: 11,
      n_clusters: 2,
    },
    clusters: [
      {
        id: 0,
        size: 6,
        members: [
          [31, 1],
          [32, 1],
          [33, 1],
          [34, 1],
          [35, 1],
          [36, 1],
        ],
        access_components: 1,
        pos_jaccard_mean: 0.912,
        verdict: null,
      },
      {
        id: 1,
        size: 5,
        members: [
          [40, 1],
          [41, 1],
          [42, 1],
          [43, 1],
          [44, 1],
        ],
        access_components: 2,
        pos_jaccard_mean: 0.845,
        verdict: null,
      },
    ],
    noise_count: 35,
    ...overrides,
  };
}

export function membersPayload(
  overrides: Partial<MembersPayload> = {},
): MembersPayload {
  return {
    cluster_id: 0,
    q: 0.05,
    members: [
      { player_id: 31, day: 1, access_node: 3, partner: [32, 1], pos_jaccard: 0.93 },
      { player_id: 32, day: 1, access_node: 3, partner: [31, 1], pos_jaccard: 0.93 },
      { player_id: 33, day: 1, access_node: 3, partner: [34, 1], pos_jaccard: 0.91 },
      { player_id: 34, day: 1, access_node: 3, partner: [33, 1], pos_jaccard: 0.91 },
      { player_id: 35, day: 1, access_node: 3, partner: [36, 1], pos_jaccard: 0.89 },
      { player_id: 36, day: 1, access_node: 3, partner: [35, 1], pos_jaccard: 0.89 },
    ],
    access_components: 1,
    pos_jaccard_mean: 0.912,
    verdict: null,
    history: [],
    ...overrides,
  };
}

export function projectionPayload(
  overrides: Partial<ProjectionPayload> = {},
): ProjectionPayload {
  return {
    q: 0.05,
    points: [
      { player_id: 31, day: 1, x: -1.2, y: 0.4, cluster: 0 },
      { player_id: 32, day: 1, x: -1.18, y: 0.41, cluster: 0 },
      { player_id: 40, day: 1, x: 0.9, y: -0.7, cluster: 1 },
      { player_id: 1, day: 1, x: 2.4, y: 1.9, cluster: -1 },
    ],
    ...overrides,
  };
}

/** Route requests like the /v1 service; override per-path for error cases. */
export function defaultRouter(overrides: Record<string, FetchHandler> = {}): FetchHandler {
  return (url, init) => {
    for (const [prefix, handler] of Object.entries(overrides)) {
      if (url.includes(prefix)) return handler(url, init);
    }
    if (url.endsWith("/v1/runs")) return jsonResponse({ runs: [runSummary()] });
    if (url.includes("/clusters?q=")) {
      const q = Number(url.split("q=")[1]);
      return jsonResponse(clustersPayload({ q }));
    }
    if (url.includes("/members")) return jsonResponse(membersPayload());
    if (url.includes("/verdict") && init?.method === "POST") {
      const body = JSON.parse(String(init.body)) as { decision: string; note: string };
      return jsonResponse({
        verdict: verdictRecord({
          decision: body.decision as VerdictRecord["decision"],
          note: body.note,
        }),
      });
    }
    if (url.includes("/projection")) return jsonResponse(projectionPayload());
    throw new Error(`unrouted request: ${url}`);
  };
}
