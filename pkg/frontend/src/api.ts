/**
 * Typed client for the /v1 review API.
 *
 * Every number the console displays comes out of one of these responses;
 * the client never recomputes clusters or metrics. Error responses follow
 * the service's `{code, message}` envelope and surface as ApiRequestError.
 */

export type VerdictDecision = "ban" | "clear" | "undecided";

export interface RunSummary {
  id: string;
  seed: number | null;
  note: string;
  n_players: number | null;
  n_days: number | null;
  ready: boolean;
}

export interface VerdictRecord {
  seq: number;
  q: string;
  cluster_id: number;
  decision: VerdictDecision;
  note: string;
  at: string;
}

export interface ClusterEntry {
  id: number;
  size: number;
  members: [number, number][];
  access_components: number;
  pos_jaccard_mean: number | null;
  verdict: VerdictRecord | null;
}

export interface MetricsSummary {
  pos_mean: number | null;
  neg_mean: number | null;
  access_homogeneity: number | null;
  detecting_count: number;
  n_clusters: number;
}

export interface ClustersPayload {
  run_id: string;
  q: number;
  epsilon: number;
  min_samples: number;
  detecting_count: number;
  metrics: MetricsSummary;
  clusters: ClusterEntry[];
  noise_count: number;
}

export interface MemberRow {
  player_id: number;
  day: number;
  access_node: number | null;
  partner: [number, number] | null;
  pos_jaccard: number | null;
}

export interface MembersPayload {
  cluster_id: number;
  q: number;
  members: MemberRow[];
  access_components: number;
  pos_jaccard_mean: number | null;
  verdict: VerdictRecord | null;
  history: VerdictRecord[];
}

export interface ProjectionPoint {
  player_id: number;
  day: number;
  x: number;
  y: number;
  cluster: number;
}

export interface ProjectionPayload {
  q: number;
  points: ProjectionPoint[];
}

export class ApiRequestError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiRequestError";
  }
}

async function toError(response: Response): Promise<ApiRequestError> {
  let code = "unknown";
  let message = `request failed with status ${response.status}`;
  try {
    const body = (await response.json()) as { code?: string; message?: string };
    if (body.code) code = body.code;
    if (body.message) message = body.message;
  } catch {
    // non-JSON error body; keep the generic message
  }
  return new ApiRequestError(response.status, code, message);
}

export class ReviewApi {
  constructor(private readonly base: string = "") {}

  private async getJson<T>(path: string, signal?: AbortSignal): Promise<T> {
    const response = await fetch(this.base + path, { signal });
    if (!response.ok) throw await toError(response);
    return (await response.json()) as T;
  }

  async listRuns(): Promise<RunSummary[]> {
    const body = await this.getJson<{ runs: RunSummary[] }>("/v1/runs");
    return body.runs;
  }

  clusters(run: string, q: number, signal?: AbortSignal): Promise<ClustersPayload> {
    return this.getJson(`/v1/runs/${encodeURIComponent(run)}/clusters?q=${q}`, signal);
  }

  members(run: string, clusterId: number, q: number): Promise<MembersPayload> {
    return this.getJson(
      `/v1/runs/${encodeURIComponent(run)}/clusters/${clusterId}/members?q=${q}`,
    );
  }

  /** URL for an <img>; the server renders and caches the raster on demand. */
  heatmapUrl(run: string, clusterId: number | "noise", q: number): string {
    return `${this.base}/v1/runs/${encodeURIComponent(run)}/clusters/${clusterId}/heatmap?q=${q}`;
  }

  async postVerdict(
    run: string,
    clusterId: number,
    q: number,
    decision: VerdictDecision,
    note: string,
  ): Promise<VerdictRecord> {
    const response = await fetch(
      `${this.base}/v1/runs/${encodeURIComponent(run)}/clusters/${clusterId}/verdict?q=${q}`,
      {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ decision, note }),
      },
    );
    if (!response.ok) throw await toError(response);
    const body = (await response.json()) as { verdict: VerdictRecord };
    return body.verdict;
  }

  projection(run: string, q: number): Promise<ProjectionPayload> {
    return this.getJson(`/v1/runs/${encodeURIComponent(run)}/projection?q=${q}`);
  }
}
