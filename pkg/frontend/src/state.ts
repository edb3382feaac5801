/**
 * Console state and the actions that mutate it.
 *
 * All data flows in from the /v1 API; the store never derives metric
 * values of its own. Concurrency contract: q changes are debounced and
 * at most one /clusters request is in flight per run (newer requests
 * abort older ones), with last-write-wins keyed by (run, q).
 */

import {
  ApiRequestError,
  ReviewApi,
  type ClustersPayload,
  type MembersPayload,
  type ProjectionPayload,
  type RunSummary,
  type VerdictDecision,
  type VerdictRecord,
} from "./api.js";

export const Q_MIN = 0.01;
export const Q_MAX = 0.3;
export const Q_STEP = 0.01;
export const DEFAULT_Q = 0.05;

export type FetchState = "idle" | "loading" | "loaded" | "error";

export interface ConsoleState {
  runs: RunSummary[];
  runsState: FetchState;
  runsError: string | null;
  run: string | null;
  q: number;
  clusters: ClustersPayload | null;
  clustersState: FetchState;
  clustersError: string | null;
  selectedCluster: number | null;
  evidence: MembersPayload | null;
  evidenceState: FetchState;
  evidenceError: string | null;
  verdictInFlight: boolean;
  toast: string | null;
  projection: ProjectionPayload | null;
  projectionState: FetchState;
  projectionError: string | null;
}

function initialState(): ConsoleState {
  return {
    runs: [],
    runsState: "idle",
    runsError: null,
    run: null,
    q: DEFAULT_Q,
    clusters: null,
    clustersState: "idle",
    clustersError: null,
    selectedCluster: null,
    evidence: null,
    evidenceState: "idle",
    evidenceError: null,
    verdictInFlight: false,
    toast: null,
    projection: null,
    projectionState: "idle",
    projectionError: null,
  };
}

function describe(error: unknown): string {
  if (error instanceof ApiRequestError) return `${error.code}: ${error.message}`;
  if (error instanceof Error) return error.message;
  return String(error);
}

function isAbort(error: unknown): boolean {
  return error instanceof DOMException && error.name === "AbortError";
}

export type Listener = (state: ConsoleState) => void;

export class ConsoleStore {
  private state = initialState();
  private listeners = new Set<Listener>();
  private qTimer: ReturnType<typeof setTimeout> | null = null;
  private clustersAbort: AbortController | null = null;
  private clustersEpoch = 0;
  private evidenceEpoch = 0;
  private projectionKey: string | null = null;

  constructor(
    private readonly api: ReviewApi,
    private readonly debounceMs = 250,
  ) {}

  getState(): ConsoleState {
    return this.state;
  }

  subscribe(listener: Listener): () => void {
    this.listeners.add(listener);
    return () => this.listeners.delete(listener);
  }

  private patch(partial: Partial<ConsoleState>): void {
    this.state = { ...this.state, ...partial };
    for (const listener of this.listeners) listener(this.state);
  }

  // -- runs -------------------------------------------------------------

  async loadRuns(): Promise<void> {
    this.patch({ runsState: "loading", runsError: null });
    try {
      const runs = await this.api.listRuns();
      this.patch({ runs, runsState: "loaded" });
      if (this.state.run === null) {
        const ready = runs.find((r) => r.ready);
        if (ready) this.selectRun(ready.id);
      }
    } catch (error) {
      this.patch({ runsState: "error", runsError: describe(error) });
    }
  }

  selectRun(id: string): void {
    if (this.state.run === id) return;
    this.patch({
      run: id,
      clusters: null,
      clustersState: "idle",
      clustersError: null,
      selectedCluster: null,
      evidence: null,
      evidenceState: "idle",
      evidenceError: null,
      projection: null,
      projectionState: "idle",
      projectionError: null,
    });
    this.projectionKey = null;
    void this.loadClusters();
  }

  // -- q + cluster list -------------------------------------------------

  /** Slider input: normalize to the 0.01 grid and debounce the refetch. */
  setQ(raw: number): void {
    const q = Number(Math.min(Q_MAX, Math.max(Q_MIN, raw)).toFixed(2));
    if (q === this.state.q) return;
    this.patch({ q });
    if (this.qTimer !== null) clearTimeout(this.qTimer);
    this.qTimer = setTimeout(() => {
      this.qTimer = null;
      void this.loadClusters();
    }, this.debounceMs);
  }

  async loadClusters(): Promise<void> {
    const { run, q } = this.state;
    if (run === null) return;
    if (this.clustersAbort !== null) this.clustersAbort.abort();
    const abort = new AbortController();
    this.clustersAbort = abort;
    const epoch = ++this.clustersEpoch;
    this.patch({ clustersState: "loading", clustersError: null });
    try {
      const payload = await this.api.clusters(run, q, abort.signal);
      if (epoch !== this.clustersEpoch) return; // superseded: last write wins
      this.clustersAbort = null;
      this.patch({ clusters: payload, clustersState: "loaded" });
      this.reconcileSelection(payload);
    } catch (error) {
      if (isAbort(error) || epoch !== this.clustersEpoch) return;
      this.clustersAbort = null;
      this.patch({ clustersState: "error", clustersError: describe(error) });
    }
  }

  /** After a (run, q) change the old cluster ids may no longer exist. */
  private reconcileSelection(payload: ClustersPayload): void {
    const selected = this.state.selectedCluster;
    if (selected === null) return;
    if (payload.clusters.some((c) => c.id === selected)) {
      void this.loadEvidence(selected);
    } else {
      this.patch({
        selectedCluster: null,
        evidence: null,
        evidenceState: "idle",
        evidenceError: null,
      });
    }
  }

  // -- evidence panel ----------------------------------------------------

  selectCluster(id: number): void {
    this.patch({ selectedCluster: id });
    void this.loadEvidence(id);
  }

  async loadEvidence(id: number): Promise<void> {
    const { run, q } = this.state;
    if (run === null) return;
    const epoch = ++this.evidenceEpoch;
    this.patch({ evidenceState: "loading", evidenceError: null });
    try {
      const payload = await this.api.members(run, id, q);
      if (epoch !== this.evidenceEpoch || this.state.selectedCluster !== id) return;
      this.patch({ evidence: payload, evidenceState: "loaded" });
    } catch (error) {
      if (epoch !== this.evidenceEpoch) return;
      this.patch({ evidenceState: "error", evidenceError: describe(error) });
    }
  }

  heatmapUrl(clusterId: number | "noise"): string | null {
    const { run, q } = this.state;
    if (run === null) return null;
    return this.api.heatmapUrl(run, clusterId, q);
  }

  // -- verdicts -----------------------------------------------------------

  async submitVerdict(decision: VerdictDecision, note: string): Promise<void> {
    const { run, q, selectedCluster, evidence } = this.state;
    if (run === null || selectedCluster === null || evidence === null) return;
    if (this.state.verdictInFlight) return; // double-submit guard
    const previous = evidence.verdict;
    const optimistic: VerdictRecord = {
      seq: -1,
      q: String(q),
      cluster_id: selectedCluster,
      decision,
      note,
      at: "",
    };
    this.patch({
      verdictInFlight: true,
      evidence: { ...evidence, verdict: optimistic },
    });
    this.setBrowserVerdict(selectedCluster, optimistic);
    try {
      const record = await this.api.postVerdict(run, selectedCluster, q, decision, note);
      const current = this.state.evidence;
      this.patch({
        verdictInFlight: false,
        evidence:
          current === null
            ? null
            : {
                ...current,
                verdict: record,
                history: [...current.history, record],
              },
      });
      this.setBrowserVerdict(selectedCluster, record);
    } catch (error) {
      const current = this.state.evidence;
      this.patch({
        verdictInFlight: false,
        toast: `verdict failed — ${describe(error)}`,
        evidence: current === null ? null : { ...current, verdict: previous },
      });
      this.setBrowserVerdict(selectedCluster, previous);
    }
  }

  private setBrowserVerdict(clusterId: number, verdict: VerdictRecord | null): void {
    const clusters = this.state.clusters;
    if (clusters === null) return;
    this.patch({
      clusters: {
        ...clusters,
        clusters: clusters.clusters.map((c) =>
          c.id === clusterId ? { ...c, verdict } : c,
        ),
      },
    });
  }

  dismissToast(): void {
    this.patch({ toast: null });
  }

  // -- projection ----------------------------------------------------------

  async loadProjection(): Promise<void> {
    const { run, q } = this.state;
    if (run === null) return;
    const key = `${run}@${q}`;
    if (key === this.projectionKey && this.state.projectionState === "loaded") return;
    this.projectionKey = key;
    this.patch({ projectionState: "loading", projectionError: null });
    try {
      const payload = await this.api.projection(run, q);
      if (this.projectionKey !== key) return;
      this.patch({ projection: payload, projectionState: "loaded" });
    } catch (error) {
      if (this.projectionKey !== key) return;
      this.patch({ projectionState: "error", projectionError: describe(error) });
    }
  }
}
