/**
 * DOM views for the review console.
 *
 * Each panel re-renders from a ConsoleState snapshot; every displayed
 * number is copied from an API payload (formatting only, no derivation).
 * The heatmap raster and the members table share row order: both follow
 * the cluster's sorted member list, so row i of the image is members[i].
 */

import type { ClusterEntry, MemberRow, ProjectionPoint, VerdictRecord } from "./api.js";
import { fmt, fmtExp, memberLabel } from "./format.js";
import { Q_MAX, Q_MIN, Q_STEP, type ConsoleState, type ConsoleStore } from "./state.js";

const SVG_NS = "http://www.w3.org/2000/svg";

const CLUSTER_PALETTE = [
  "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948",
  "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac", "#86bcb6", "#d37295",
];
const NOISE_COLOR = "#c8c8c8";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className = "",
  text = "",
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text) node.textContent = text;
  return node;
}

function clear(node: HTMLElement): void {
  while (node.firstChild) node.removeChild(node.firstChild);
}

/** Clusters sorted by size descending (id ascending as tiebreak). */
export function bySizeDesc(a: ClusterEntry, b: ClusterEntry): number {
  if (a.size !== b.size) return a.size > b.size ? -1 : 1;
  return a.id < b.id ? -1 : a.id > b.id ? 1 : 0;
}

/** Map a pointer offset within the rendered raster to a row index. */
export function rowFromOffset(
  offsetY: number,
  renderedHeight: number,
  rowCount: number,
): number | null {
  if (renderedHeight <= 0 || rowCount <= 0) return null;
  const row = Math.floor((offsetY / renderedHeight) * rowCount);
  return row >= 0 && row < rowCount ? row : null;
}

/** Hover label for a heatmap row; rows are ordered like the members list. */
export function rowLabel(members: MemberRow[], row: number): string | null {
  const member = members[row];
  if (!member) return null;
  return memberLabel(member.player_id, member.day);
}

function verdictBadge(verdict: VerdictRecord | null): HTMLElement {
  if (verdict === null) return el("span", "badge badge-none", "unreviewed");
  const pending = verdict.seq < 0;
  const badge = el(
    "span",
    `badge badge-${verdict.decision}${pending ? " badge-pending" : ""}`,
    pending ? `${verdict.decision}…` : verdict.decision,
  );
  return badge;
}

function errorBanner(message: string, onRetry: () => void): HTMLElement {
  const banner = el("div", "banner banner-error");
  banner.appendChild(el("span", "banner-message", message));
  const retry = el("button", "banner-retry", "Retry");
  retry.addEventListener("click", onRetry);
  banner.appendChild(retry);
  return banner;
}

// -- header: run picker, q slider, metric summary ---------------------------

class HeaderBar {
  readonly root = el("header", "topbar");
  private runSelect = el("select", "run-select");
  private slider = el("input", "q-slider");
  private qValue = el("span", "q-value");
  private summary = el("div", "summary");

  constructor(private store: ConsoleStore) {
    this.root.appendChild(el("h1", "title", "trajmine review"));
    this.runSelect.addEventListener("change", () => {
      this.store.selectRun(this.runSelect.value);
    });
    this.root.appendChild(this.runSelect);

    const qWrap = el("label", "q-control");
    qWrap.appendChild(el("span", "q-label", "q"));
    this.slider.type = "range";
    this.slider.min = String(Q_MIN);
    this.slider.max = String(Q_MAX);
    this.slider.step = String(Q_STEP);
    this.slider.addEventListener("input", () => {
      this.store.setQ(parseFloat(this.slider.value));
    });
    qWrap.appendChild(this.slider);
    qWrap.appendChild(this.qValue);
    this.root.appendChild(qWrap);
    this.root.appendChild(this.summary);
  }

  render(state: ConsoleState): void {
    clear(this.runSelect);
    for (const run of state.runs) {
      const option = el("option", "", `${run.id}${run.ready ? "" : " (not ready)"}`);
      option.value = run.id;
      option.disabled = !run.ready;
      this.runSelect.appendChild(option);
    }
    if (state.run !== null) this.runSelect.value = state.run;

    this.slider.value = String(state.q);
    this.qValue.textContent = state.q.toFixed(2);

    clear(this.summary);
    const payload = state.clusters;
    if (payload === null || state.clustersState !== "loaded") return;
    const items: [string, string][] = [
      ["detecting", String(payload.detecting_count)],
      ["clusters", String(payload.metrics.n_clusters)],
      ["noise", String(payload.noise_count)],
      ["ε", fmtExp(payload.epsilon)],
      ["pos", fmt(payload.metrics.pos_mean)],
      ["neg", fmtExp(payload.metrics.neg_mean)],
      ["access hom.", fmt(payload.metrics.access_homogeneity)],
    ];
    for (const [label, value] of items) {
      const item = el("span", "summary-item");
      item.appendChild(el("span", "summary-label", label));
      item.appendChild(el("span", "summary-value", value));
      this.summary.appendChild(item);
    }
  }
}

// -- cluster browser ---------------------------------------------------------

class ClusterBrowser {
  readonly root = el("section", "browser");

  constructor(private store: ConsoleStore) {}

  render(state: ConsoleState): void {
    clear(this.root);
    this.root.appendChild(el("h2", "panel-title", "Clusters"));

    if (state.run === null) {
      this.root.appendChild(el("div", "empty-state", "Select a run to begin."));
      return;
    }
    if (state.clustersState === "loading") {
      this.root.appendChild(el("div", "loading", "Loading clusters…"));
      return;
    }
    if (state.clustersState === "error") {
      this.root.appendChild(
        errorBanner(state.clustersError ?? "request failed", () => {
          void this.store.loadClusters();
        }),
      );
      return;
    }
    const payload = state.clusters;
    if (payload === null) return;
    if (payload.clusters.length === 0) {
      this.root.appendChild(
        el(
          "div",
          "empty-state",
          `No clusters at q=${payload.q.toFixed(2)} — raise q for a more lenient sweep.`,
        ),
      );
      return;
    }

    const list = el("ul", "cluster-list");
    const sorted = [...payload.clusters].sort(bySizeDesc);
    for (const entry of sorted) {
      const item = el("li", "cluster-item");
      if (entry.id === state.selectedCluster) item.classList.add("selected");
      const button = el("button", "cluster-row");
      button.dataset.clusterId = String(entry.id);
      button.appendChild(el("span", "cluster-id", `#${entry.id}`));
      button.appendChild(el("span", "cluster-size", `${entry.size} members`));
      button.appendChild(
        el("span", "cluster-access", `${entry.access_components} access comp.`),
      );
      button.appendChild(
        el("span", "cluster-jaccard", `pos ${fmt(entry.pos_jaccard_mean)}`),
      );
      button.appendChild(verdictBadge(entry.verdict));
      button.addEventListener("click", () => this.store.selectCluster(entry.id));
      item.appendChild(button);
      list.appendChild(item);
    }
    this.root.appendChild(list);
  }
}

// -- evidence panel: heatmap + members + verdicts ------------------------------

class EvidencePanel {
  readonly root = el("section", "evidence");
  private heatmapRetries = 0;

  constructor(private store: ConsoleStore) {}

  render(state: ConsoleState): void {
    clear(this.root);
    this.root.appendChild(el("h2", "panel-title", "Evidence"));

    if (state.selectedCluster === null) {
      this.root.appendChild(el("div", "empty-state", "Select a cluster to inspect."));
      return;
    }
    if (state.evidenceState === "loading") {
      this.root.appendChild(el("div", "loading", "Loading evidence…"));
      return;
    }
    if (state.evidenceState === "error") {
      const id = state.selectedCluster;
      this.root.appendChild(
        errorBanner(state.evidenceError ?? "request failed", () => {
          void this.store.loadEvidence(id);
        }),
      );
      return;
    }
    const evidence = state.evidence;
    if (evidence === null) return;

    this.root.appendChild(
      el("h3", "cluster-heading", `Cluster #${evidence.cluster_id}`),
    );
    const facts = el("div", "evidence-facts");
    facts.appendChild(
      el("span", "fact", `access components: ${evidence.access_components}`),
    );
    facts.appendChild(
      el("span", "fact", `pos Jaccard mean: ${fmt(evidence.pos_jaccard_mean)}`),
    );
    const badgeWrap = el("span", "fact fact-verdict");
    badgeWrap.appendChild(verdictBadge(evidence.verdict));
    facts.appendChild(badgeWrap);
    this.root.appendChild(facts);

    this.root.appendChild(this.heatmapFigure(state, evidence.members));
    this.root.appendChild(this.membersTable(evidence.members));
    this.root.appendChild(this.verdictForm(state));
    this.root.appendChild(this.historyList(evidence.history));
  }

  /** Raster rows follow the members list order, so hover uses members[i]. */
  private heatmapFigure(state: ConsoleState, members: MemberRow[]): HTMLElement {
    const figure = el("figure", "heatmap");
    const url = this.store.heatmapUrl(state.selectedCluster as number);
    if (url === null) return figure;
    const img = el("img", "heatmap-img");
    img.alt = `trajectory heatmap for cluster ${state.selectedCluster}`;
    img.src = this.heatmapRetries > 0 ? `${url}&retry=${this.heatmapRetries}` : url;
    const tooltip = el("figcaption", "heatmap-tooltip", "hover a row for the player");
    img.addEventListener("error", () => {
      clear(figure);
      figure.appendChild(
        errorBanner("heatmap not available yet", () => {
          this.heatmapRetries += 1; // cache-bust: server renders on demand
          this.render(this.store.getState());
        }),
      );
    });
    img.addEventListener("mousemove", (event: MouseEvent) => {
      const height = img.clientHeight;
      const row = rowFromOffset(event.offsetY, height, members.length);
      const label = row === null ? null : rowLabel(members, row);
      tooltip.textContent = label === null ? "hover a row for the player" : `row ${row}: ${label}`;
    });
    figure.appendChild(img);
    figure.appendChild(tooltip);
    return figure;
  }

  private membersTable(members: MemberRow[]): HTMLElement {
    const table = el("table", "members");
    const head = el("tr", "");
    for (const column of ["member", "access node", "paired with", "pos Jaccard"]) {
      head.appendChild(el("th", "", column));
    }
    table.appendChild(head);
    for (const member of members) {
      const row = el("tr", "member-row");
      row.appendChild(el("td", "", memberLabel(member.player_id, member.day)));
      row.appendChild(
        el("td", "", member.access_node === null ? "—" : String(member.access_node)),
      );
      row.appendChild(
        el(
          "td",
          "",
          member.partner === null ? "—" : memberLabel(member.partner[0], member.partner[1]),
        ),
      );
      row.appendChild(el("td", "", fmt(member.pos_jaccard)));
      table.appendChild(row);
    }
    return table;
  }

  private verdictForm(state: ConsoleState): HTMLElement {
    const form = el("div", "verdict-form");
    const note = el("input", "verdict-note");
    note.type = "text";
    note.placeholder = "reviewer note";
    const ban = el("button", "verdict-button verdict-ban", "Ban");
    const clearBtn = el("button", "verdict-button verdict-clear", "Clear");
    ban.disabled = state.verdictInFlight;
    clearBtn.disabled = state.verdictInFlight;
    ban.addEventListener("click", () => {
      void this.store.submitVerdict("ban", note.value);
    });
    clearBtn.addEventListener("click", () => {
      void this.store.submitVerdict("clear", note.value);
    });
    form.appendChild(note);
    form.appendChild(ban);
    form.appendChild(clearBtn);
    return form;
  }

  private historyList(history: VerdictRecord[]): HTMLElement {
    const wrap = el("div", "history");
    wrap.appendChild(el("h4", "history-title", "Verdict history"));
    if (history.length === 0) {
      wrap.appendChild(el("div", "history-empty", "No verdicts recorded."));
      return wrap;
    }
    const list = el("ol", "history-list");
    for (const record of history) {
      list.appendChild(
        el(
          "li",
          "history-item",
          `${record.decision}${record.note ? ` — ${record.note}` : ""} (${record.at})`,
        ),
      );
    }
    wrap.appendChild(list);
    return wrap;
  }
}

// -- projection scatter --------------------------------------------------------

export function clusterColor(cluster: number): string {
  if (cluster < 0) return NOISE_COLOR;
  return CLUSTER_PALETTE[cluster % CLUSTER_PALETTE.length];
}

function scale(value: number, lo: number, hi: number, size: number, pad: number): number {
  if (hi === lo) return size / 2;
  return pad + ((value - lo) / (hi - lo)) * (size - 2 * pad);
}

class ProjectionView {
  readonly root = el("section", "projection");

  constructor(private store: ConsoleStore) {}

  render(state: ConsoleState): void {
    clear(this.root);
    this.root.appendChild(el("h2", "panel-title", "Projection"));
    if (state.projectionState === "loading") {
      this.root.appendChild(el("div", "loading", "Loading projection…"));
      return;
    }
    if (state.projectionState === "error") {
      this.root.appendChild(
        errorBanner(state.projectionError ?? "request failed", () => {
          void this.store.loadProjection();
        }),
      );
      return;
    }
    const projection = state.projection;
    if (projection === null) return;
    this.root.appendChild(this.scatter(projection.points));
    this.root.appendChild(
      el("div", "projection-note", `${projection.points.length} trajectories, colored by cluster`),
    );
  }

  private scatter(points: ProjectionPoint[]): SVGSVGElement {
    const width = 480;
    const height = 360;
    const pad = 12;
    const svg = document.createElementNS(SVG_NS, "svg");
    svg.setAttribute("class", "scatter");
    svg.setAttribute("viewBox", `0 0 ${width} ${height}`);
    if (points.length === 0) return svg;
    const xs = points.map((p) => p.x);
    const ys = points.map((p) => p.y);
    const xLo = Math.min(...xs);
    const xHi = Math.max(...xs);
    const yLo = Math.min(...ys);
    const yHi = Math.max(...ys);
    for (const point of points) {
      const dot = document.createElementNS(SVG_NS, "circle");
      dot.setAttribute("cx", scale(point.x, xLo, xHi, width, pad).toFixed(1));
      dot.setAttribute("cy", scale(point.y, yLo, yHi, height, pad).toFixed(1));
      dot.setAttribute("r", point.cluster < 0 ? "2" : "3");
      dot.setAttribute("fill", clusterColor(point.cluster));
      dot.appendChild(
        Object.assign(document.createElementNS(SVG_NS, "title"), {
          textContent: `${memberLabel(point.player_id, point.day)} → ${
            point.cluster < 0 ? "noise" : `cluster ${point.cluster}`
          }`,
        }),
      );
      svg.appendChild(dot);
    }
    return svg;
  }
}

// -- application shell -----------------------------------------------------------

export class App {
  private header: HeaderBar;
  private browser: ClusterBrowser;
  private evidence: EvidencePanel;
  private projection: ProjectionView;
  private toastRoot = el("div", "toast-root");
  private tabs = el("nav", "tabs");
  private main = el("main", "panels");
  private view: "clusters" | "projection" = "clusters";

  constructor(
    private root: HTMLElement,
    private store: ConsoleStore,
  ) {
    this.header = new HeaderBar(store);
    this.browser = new ClusterBrowser(store);
    this.evidence = new EvidencePanel(store);
    this.projection = new ProjectionView(store);
  }

  mount(): void {
    this.root.appendChild(this.header.root);
    for (const name of ["clusters", "projection"] as const) {
      const tab = el("button", "tab", name);
      tab.dataset.view = name;
      tab.addEventListener("click", () => this.switchView(name));
      this.tabs.appendChild(tab);
    }
    this.root.appendChild(this.tabs);
    this.root.appendChild(this.main);
    this.root.appendChild(this.toastRoot);
    this.store.subscribe((state) => this.render(state));
    this.render(this.store.getState());
  }

  private switchView(view: "clusters" | "projection"): void {
    this.view = view;
    if (view === "projection") void this.store.loadProjection();
    this.render(this.store.getState());
  }

  private render(state: ConsoleState): void {
    this.header.render(state);
    for (const tab of Array.from(this.tabs.children)) {
      tab.classList.toggle("active", (tab as HTMLElement).dataset.view === this.view);
    }
    clear(this.main);
    if (this.view === "clusters") {
      this.browser.render(state);
      this.evidence.render(state);
      this.main.appendChild(this.browser.root);
      this.main.appendChild(this.evidence.root);
    } else {
      this.projection.render(state);
      this.main.appendChild(this.projection.root);
    }
    clear(this.toastRoot);
    if (state.toast !== null) {
      const toast = el("div", "toast", state.toast);
      const dismiss = el("button", "toast-dismiss", "×");
      dismiss.addEventListener("click", () => this.store.dismissToast());
      toast.appendChild(dismiss);
      this.toastRoot.appendChild(toast);
    }
  }
}
