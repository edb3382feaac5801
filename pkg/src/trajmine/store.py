"""On-disk run registry: artifact paths, stage caching, verdicts.

A run directory holds every artifact of one pipeline execution at fixed
paths. Stages record a sha256 over their inputs plus parameters in a
`<output>.meta.json` sidecar; re-running a stage with unchanged inputs is
a no-op. Analyst verdicts append to a JSONL file (never rewritten), so
the full decision history survives restarts.
"""

from __future__ import annotations

import hashlib
import json
import time
from functools import lru_cache
from pathlib import Path

import numpy as np

from .clustering import ClusterAssignment, cluster_at_quantile
from .dataset import load_trajectories
from .extract import RepresentationSet
from .heatmap import render_assignment, render_cluster
from .metrics import metrics_report
from .simulate import AccessInfoGraph, PlayerProfile, load_players
from .world import WorldConfig, canonical_json

VERDICT_DECISIONS = ("ban", "clear", "undecided")


def hash_inputs(paths: list[Path], params: dict | None = None) -> str:
    """sha256 over input file bytes plus canonical parameter JSON."""
    digest = hashlib.sha256()
    for path in paths:
        digest.update(str(path.name).encode())
        digest.update(Path(path).read_bytes())
    if params is not None:
        digest.update(canonical_json(params).encode())
    return digest.hexdigest()


def format_q(q: float) -> str:
    return f"{q:.4f}"


class RunStore:
    """Paths and lazily cached artifacts for one run directory."""

    def __init__(self, run_dir: str | Path):
        self.run_dir = Path(run_dir)
        self._cache: dict[str, object] = {}

    # -- fixed artifact paths ------------------------------------------------
    @property
    def run_meta_path(self) -> Path:
        return self.run_dir / "run.json"

    @property
    def world_path(self) -> Path:
        return self.run_dir / "world.json"

    @property
    def scenario_path(self) -> Path:
        return self.run_dir / "scenario.json"

    @property
    def players_path(self) -> Path:
        return self.run_dir / "players.json"

    @property
    def logs_dir(self) -> Path:
        return self.run_dir / "logs"

    @property
    def vocab_path(self) -> Path:
        return self.run_dir / "vocab.txt"

    @property
    def corpus_path(self) -> Path:
        return self.run_dir / "corpus.bin"

    @property
    def trajs_path(self) -> Path:
        return self.run_dir / "trajs.bin"

    @property
    def checkpoint_path(self) -> Path:
        return self.run_dir / "model.ckpt"

    @property
    def train_report_path(self) -> Path:
        return self.run_dir / "train_report.json"

    @property
    def reps_path(self) -> Path:
        return self.run_dir / "reps.bin"

    @property
    def reps_csv_path(self) -> Path:
        return self.run_dir / "reps.csv"

    @property
    def verdicts_path(self) -> Path:
        return self.run_dir / "verdicts.jsonl"

    def clusters_path(self, q: float) -> Path:
        return self.run_dir / "clusters" / f"q_{format_q(q)}.json"

    def metrics_path(self, q: float) -> Path:
        return self.run_dir / "metrics" / f"q_{format_q(q)}.json"

    def heatmap_dir(self, q: float) -> Path:
        return self.run_dir / "heatmaps" / f"q_{format_q(q)}"

    def projection_path(self, q: float) -> Path:
        return self.run_dir / "projection" / f"q_{format_q(q)}.json"

    # -- stage cache ----------------------------------------------------------
    def meta_path(self, output: Path) -> Path:
        return output.with_suffix(output.suffix + ".meta.json")

    def is_current(self, output: Path, inputs_sha256: str) -> bool:
        meta = self.meta_path(output)
        if not output.exists() or not meta.exists():
            return False
        try:
            return json.loads(meta.read_text())["inputs_sha256"] == inputs_sha256
        except (KeyError, ValueError):
            return False

    def write_meta(self, output: Path, inputs_sha256: str, stage: str) -> None:
        self.meta_path(output).write_text(
            canonical_json({"inputs_sha256": inputs_sha256, "stage": stage})
        )

    # -- run metadata ----------------------------------------------------------
    def exists(self) -> bool:
        return self.run_meta_path.exists()

    def run_meta(self) -> dict:
        if not self.exists():
            raise FileNotFoundError(f"{self.run_dir} has no run.json")
        return json.loads(self.run_meta_path.read_text())

    def write_run_meta(self, seed: int, note: str = "") -> None:
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.run_meta_path.write_text(
            canonical_json(
                {"run_id": self.run_dir.name, "seed": seed, "note": note}
            )
        )

    @property
    def seed(self) -> int:
        return int(self.run_meta().get("seed", 0))

    # -- lazy artifact loads ----------------------------------------------------
    def world(self) -> WorldConfig:
        if "world" not in self._cache:
            self._cache["world"] = WorldConfig.load(self.world_path)
        return self._cache["world"]

    def players(self) -> tuple[list[PlayerProfile], AccessInfoGraph]:
        if "players" not in self._cache:
            self._cache["players"] = load_players(self.players_path)
        return self._cache["players"]

    def trajectories(self) -> dict[tuple[int, int], object]:
        if "trajs" not in self._cache:
            trajs, _header = load_trajectories(self.trajs_path)
            self._cache["trajs"] = {t.key: t for t in trajs}
        return self._cache["trajs"]

    def cells(self) -> dict[tuple[int, int], np.ndarray]:
        if "cells" not in self._cache:
            world = self.world()
            self._cache["cells"] = {
                key: t.cells_by_minute(world)
                for key, t in self.trajectories().items()
            }
        return self._cache["cells"]

    def reps(self) -> RepresentationSet:
        if "reps" not in self._cache:
            self._cache["reps"] = RepresentationSet.load(self.reps_path)
        return self._cache["reps"]

    # -- derived, file-cached products -------------------------------------------
    def ensure_assignment(self, q: float, min_samples: int = 4) -> ClusterAssignment:
        path = self.clusters_path(q)
        if path.exists():
            return ClusterAssignment.load(path)
        if not self.reps_path.exists():
            raise FileNotFoundError(f"{self.reps_path} missing; run embed first")
        assignment = cluster_at_quantile(self.reps(), q, min_samples)
        path.parent.mkdir(parents=True, exist_ok=True)
        assignment.save(path)
        return assignment

    def ensure_metrics(self, q: float) -> dict:
        path = self.metrics_path(q)
        if path.exists():
            return json.loads(path.read_text())
        assignment = self.ensure_assignment(q)
        profiles, access = self.players()
        report = metrics_report(
            assignment,
            self.reps(),
            self.cells(),
            access,
            profiles,
            seed=self.seed,
        )
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(canonical_json(report))
        # Byte-equal on later reads: return the parsed written form.
        return json.loads(path.read_text())

    def ensure_heatmap(self, q: float, cluster_id: int | str) -> Path:
        """Per-cluster image; cluster_id may be the string 'noise'."""
        out_dir = self.heatmap_dir(q)
        name = "noise" if cluster_id == "noise" else f"cluster_{int(cluster_id):03d}"
        path = out_dir / f"{name}.png"
        if path.exists():
            return path
        assignment = self.ensure_assignment(q)
        out_dir.mkdir(parents=True, exist_ok=True)
        cid = -1 if cluster_id == "noise" else int(cluster_id)
        render_cluster(assignment, cid, self.trajectories(), self.world(), path)
        return path

    def ensure_full_heatmap(self, q: float) -> dict:
        out_dir = self.heatmap_dir(q)
        main = out_dir / "clusters.png"
        noise = out_dir / "noise.png"
        if main.exists() and noise.exists():
            return {
                "image": str(main),
                "sidecar": str(main) + ".rows.json",
                "noise_image": str(noise),
                "noise_sidecar": str(noise) + ".rows.json",
            }
        assignment = self.ensure_assignment(q)
        out_dir.mkdir(parents=True, exist_ok=True)
        return render_assignment(
            assignment, self.trajectories(), self.world(), main, noise
        )

    def ensure_projection(self, q: float) -> dict:
        path = self.projection_path(q)
        if path.exists():
            return json.loads(path.read_text())
        reps = self.reps()
        assignment = self.ensure_assignment(q)
        points = pca_2d(reps.vectors)
        payload = {
            "q": q,
            "points": [
                {
                    "player_id": key[0],
                    "day": key[1],
                    "x": float(points[i, 0]),
                    "y": float(points[i, 1]),
                    "cluster": assignment.labels.get(key, -1),
                }
                for i, key in enumerate(reps.keys)
            ],
        }
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(canonical_json(payload))
        return json.loads(path.read_text())

    # -- verdicts -------------------------------------------------------------
    def append_verdict(
        self, q: float, cluster_id: int, decision: str, note: str = ""
    ) -> dict:
        if decision not in VERDICT_DECISIONS:
            raise ValueError(
                f"decision must be one of {VERDICT_DECISIONS}, got {decision!r}"
            )
        history = self.verdict_history()
        record = {
            "seq": len(history),
            "q": format_q(q),
            "cluster_id": int(cluster_id),
            "decision": decision,
            "note": note,
            "at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        }
        with open(self.verdicts_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")
        return record

    def verdict_history(
        self, q: float | None = None, cluster_id: int | None = None
    ) -> list[dict]:
        if not self.verdicts_path.exists():
            return []
        out = []
        for line in self.verdicts_path.read_text().splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            if q is not None and rec["q"] != format_q(q):
                continue
            if cluster_id is not None and rec["cluster_id"] != cluster_id:
                continue
            out.append(rec)
        return out

    def current_verdicts(self, q: float) -> dict[int, dict]:
        current: dict[int, dict] = {}
        for rec in self.verdict_history(q=q):
            current[rec["cluster_id"]] = rec
        return current


def pca_2d(vectors: np.ndarray) -> np.ndarray:
    """Two principal components with deterministic sign orientation.

    Each component is flipped so its largest-magnitude coordinate is
    positive, removing SVD sign ambiguity.
    """
    X = np.asarray(vectors, dtype=np.float64)
    centered = X - X.mean(axis=0, keepdims=True)
    _u, _s, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:2]
    for i in range(comps.shape[0]):
        pivot = np.argmax(np.abs(comps[i]))
        if comps[i, pivot] < 0:
            comps[i] = -comps[i]
    proj = centered @ comps.T
    if proj.shape[1] < 2:
        proj = np.pad(proj, ((0, 0), (0, 2 - proj.shape[1])))
    return proj


class RunRoot:
    """Directory of run directories, as served over HTTP."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def list_runs(self) -> list[str]:
        if not self.root.exists():
            return []
        if (self.root / "run.json").exists():
            return [self.root.name]
        return sorted(
            p.name for p in self.root.iterdir() if (p / "run.json").exists()
        )

    def get(self, run_id: str) -> RunStore:
        if (self.root / "run.json").exists():
            if run_id != self.root.name:
                raise KeyError(run_id)
            return RunStore(self.root)
        candidate = self.root / run_id
        if not (candidate / "run.json").exists():
            raise KeyError(run_id)
        return RunStore(candidate)
