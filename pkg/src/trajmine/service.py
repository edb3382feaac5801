"""HTTP review API over a directory of runs.

Every response is derived from RunStore artifacts on disk, so the service
is restart-safe. Derived products (assignments, metrics, heatmaps,
projections) are computed on first request and cached as files; later
requests serve the cached bytes unchanged. Errors are JSON objects with
`code` and `message`.
"""

from __future__ import annotations

import json
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .store import RunRoot, RunStore, VERDICT_DECISIONS


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


class VerdictBody(BaseModel):
    decision: str
    note: str = ""


def _parse_q(raw: str | None) -> float:
    if raw is None:
        return 0.05
    try:
        q = float(raw)
    except ValueError:
        raise ApiError(422, "invalid-q", f"q must be a number, got {raw!r}")
    if not 0.0 < q <= 1.0:
        raise ApiError(422, "invalid-q", f"q must be in (0, 1], got {q}")
    return q


def _get_run(root: RunRoot, run_id: str) -> RunStore:
    try:
        return root.get(run_id)
    except KeyError:
        raise ApiError(404, "unknown-run", f"no run named {run_id!r}")


def _require(store: RunStore, path: Path, what: str) -> None:
    if not path.exists():
        raise ApiError(
            409,
            "missing-artifact",
            f"run {store.run_dir.name!r} has no {what} yet ({path.name})",
        )


def _cluster_payload(store: RunStore, q: float) -> dict:
    _require(store, store.reps_path, "representations")
    metrics = store.ensure_metrics(q)
    verdicts = store.current_verdicts(q)
    clusters = []
    for entry in metrics["per_cluster"]:
        clusters.append(
            {
                "id": entry["id"],
                "size": entry["size"],
                "members": entry["members"],
                "access_components": entry["access_components"],
                "pos_jaccard_mean": entry["pos_jaccard_mean"],
                "verdict": verdicts.get(entry["id"]),
            }
        )
    assignment = store.ensure_assignment(q)
    return {
        "run_id": store.run_dir.name,
        "q": q,
        "epsilon": metrics["epsilon"],
        "min_samples": assignment.min_samples,
        "detecting_count": metrics["detecting_count"],
        "metrics": {
            "pos_mean": metrics["pos_mean"],
            "neg_mean": metrics["neg_mean"],
            "access_homogeneity": metrics["access_homogeneity"],
            "detecting_count": metrics["detecting_count"],
            "n_clusters": metrics["n_clusters"],
        },
        "clusters": clusters,
        "noise_count": len(assignment.noise()),
    }


def create_app(root_dir: str | Path, console_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="trajmine review service", docs_url=None, redoc_url=None)
    root = RunRoot(root_dir)

    @app.exception_handler(ApiError)
    async def _api_error(_request: Request, exc: ApiError):
        return JSONResponse(
            status_code=exc.status,
            content={"code": exc.code, "message": exc.message},
        )

    @app.exception_handler(Exception)
    async def _unhandled(_request: Request, exc: Exception):
        return JSONResponse(
            status_code=500, content={"code": "internal", "message": str(exc)}
        )

    @app.get("/v1/runs")
    def list_runs():
        runs = []
        for run_id in root.list_runs():
            store = root.get(run_id)
            meta = store.run_meta()
            n_days = None
            n_players = None
            if store.players_path.exists():
                profiles, _access = store.players()
                n_players = len(profiles)
            if store.scenario_path.exists():
                n_days = json.loads(store.scenario_path.read_text()).get("n_days")
            runs.append(
                {
                    "id": run_id,
                    "seed": meta.get("seed"),
                    "note": meta.get("note", ""),
                    "n_players": n_players,
                    "n_days": n_days,
                    "ready": store.reps_path.exists(),
                }
            )
        return {"runs": runs}

    @app.get("/v1/runs/{run_id}/clusters")
    def clusters(run_id: str, q: str | None = None):
        store = _get_run(root, run_id)
        return _cluster_payload(store, _parse_q(q))

    @app.get("/v1/runs/{run_id}/clusters/{cluster_id}/heatmap")
    def heatmap(run_id: str, cluster_id: str, q: str | None = None):
        store = _get_run(root, run_id)
        qv = _parse_q(q)
        _require(store, store.reps_path, "representations")
        if cluster_id != "noise":
            try:
                cid: int | str = int(cluster_id)
            except ValueError:
                raise ApiError(
                    422,
                    "invalid-cluster",
                    f"cluster id must be an integer or 'noise', got {cluster_id!r}",
                )
        else:
            cid = "noise"
        assignment = store.ensure_assignment(qv)
        if cid != "noise" and cid not in assignment.clusters():
            raise ApiError(404, "unknown-cluster", f"no cluster {cid} at q={qv}")
        path = store.ensure_heatmap(qv, cid)
        return FileResponse(path, media_type="image/png")

    @app.get("/v1/runs/{run_id}/clusters/{cluster_id}/members")
    def members(run_id: str, cluster_id: int, q: str | None = None):
        store = _get_run(root, run_id)
        qv = _parse_q(q)
        _require(store, store.reps_path, "representations")
        metrics = store.ensure_metrics(qv)
        entry = next(
            (e for e in metrics["per_cluster"] if e["id"] == cluster_id), None
        )
        if entry is None:
            raise ApiError(
                404, "unknown-cluster", f"no cluster {cluster_id} at q={qv}"
            )
        profiles, _access = store.players()
        node_of = {p.player_id: p.access_node for p in profiles}
        pair_of = {tuple(p["key"]): p for p in entry["pairs"]}
        members_out = []
        for pid, day in (tuple(m) for m in entry["members"]):
            pair = pair_of.get((pid, day))
            members_out.append(
                {
                    "player_id": pid,
                    "day": day,
                    "access_node": node_of.get(pid),
                    "partner": pair["partner"] if pair else None,
                    "pos_jaccard": pair["jaccard"] if pair else None,
                }
            )
        verdicts = store.current_verdicts(qv)
        return {
            "cluster_id": cluster_id,
            "q": qv,
            "members": members_out,
            "access_components": entry["access_components"],
            "pos_jaccard_mean": entry["pos_jaccard_mean"],
            "verdict": verdicts.get(cluster_id),
            "history": store.verdict_history(q=qv, cluster_id=cluster_id),
        }

    @app.post("/v1/runs/{run_id}/clusters/{cluster_id}/verdict")
    def post_verdict(
        run_id: str, cluster_id: int, body: VerdictBody, q: str | None = None
    ):
        store = _get_run(root, run_id)
        qv = _parse_q(q)
        if body.decision not in VERDICT_DECISIONS:
            raise ApiError(
                422,
                "invalid-decision",
                f"decision must be one of {list(VERDICT_DECISIONS)}, "
                f"got {body.decision!r}",
            )
        assignment = store.ensure_assignment(qv)
        if cluster_id not in assignment.clusters():
            raise ApiError(
                404, "unknown-cluster", f"no cluster {cluster_id} at q={qv}"
            )
        record = store.append_verdict(qv, cluster_id, body.decision, body.note)
        return {"verdict": record}

    @app.get("/v1/runs/{run_id}/projection")
    def projection(run_id: str, q: str | None = None):
        store = _get_run(root, run_id)
        qv = _parse_q(q)
        _require(store, store.reps_path, "representations")
        return store.ensure_projection(qv)

    if console_dir is not None and Path(console_dir).exists():
        app.mount(
            "/", StaticFiles(directory=str(console_dir), html=True), name="console"
        )
    return app
