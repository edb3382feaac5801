"""Trajectory heatmaps: one pixel row per player-day, one column per minute.

Channel encoding per online minute: red scales with the continent's
average level (normalized by the highest average level in the world map),
green with x over the continent width, blue with y over the height.
Offline minutes are white; 2-pixel pure-red separator bands divide
consecutive cluster blocks. Noise rows render into a separate image.

A JSON sidecar maps image row indexes to (player_id, day, cluster).
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image

from .clustering import NOISE, ClusterAssignment
from .dataset import DownstreamTrajectory
from .world import OFFLINE, WorldConfig, canonical_json

SEPARATOR_ROWS = 2
SEPARATOR_COLOR = (255, 0, 0)
OFFLINE_COLOR = (255, 255, 255)

Key = tuple[int, int]


def _channel(value: np.ndarray) -> np.ndarray:
    """Scale [0, 1] floats to rounded uint8 (round-half-up)."""
    return np.floor(255.0 * value + 0.5).astype(np.uint8)


def color_of(
    x: int | None, y: int | None, continent_id: int | None, world: WorldConfig
) -> tuple[int, int, int]:
    """Pixel color for one minute sample; None/OFFLINE means offline."""
    if continent_id is None or continent_id == OFFLINE:
        return OFFLINE_COLOR
    row = trajectory_row(
        np.array([x], dtype=np.int64),
        np.array([y], dtype=np.int64),
        np.array([continent_id], dtype=np.int64),
        world,
    )
    return tuple(int(v) for v in row[0])


def trajectory_row(
    x: np.ndarray, y: np.ndarray, continent: np.ndarray, world: WorldConfig
) -> np.ndarray:
    """(n, 3) uint8 colors for aligned minute arrays."""
    max_id = world.max_continent_id
    widths = np.ones(max_id + 1, dtype=np.float64)
    heights = np.ones(max_id + 1, dtype=np.float64)
    levels = np.zeros(max_id + 1, dtype=np.float64)
    for cont in world.continents:
        widths[cont.continent_id] = cont.width
        heights[cont.continent_id] = cont.height
        levels[cont.continent_id] = cont.avg_level
    max_level = levels.max()
    level_norm = levels / max_level if max_level > 0 else levels

    online = continent != OFFLINE
    out = np.full((x.shape[0], 3), 255, dtype=np.uint8)
    if online.any():
        cont_ids = continent[online].astype(np.int64)
        bad = (cont_ids < 0) | (cont_ids > max_id)
        if bad.any():
            raise ValueError(f"unknown continent_id {int(cont_ids[bad][0])}")
        out[online, 0] = _channel(level_norm[cont_ids])
        out[online, 1] = _channel(x[online] / widths[cont_ids])
        out[online, 2] = _channel(y[online] / heights[cont_ids])
    return out


def render_rows(
    keys: Sequence[Key],
    trajs: Mapping[Key, DownstreamTrajectory],
    world: WorldConfig,
) -> np.ndarray:
    """(len(keys), 1440, 3) uint8 image rows in the given key order."""
    rows = np.full((len(keys), 1440, 3), 255, dtype=np.uint8)
    for i, key in enumerate(keys):
        t = trajs[key]
        rows[i] = trajectory_row(t.x, t.y, t.continent, world)
    return rows


def _write_png(rows: np.ndarray, path: Path) -> None:
    if rows.shape[0] == 0:
        rows = np.full((1, 1440, 3), 255, dtype=np.uint8)
    Image.fromarray(rows, mode="RGB").save(path, format="PNG")


def render_assignment(
    assignment: ClusterAssignment,
    trajs: Mapping[Key, DownstreamTrajectory],
    world: WorldConfig,
    out_png: str | Path,
    noise_png: str | Path | None = None,
) -> dict:
    """Render cluster rows (+ separators) and optionally the noise image.

    Sidecars land next to each image as <name>.rows.json. Returns the
    written paths and row tables.
    """
    out_png = Path(out_png)
    blocks: list[np.ndarray] = []
    row_table: list[dict] = []
    row_idx = 0
    first = True
    for cid, members in assignment.clusters().items():
        if not first:
            blocks.append(
                np.tile(
                    np.array(SEPARATOR_COLOR, dtype=np.uint8),
                    (SEPARATOR_ROWS, 1440, 1),
                )
            )
            row_idx += SEPARATOR_ROWS
        first = False
        blocks.append(render_rows(members, trajs, world))
        for pid, day in members:
            row_table.append(
                {"row": row_idx, "player_id": pid, "day": day, "cluster": cid}
            )
            row_idx += 1
    image = (
        np.concatenate(blocks)
        if blocks
        else np.zeros((0, 1440, 3), dtype=np.uint8)
    )
    _write_png(image, out_png)
    sidecar = out_png.with_suffix(out_png.suffix + ".rows.json")
    sidecar.write_text(canonical_json({"rows": row_table}))
    written = {"image": str(out_png), "sidecar": str(sidecar)}

    if noise_png is not None:
        noise_png = Path(noise_png)
        noise_keys = assignment.noise()
        noise_rows = render_rows(noise_keys, trajs, world)
        _write_png(noise_rows, noise_png)
        noise_table = [
            {"row": i, "player_id": pid, "day": day, "cluster": NOISE}
            for i, (pid, day) in enumerate(noise_keys)
        ]
        noise_sidecar = noise_png.with_suffix(noise_png.suffix + ".rows.json")
        noise_sidecar.write_text(canonical_json({"rows": noise_table}))
        written["noise_image"] = str(noise_png)
        written["noise_sidecar"] = str(noise_sidecar)
    return written


def render_cluster(
    assignment: ClusterAssignment,
    cluster_id: int,
    trajs: Mapping[Key, DownstreamTrajectory],
    world: WorldConfig,
    out_png: str | Path,
) -> dict:
    """Single-cluster image (noise via cluster_id = NOISE); rows = members."""
    if cluster_id == NOISE:
        members = assignment.noise()
    else:
        clusters = assignment.clusters()
        if cluster_id not in clusters:
            raise KeyError(f"no cluster {cluster_id} in assignment")
        members = clusters[cluster_id]
    rows = render_rows(members, trajs, world)
    out_png = Path(out_png)
    _write_png(rows, out_png)
    sidecar = out_png.with_suffix(out_png.suffix + ".rows.json")
    sidecar.write_text(
        canonical_json(
            {
                "rows": [
                    {"row": i, "player_id": pid, "day": day, "cluster": cluster_id}
                    for i, (pid, day) in enumerate(members)
                ]
            }
        )
    )
    return {"image": str(out_png), "sidecar": str(sidecar)}
