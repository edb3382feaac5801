"""Inference: full-day trajectories to fixed-width representation vectors."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .containers import read_container, write_container
from .dataset import DownstreamTrajectory
from .model import TrajectoryEncoder

_REPS_MAGIC = b"TMREPS01"


class EmptyTrajectoryError(ValueError):
    """Raised when a trajectory has no online minutes to encode."""


@dataclass(eq=False)
class RepresentationSet:
    """Vectors for a set of (player_id, day) keys, sorted by key."""

    keys: list[tuple[int, int]]
    vectors: np.ndarray

    def __post_init__(self) -> None:
        if len(self.keys) != self.vectors.shape[0]:
            raise ValueError(
                f"{len(self.keys)} keys for {self.vectors.shape[0]} vectors"
            )
        if sorted(self.keys) != self.keys:
            raise ValueError("representation keys must be sorted")

    def index_of(self, key: tuple[int, int]) -> int:
        try:
            return self.keys.index(key)
        except ValueError:
            raise KeyError(f"no representation for {key}") from None

    def save(self, path: str | Path, vocab_sha256: str = "") -> None:
        header = {
            "version": 1,
            "dim": int(self.vectors.shape[1]),
            "keys": [list(k) for k in self.keys],
            "vocab_sha256": vocab_sha256,
        }
        payload = self.vectors.astype("<f4").tobytes()
        write_container(Path(path), _REPS_MAGIC, header, payload)

    @classmethod
    def load(cls, path: str | Path) -> "RepresentationSet":
        header, payload = read_container(Path(path), _REPS_MAGIC)
        if header.get("version") != 1:
            raise ValueError(
                f"{path}: unsupported representation version {header.get('version')}"
            )
        keys = [(int(a), int(b)) for a, b in header["keys"]]
        vectors = np.frombuffer(payload, dtype="<f4").reshape(
            len(keys), header["dim"]
        ).astype(np.float32)
        return cls(keys=keys, vectors=vectors)

    def save_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["player_id", "day"]
                + [f"r{i}" for i in range(self.vectors.shape[1])]
            )
            for (pid, day), vec in zip(self.keys, self.vectors):
                writer.writerow([pid, day] + [repr(float(v)) for v in vec])


def extract(traj: DownstreamTrajectory, model: TrajectoryEncoder) -> np.ndarray:
    """Representation vector for one trajectory (single forward pass)."""
    if traj.minutes.size == 0:
        raise EmptyTrajectoryError(
            f"trajectory {traj.key} has no online minutes"
        )
    model.eval()
    with torch.no_grad():
        tokens = torch.from_numpy(traj.tokens[None, :, :])
        minutes = torch.from_numpy(traj.minutes[None, :])
        rep = model(tokens, minutes)
    return rep[0].numpy().astype(np.float32)


def extract_all(
    trajs: Sequence[DownstreamTrajectory], model: TrajectoryEncoder
) -> tuple[RepresentationSet, list[tuple[int, int, str]]]:
    """Encode every trajectory; returns (set, skipped) with skip reasons."""
    ordered = sorted(trajs, key=lambda t: t.key)
    keys: list[tuple[int, int]] = []
    rows: list[np.ndarray] = []
    skipped: list[tuple[int, int, str]] = []
    for t in ordered:
        if t.minutes.size == 0:
            skipped.append((t.player_id, t.day, "no online minutes"))
            continue
        keys.append(t.key)
        rows.append(extract(t, model))
    if not rows:
        raise EmptyTrajectoryError("no non-empty trajectories to encode")
    return RepresentationSet(keys=keys, vectors=np.stack(rows)), skipped
