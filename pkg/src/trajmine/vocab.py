"""Token vocabularies over zone and cell triples.

Zones and cells live in separate id spaces (they feed separate embedding
tables). The three reserved ids occupy the bottom of both spaces:

    PAD_ID = 0, UNK_ID = 1, MASK_ID = 2

Real tokens are assigned in first-appearance order while scanning the
fitting trajectories, so vocabulary construction is deterministic for a
fixed input order.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .world import CellId, GridLocation, WorldConfig, ZoneId, bin_cell, bin_zone

PAD_ID = 0
UNK_ID = 1
MASK_ID = 2
N_RESERVED = 3

_MAGIC = "TMVOCAB"
_VERSION = 1


@dataclass
class Vocabulary:
    """Immutable-by-convention token tables for one world binning."""

    zone_size: int
    cell_size: int
    zones: tuple[ZoneId, ...]
    cells: tuple[CellId, ...]
    _zone_index: dict[ZoneId, int] = field(init=False, repr=False)
    _cell_index: dict[CellId, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._zone_index = {z: N_RESERVED + i for i, z in enumerate(self.zones)}
        self._cell_index = {c: N_RESERVED + i for i, c in enumerate(self.cells)}
        if len(self._zone_index) != len(self.zones):
            raise ValueError("duplicate zone in vocabulary")
        if len(self._cell_index) != len(self.cells):
            raise ValueError("duplicate cell in vocabulary")

    @property
    def zone_vocab_size(self) -> int:
        return N_RESERVED + len(self.zones)

    @property
    def cell_vocab_size(self) -> int:
        return N_RESERVED + len(self.cells)

    def zone_token(self, zone: ZoneId) -> int:
        """Return the zone id, or UNK for an unregistered zone (never fails)."""
        return self._zone_index.get(zone, UNK_ID)

    def cell_token(self, cell: CellId) -> int:
        return self._cell_index.get(cell, UNK_ID)

    def serialize(self) -> bytes:
        lines = [f"{_MAGIC} {_VERSION}", f"sizes {self.zone_size} {self.cell_size}"]
        for z in self.zones:
            lines.append(f"Z {z.bx} {z.by} {z.continent_id}")
        for c in self.cells:
            lines.append(f"C {c.bx} {c.by} {c.continent_id}")
        return ("\n".join(lines) + "\n").encode("ascii")

    def sha256(self) -> str:
        return hashlib.sha256(self.serialize()).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.serialize())

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        raw = Path(path).read_bytes()
        lines = raw.decode("ascii").splitlines()
        if not lines:
            raise ValueError(f"{path}: empty vocabulary file")
        head = lines[0].split()
        if len(head) != 2 or head[0] != _MAGIC:
            raise ValueError(f"{path}: bad magic {lines[0]!r}, expected {_MAGIC!r}")
        if int(head[1]) != _VERSION:
            raise ValueError(
                f"{path}: unsupported vocabulary version {head[1]}, "
                f"expected {_VERSION}"
            )
        sizes = lines[1].split()
        if len(sizes) != 3 or sizes[0] != "sizes":
            raise ValueError(f"{path}: malformed sizes line {lines[1]!r}")
        zones: list[ZoneId] = []
        cells: list[CellId] = []
        for ln in lines[2:]:
            kind, bx, by, cont = ln.split()
            triple = (int(bx), int(by), int(cont))
            if kind == "Z":
                zones.append(ZoneId(*triple))
            elif kind == "C":
                cells.append(CellId(*triple))
            else:
                raise ValueError(f"{path}: malformed vocabulary line {ln!r}")
        return cls(
            zone_size=int(sizes[1]),
            cell_size=int(sizes[2]),
            zones=tuple(zones),
            cells=tuple(cells),
        )


def build_vocabulary(
    trajectories: Iterable[Sequence[GridLocation]], world: WorldConfig
) -> Vocabulary:
    """Collect zone and cell tokens in first-appearance order.

    Raises ValueError if the input contains no locations at all.
    """
    zones: dict[ZoneId, None] = {}
    cells: dict[CellId, None] = {}
    n_locs = 0
    for traj in trajectories:
        for loc in traj:
            n_locs += 1
            zones.setdefault(bin_zone(loc, world), None)
            cells.setdefault(bin_cell(loc, world), None)
    if n_locs == 0:
        raise ValueError("cannot build a vocabulary from empty trajectories")
    return Vocabulary(
        zone_size=world.zone_size,
        cell_size=world.cell_size,
        zones=tuple(zones),
        cells=tuple(cells),
    )


def encode_locations(
    traj: Sequence[GridLocation], world: WorldConfig, vocabulary: Vocabulary
) -> np.ndarray:
    """Token pairs for one trajectory: an (n, 2) array of [zone_id, cell_id]."""
    out = np.empty((len(traj), 2), dtype=np.int64)
    for i, loc in enumerate(traj):
        out[i, 0] = vocabulary.zone_token(bin_zone(loc, world))
        out[i, 1] = vocabulary.cell_token(bin_cell(loc, world))
    return out


class GridTokenizer(BaseEstimator, TransformerMixin):
    """Estimator shell over vocabulary construction.

    fit(X) consumes an iterable of GridLocation sequences and builds
    `vocabulary_`; transform(X) maps each sequence to an (n, 2) int64 array
    of [zone_id, cell_id] token pairs, emitting UNK for unseen bins.
    """

    def __init__(self, world: WorldConfig | None = None):
        self.world = world

    def fit(self, X: Iterable[Sequence[GridLocation]], y=None) -> "GridTokenizer":
        if self.world is None:
            raise ValueError("GridTokenizer requires a world config")
        self.vocabulary_ = build_vocabulary(X, self.world)
        return self

    def transform(self, X: Iterable[Sequence[GridLocation]]) -> list[np.ndarray]:
        if not hasattr(self, "vocabulary_"):
            raise ValueError("GridTokenizer is not fitted; call fit first")
        return [encode_locations(traj, self.world, self.vocabulary_) for traj in X]
