"""Game-world geometry: continents, grid locations, and zone/cell binning.

Positions are integer coordinates inside a continent. Two nested square
grids coarsen them: zones (default 256 coordinates per side) and cells
(default 8 per side). Zone and cell ids are plain (bx, by, continent)
triples; packing helpers turn cell triples into single int64 keys for fast
set arithmetic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import NamedTuple

import numpy as np

# Sentinel used in minute-indexed arrays for offline slots.
OFFLINE = -1

# Bit widths for packed cell keys: continent << 42 | bx << 21 | by.
_KEY_SHIFT = 21
_KEY_MASK = (1 << _KEY_SHIFT) - 1


class GridLocation(NamedTuple):
    """A logged position: integer coordinates within one continent."""

    x: int
    y: int
    continent_id: int


class ZoneId(NamedTuple):
    bx: int
    by: int
    continent_id: int


class CellId(NamedTuple):
    bx: int
    by: int
    continent_id: int


@dataclass(frozen=True)
class Continent:
    continent_id: int
    width: int
    height: int
    avg_level: float = 0.0

    def __post_init__(self) -> None:
        if self.continent_id < 0:
            raise ValueError(f"continent_id must be >= 0, got {self.continent_id}")
        if self.width <= 0:
            raise ValueError(f"width must be positive, got {self.width}")
        if self.height <= 0:
            raise ValueError(f"height must be positive, got {self.height}")
        if self.avg_level < 0:
            raise ValueError(f"avg_level must be >= 0, got {self.avg_level}")


@dataclass(frozen=True)
class WorldConfig:
    """Continent map plus the two grid pitches.

    zone_size must be a positive multiple of cell_size so every cell nests
    inside exactly one zone.
    """

    continents: tuple[Continent, ...]
    zone_size: int = 256
    cell_size: int = 8

    def __post_init__(self) -> None:
        if not self.continents:
            raise ValueError("continents must not be empty")
        if self.cell_size <= 0:
            raise ValueError(f"cell_size must be positive, got {self.cell_size}")
        if self.zone_size <= 0:
            raise ValueError(f"zone_size must be positive, got {self.zone_size}")
        if self.zone_size % self.cell_size != 0:
            raise ValueError(
                f"zone_size ({self.zone_size}) must be a multiple of "
                f"cell_size ({self.cell_size})"
            )
        ids = [c.continent_id for c in self.continents]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate continent_id in {ids}")

    @cached_property
    def by_id(self) -> dict[int, Continent]:
        return {c.continent_id: c for c in self.continents}

    @cached_property
    def max_continent_id(self) -> int:
        return max(c.continent_id for c in self.continents)

    def continent(self, continent_id: int) -> Continent:
        try:
            return self.by_id[continent_id]
        except KeyError:
            raise ValueError(f"unknown continent_id {continent_id}") from None

    def validate_location(self, loc: GridLocation) -> None:
        """Raise ValueError naming the offending field for bad coordinates."""
        cont = self.continent(loc.continent_id)
        if not 0 <= loc.x < cont.width:
            raise ValueError(
                f"x out of range: {loc.x} not in [0, {cont.width}) "
                f"on continent {cont.continent_id}"
            )
        if not 0 <= loc.y < cont.height:
            raise ValueError(
                f"y out of range: {loc.y} not in [0, {cont.height}) "
                f"on continent {cont.continent_id}"
            )

    def to_json(self) -> dict:
        return {
            "zone_size": self.zone_size,
            "cell_size": self.cell_size,
            "continents": [
                {
                    "continent_id": c.continent_id,
                    "width": c.width,
                    "height": c.height,
                    "avg_level": c.avg_level,
                }
                for c in self.continents
            ],
        }

    @classmethod
    def from_json(cls, data: dict) -> "WorldConfig":
        try:
            continents = tuple(
                Continent(
                    continent_id=int(c["continent_id"]),
                    width=int(c["width"]),
                    height=int(c["height"]),
                    avg_level=float(c.get("avg_level", 0.0)),
                )
                for c in data["continents"]
            )
            return cls(
                continents=continents,
                zone_size=int(data.get("zone_size", 256)),
                cell_size=int(data.get("cell_size", 8)),
            )
        except KeyError as exc:
            raise ValueError(f"world config missing field {exc}") from None

    def save(self, path: str | Path) -> None:
        Path(path).write_text(canonical_json(self.to_json()))

    @classmethod
    def load(cls, path: str | Path) -> "WorldConfig":
        return cls.from_json(json.loads(Path(path).read_text()))


def canonical_json(obj) -> str:
    """Stable JSON encoding used for every JSON artifact the package writes."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"


def bin_zone(loc: GridLocation, world: WorldConfig) -> ZoneId:
    """Map a location to its zone triple (floor division by zone_size)."""
    world.validate_location(loc)
    return ZoneId(loc.x // world.zone_size, loc.y // world.zone_size, loc.continent_id)


def bin_cell(loc: GridLocation, world: WorldConfig) -> CellId:
    """Map a location to its cell triple (floor division by cell_size)."""
    world.validate_location(loc)
    return CellId(loc.x // world.cell_size, loc.y // world.cell_size, loc.continent_id)


def pack_cell(cell: CellId) -> int:
    """Pack a cell triple into one int64 key (offline stays OFFLINE)."""
    return (cell.continent_id << (2 * _KEY_SHIFT)) | (cell.bx << _KEY_SHIFT) | cell.by


def unpack_cell(key: int) -> CellId:
    if key < 0:
        raise ValueError(f"cannot unpack offline/negative key {key}")
    return CellId(
        (key >> _KEY_SHIFT) & _KEY_MASK, key & _KEY_MASK, key >> (2 * _KEY_SHIFT)
    )


def pack_cells(
    x: np.ndarray, y: np.ndarray, continent: np.ndarray, world: WorldConfig
) -> np.ndarray:
    """Vectorized cell packing for minute arrays; OFFLINE slots stay OFFLINE."""
    x = np.asarray(x, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    continent = np.asarray(continent, dtype=np.int64)
    online = continent != OFFLINE
    keys = np.full(x.shape, OFFLINE, dtype=np.int64)
    cs = world.cell_size
    keys[online] = (
        (continent[online] << (2 * _KEY_SHIFT))
        | ((x[online] // cs) << _KEY_SHIFT)
        | (y[online] // cs)
    )
    return keys
