"""Synthetic ground-truthed world: scripted group play plus benign traffic.

The generator produces per-player, per-day minute logs (1440 slots) with a
known group assignment, an access graph (one device node per player; group
members form a clique, a small fraction of benign players share a household
edge), and scripted behaviors:

* group members hunt co-located around a leader path inside a fixed field,
  with synchronized login/logout, occasional supply runs and death/respawn
  jumps to the continent village (teleports, exempt from the speed cap);
* benign players wander waypoint-to-waypoint inside a personal home box
  with idle pauses and a few sessions per day.

Every random draw comes from substreams keyed by (seed, entity, day), so
output is reproducible regardless of generation order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .world import OFFLINE, Continent, GridLocation, WorldConfig, canonical_json

MINUTES_PER_DAY = 1440

# Substream tags; player ids never collide with these offsets.
_GROUP_STREAM = 1_000_000
_STATIC_STREAM = 7


def default_world() -> WorldConfig:
    """Continent map used by the default scenario: one mainland plus fields."""
    return WorldConfig(
        continents=(
            Continent(0, 1536, 1536, avg_level=10.0),
            Continent(1, 768, 768, avg_level=20.0),
            Continent(2, 768, 768, avg_level=28.0),
            Continent(3, 768, 768, avg_level=35.0),
            Continent(4, 768, 768, avg_level=45.0),
            Continent(5, 768, 768, avg_level=60.0),
            Continent(6, 512, 512, avg_level=15.0),
            Continent(7, 512, 512, avg_level=25.0),
            Continent(8, 512, 512, avg_level=40.0),
            Continent(9, 512, 512, avg_level=55.0),
            Continent(10, 512, 512, avg_level=0.0),
        )
    )


@dataclass(frozen=True)
class ScenarioConfig:
    """Knobs for the generator; defaults define the standard scenario."""

    n_benign: int = 140
    n_groups: int = 10
    group_size_min: int = 4
    group_size_max: int = 8
    n_days: int = 2
    seed_note: str = ""
    max_speed: int = 256

    # Group behavior.
    bot_login_window: int = 90
    bot_logout_window: int = 60
    bot_move_prob: float = 0.4
    bot_anchor_prob: float = 0.8
    bot_field_radius: int = 96
    bot_supply_runs_mean: float = 2.0
    bot_death_prob: float = 0.5

    # Benign behavior.
    benign_sessions_min: int = 1
    benign_sessions_max: int = 3
    benign_session_minutes_min: int = 60
    benign_session_minutes_max: int = 240
    benign_speed_max: int = 160
    benign_idle_prob: float = 0.35
    benign_home_radius: int = 192
    benign_anchor_pool: int = 30
    household_share_prob: float = 0.02

    # Declared floors/ceilings the generated data must satisfy; checked by
    # verify_scenario_floors rather than inside the hot generation path.
    min_pair_cell_agreement: float = 0.5
    min_group_window_jaccard: float = 0.25
    max_benign_window_jaccard: float = 0.05

    def __post_init__(self) -> None:
        if self.group_size_min < 4:
            raise ValueError(
                f"group_size_min must be >= 4, got {self.group_size_min}"
            )
        if self.group_size_max < self.group_size_min:
            raise ValueError("group_size_max must be >= group_size_min")
        if self.n_groups < 0 or self.n_benign < 0:
            raise ValueError("player counts must be >= 0")
        if self.n_days < 1:
            raise ValueError(f"n_days must be >= 1, got {self.n_days}")
        if self.max_speed < 1:
            raise ValueError("max_speed must be >= 1")
        if not 0.0 <= self.bot_anchor_prob <= 1.0:
            raise ValueError("bot_anchor_prob must be in [0, 1]")
        if not 0.0 <= self.household_share_prob <= 1.0:
            raise ValueError("household_share_prob must be in [0, 1]")
        if self.benign_speed_max > self.max_speed:
            raise ValueError("benign_speed_max must not exceed max_speed")

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_json(cls, data: dict) -> "ScenarioConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown scenario fields: {sorted(unknown)}")
        return cls(**data)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(canonical_json(self.to_json()))

    @classmethod
    def load(cls, path: str | Path) -> "ScenarioConfig":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class PlayerProfile:
    player_id: int
    kind: str  # "bot" | "benign"
    group_id: int | None
    level: float
    access_node: int


@dataclass(eq=False)
class DayLog:
    """One player-day: minute-indexed position arrays, OFFLINE = -1.

    Index i holds logged minute i+1. teleport_minutes lists the 0-based
    indexes whose position was reached by a scripted jump (exempt from the
    speed cap); it is generator metadata, not part of the export format.
    """

    player_id: int
    day: int
    x: np.ndarray
    y: np.ndarray
    continent: np.ndarray
    teleport_minutes: frozenset[int] = frozenset()

    def online_mask(self) -> np.ndarray:
        return self.continent != OFFLINE

    def n_online(self) -> int:
        return int(self.online_mask().sum())

    def locations(self) -> list[GridLocation]:
        """GridLocations of the online minutes, in minute order."""
        online = np.flatnonzero(self.online_mask())
        return [
            GridLocation(int(self.x[m]), int(self.y[m]), int(self.continent[m]))
            for m in online
        ]


@dataclass
class AccessInfoGraph:
    """Undirected device-sharing graph; node ids are player ids here."""

    nodes: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        node_set = set(self.nodes)
        for a, b in self.edges:
            if a == b:
                raise ValueError(f"self-loop on node {a}")
            if a not in node_set or b not in node_set:
                raise ValueError(f"edge ({a}, {b}) references unknown node")

    def adjacency(self) -> dict[int, set[int]]:
        adj: dict[int, set[int]] = {n: set() for n in self.nodes}
        for a, b in self.edges:
            adj[a].add(b)
            adj[b].add(a)
        return adj

    def component_count(self, subset: Iterable[int]) -> int:
        """Connected components of the subgraph induced by `subset`."""
        subset = set(subset)
        unknown = subset - set(self.nodes)
        if unknown:
            raise ValueError(f"nodes not in access graph: {sorted(unknown)}")
        adj = self.adjacency()
        seen: set[int] = set()
        count = 0
        for start in sorted(subset):
            if start in seen:
                continue
            count += 1
            stack = [start]
            seen.add(start)
            while stack:
                cur = stack.pop()
                for nxt in adj[cur]:
                    if nxt in subset and nxt not in seen:
                        seen.add(nxt)
                        stack.append(nxt)
        return count

    def to_json(self) -> dict:
        return {
            "nodes": list(self.nodes),
            "edges": [list(e) for e in self.edges],
        }

    @classmethod
    def from_json(cls, data: dict) -> "AccessInfoGraph":
        return cls(
            nodes=tuple(int(n) for n in data["nodes"]),
            edges=tuple((int(a), int(b)) for a, b in data["edges"]),
        )


@dataclass
class SimulationResult:
    profiles: list[PlayerProfile]
    logs: list[DayLog]
    access: AccessInfoGraph
    world: WorldConfig
    scenario: ScenarioConfig
    seed: int

    def groups(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for p in self.profiles:
            if p.group_id is not None:
                out.setdefault(p.group_id, []).append(p.player_id)
        return out


def _village(cont: Continent) -> tuple[int, int]:
    return (min(96, cont.width - 1), min(96, cont.height - 1))


def _clip_xy(x: np.ndarray, y: np.ndarray, cont: Continent) -> None:
    np.clip(x, 0, cont.width - 1, out=x)
    np.clip(y, 0, cont.height - 1, out=y)


def _leader_path(
    rng: np.random.Generator,
    cont: Continent,
    center: tuple[int, int],
    radius: int,
    start: int,
    end: int,
    move_prob: float,
) -> np.ndarray:
    """Leader positions for minutes [start, end], shape (1440, 2), int32."""
    lo_x = max(0, center[0] - radius)
    hi_x = min(cont.width - 1, center[0] + radius)
    lo_y = max(0, center[1] - radius)
    hi_y = min(cont.height - 1, center[1] + radius)
    pos = np.zeros((MINUTES_PER_DAY, 2), dtype=np.int32)
    # Draw the whole day's randomness in fixed-size blocks so the stream
    # layout never depends on data values.
    do_move = rng.random(MINUTES_PER_DAY) < move_prob
    steps = rng.integers(-16, 17, size=(MINUTES_PER_DAY, 2))
    cur = np.array(center, dtype=np.int64)
    for m in range(start, end + 1):
        if do_move[m]:
            cur = cur + steps[m]
            cur[0] = min(max(cur[0], lo_x), hi_x)
            cur[1] = min(max(cur[1], lo_y), hi_y)
        pos[m] = cur
    return pos


def _member_excursions(
    rng: np.random.Generator,
    scenario: ScenarioConfig,
    start: int,
    end: int,
) -> list[tuple[int, int]]:
    """Sorted non-overlapping (start, duration) jumps to the village."""
    n_supply = int(rng.poisson(scenario.bot_supply_runs_mean))
    dies = rng.random() < scenario.bot_death_prob
    events = []
    lo, hi = start + 15, end - 15
    if hi <= lo:
        return []
    for _ in range(n_supply):
        events.append((int(rng.integers(lo, hi)), int(rng.integers(3, 7))))
    if dies:
        events.append((int(rng.integers(lo, hi)), int(rng.integers(1, 4))))
    events.sort()
    kept: list[tuple[int, int]] = []
    prev_end = -100
    for s, dur in events:
        if s >= prev_end + 12:
            kept.append((s, dur))
            prev_end = s + dur
    return kept


def _simulate_group_day(
    world: WorldConfig,
    scenario: ScenarioConfig,
    seed: int,
    group_id: int,
    members: list[int],
    cont: Continent,
    center: tuple[int, int],
    day: int,
) -> list[DayLog]:
    rng_g = np.random.default_rng([seed, _GROUP_STREAM + group_id, day])
    login = int(rng_g.integers(0, scenario.bot_login_window))
    logout = MINUTES_PER_DAY - 1 - int(rng_g.integers(0, scenario.bot_logout_window))
    leader = _leader_path(
        rng_g, cont, center, scenario.bot_field_radius, login, logout,
        scenario.bot_move_prob,
    )
    vx, vy = _village(cont)
    logs = []
    for pid in members:
        rng_m = np.random.default_rng([seed, pid, day])
        offs = rng_m.integers(-8, 9, size=(MINUTES_PER_DAY, 2)).astype(np.int32)
        anchored = rng_m.random(MINUTES_PER_DAY) < scenario.bot_anchor_prob
        offs[anchored] = 0
        x = np.full(MINUTES_PER_DAY, OFFLINE, dtype=np.int32)
        y = np.full(MINUTES_PER_DAY, OFFLINE, dtype=np.int32)
        c = np.full(MINUTES_PER_DAY, OFFLINE, dtype=np.int32)
        span = slice(login, logout + 1)
        x[span] = leader[span, 0] + offs[span, 0]
        y[span] = leader[span, 1] + offs[span, 1]
        _clip_xy(x[span], y[span], cont)
        c[span] = cont.continent_id
        teleports: set[int] = set()
        for s, dur in _member_excursions(rng_m, scenario, login, logout):
            voff = rng_m.integers(-8, 9, size=2)
            ex = slice(s, min(s + dur, logout + 1))
            x[ex] = min(max(vx + int(voff[0]), 0), cont.width - 1)
            y[ex] = min(max(vy + int(voff[1]), 0), cont.height - 1)
            teleports.add(s)
            if s + dur <= logout:
                teleports.add(s + dur)
        logs.append(
            DayLog(
                player_id=pid,
                day=day,
                x=x,
                y=y,
                continent=c,
                teleport_minutes=frozenset(teleports),
            )
        )
    return logs


def _simulate_benign_day(
    world: WorldConfig,
    scenario: ScenarioConfig,
    seed: int,
    pid: int,
    cont: Continent,
    anchor: tuple[int, int],
    day: int,
) -> DayLog:
    rng = np.random.default_rng([seed, pid, day])
    r = scenario.benign_home_radius
    lo_x, hi_x = max(0, anchor[0] - r), min(cont.width - 1, anchor[0] + r)
    lo_y, hi_y = max(0, anchor[1] - r), min(cont.height - 1, anchor[1] + r)

    n_sessions = int(
        rng.integers(scenario.benign_sessions_min, scenario.benign_sessions_max + 1)
    )
    cursor = int(rng.integers(0, 240))
    sessions: list[tuple[int, int]] = []
    for _ in range(n_sessions):
        if cursor >= MINUTES_PER_DAY - 10:
            break
        dur = int(
            rng.integers(
                scenario.benign_session_minutes_min,
                scenario.benign_session_minutes_max + 1,
            )
        )
        end = min(cursor + dur, MINUTES_PER_DAY)
        sessions.append((cursor, end))
        cursor = end + int(rng.integers(30, 240))

    x = np.full(MINUTES_PER_DAY, OFFLINE, dtype=np.int32)
    y = np.full(MINUTES_PER_DAY, OFFLINE, dtype=np.int32)
    c = np.full(MINUTES_PER_DAY, OFFLINE, dtype=np.int32)

    px = int(rng.integers(lo_x, hi_x + 1))
    py = int(rng.integers(lo_y, hi_y + 1))
    for s_start, s_end in sessions:
        speed = int(rng.integers(16, scenario.benign_speed_max + 1))
        wx = int(rng.integers(lo_x, hi_x + 1))
        wy = int(rng.integers(lo_y, hi_y + 1))
        idle_left = 0
        for m in range(s_start, s_end):
            if idle_left > 0:
                idle_left -= 1
            elif rng.random() >= scenario.benign_idle_prob:
                dx = min(max(wx - px, -speed), speed)
                dy = min(max(wy - py, -speed), speed)
                px += dx
                py += dy
                if px == wx and py == wy:
                    idle_left = int(rng.integers(2, 16))
                    wx = int(rng.integers(lo_x, hi_x + 1))
                    wy = int(rng.integers(lo_y, hi_y + 1))
            x[m] = px
            y[m] = py
            c[m] = cont.continent_id
    return DayLog(player_id=pid, day=day, x=x, y=y, continent=c)


def simulate(
    world: WorldConfig, scenario: ScenarioConfig, seed: int
) -> SimulationResult:
    """Generate profiles, per-day logs, and the access graph."""
    rng_static = np.random.default_rng([seed, _STATIC_STREAM])
    conts = sorted(world.continents, key=lambda c: c.continent_id)

    sizes = [
        int(rng_static.integers(scenario.group_size_min, scenario.group_size_max + 1))
        for _ in range(scenario.n_groups)
    ]
    groups: list[list[int]] = []
    next_pid = 0
    for size in sizes:
        groups.append(list(range(next_pid, next_pid + size)))
        next_pid += size
    benign_ids = list(range(next_pid, next_pid + scenario.n_benign))

    # Static group placement: one field per group, cycled over continents.
    # Fields stay clear of the village by 280 coordinates where the
    # continent is large enough; smaller continents get the largest
    # clearance they can actually provide.
    group_cont: list[Continent] = []
    group_center: list[tuple[int, int]] = []
    margin = scenario.bot_field_radius + 16
    for g in range(scenario.n_groups):
        cont = conts[g % len(conts)]
        vx, vy = _village(cont)
        mx = min(margin, max(1, (cont.width - 2) // 2))
        my = min(margin, max(1, (cont.height - 2) // 2))
        axis_max = max(
            vx - mx, cont.width - 1 - mx - vx, vy - my, cont.height - 1 - my - vy
        )
        clearance = max(0, min(280, axis_max))
        while True:
            cx = int(rng_static.integers(mx, cont.width - mx))
            cy = int(rng_static.integers(my, cont.height - my))
            if max(abs(cx - vx), abs(cy - vy)) >= clearance:
                break
        group_cont.append(cont)
        group_center.append((cx, cy))

    # Static benign placement from a shared anchor pool.
    pool: list[tuple[Continent, int, int]] = []
    pr = scenario.benign_home_radius + 8
    for _ in range(scenario.benign_anchor_pool):
        cont = conts[int(rng_static.integers(0, len(conts)))]
        ax = int(rng_static.integers(min(pr, cont.width // 2), max(cont.width - pr, cont.width // 2) + 1))
        ay = int(rng_static.integers(min(pr, cont.height // 2), max(cont.height - pr, cont.height // 2) + 1))
        pool.append((cont, ax, ay))
    benign_home = [pool[int(rng_static.integers(0, len(pool)))] for _ in benign_ids]

    profiles: list[PlayerProfile] = []
    for g, members in enumerate(groups):
        base_level = group_cont[g].avg_level
        for pid in members:
            lvl = max(1.0, base_level + float(rng_static.uniform(-3, 3)))
            profiles.append(
                PlayerProfile(
                    player_id=pid,
                    kind="bot",
                    group_id=g,
                    level=round(lvl, 2),
                    access_node=pid,
                )
            )
    for i, pid in enumerate(benign_ids):
        profiles.append(
            PlayerProfile(
                player_id=pid,
                kind="benign",
                group_id=None,
                level=round(float(rng_static.uniform(5, 60)), 2),
                access_node=pid,
            )
        )

    edges: list[tuple[int, int]] = []
    for members in groups:
        for i in range(len(members)):
            for j in range(i + 1, len(members)):
                edges.append((members[i], members[j]))
    paired: set[int] = set()
    for i in range(len(benign_ids) - 1):
        a, b = benign_ids[i], benign_ids[i + 1]
        if a in paired or b in paired:
            continue
        if rng_static.random() < scenario.household_share_prob:
            edges.append((a, b))
            paired.update((a, b))

    access = AccessInfoGraph(
        nodes=tuple(p.player_id for p in profiles), edges=tuple(edges)
    )

    logs: list[DayLog] = []
    for day in range(1, scenario.n_days + 1):
        for g, members in enumerate(groups):
            logs.extend(
                _simulate_group_day(
                    world, scenario, seed, g, members,
                    group_cont[g], group_center[g], day,
                )
            )
        for i, pid in enumerate(benign_ids):
            cont, ax, ay = benign_home[i]
            logs.append(
                _simulate_benign_day(world, scenario, seed, pid, cont, (ax, ay), day)
            )
    logs.sort(key=lambda lg: (lg.player_id, lg.day))
    return SimulationResult(
        profiles=profiles,
        logs=logs,
        access=access,
        world=world,
        scenario=scenario,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Interchange: line-record logs (one file per day) and the players sidecar.

def export_logs(logs: list[DayLog], out_dir: str | Path) -> list[Path]:
    """Write day_<d>.csv files of `player_id,minute_index,x,y,continent_id`.

    minute_index is 1-based; offline minutes are omitted. Lines are sorted
    by (player_id, minute_index) so output is deterministic.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    by_day: dict[int, list[DayLog]] = {}
    for lg in logs:
        by_day.setdefault(lg.day, []).append(lg)
    paths = []
    for day in sorted(by_day):
        path = out_dir / f"day_{day}.csv"
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            for lg in sorted(by_day[day], key=lambda l: l.player_id):
                online = np.flatnonzero(lg.online_mask())
                for m in online:
                    fh.write(
                        f"{lg.player_id},{m + 1},{lg.x[m]},{lg.y[m]},{lg.continent[m]}\n"
                    )
        paths.append(path)
    return paths


def import_logs(log_dir: str | Path) -> list[DayLog]:
    """Read every day_<d>.csv under log_dir back into DayLog values."""
    log_dir = Path(log_dir)
    files = sorted(log_dir.glob("day_*.csv"), key=lambda p: int(p.stem.split("_")[1]))
    if not files:
        raise ValueError(f"no day_<d>.csv files under {log_dir}")
    logs: list[DayLog] = []
    for path in files:
        day = int(path.stem.split("_")[1])
        per_player: dict[int, DayLog] = {}
        for line_no, line in enumerate(path.read_text().splitlines(), start=1):
            parts = line.split(",")
            if len(parts) != 5:
                raise ValueError(f"{path}:{line_no}: expected 5 fields, got {len(parts)}")
            pid, minute, x, y, cont = (int(v) for v in parts)
            if not 1 <= minute <= MINUTES_PER_DAY:
                raise ValueError(f"{path}:{line_no}: minute_index {minute} out of range")
            lg = per_player.get(pid)
            if lg is None:
                lg = DayLog(
                    player_id=pid,
                    day=day,
                    x=np.full(MINUTES_PER_DAY, OFFLINE, dtype=np.int32),
                    y=np.full(MINUTES_PER_DAY, OFFLINE, dtype=np.int32),
                    continent=np.full(MINUTES_PER_DAY, OFFLINE, dtype=np.int32),
                )
                per_player[pid] = lg
            lg.x[minute - 1] = x
            lg.y[minute - 1] = y
            lg.continent[minute - 1] = cont
        logs.extend(per_player[pid] for pid in sorted(per_player))
    logs.sort(key=lambda lg: (lg.player_id, lg.day))
    return logs


def save_players(
    profiles: list[PlayerProfile], access: AccessInfoGraph, path: str | Path
) -> None:
    payload = {
        "players": [
            {
                "player_id": p.player_id,
                "kind": p.kind,
                "group_id": p.group_id,
                "level": p.level,
                "access_node": p.access_node,
            }
            for p in profiles
        ],
        "access": access.to_json(),
    }
    Path(path).write_text(canonical_json(payload))


def load_players(path: str | Path) -> tuple[list[PlayerProfile], AccessInfoGraph]:
    data = json.loads(Path(path).read_text())
    profiles = [
        PlayerProfile(
            player_id=int(p["player_id"]),
            kind=str(p["kind"]),
            group_id=None if p["group_id"] is None else int(p["group_id"]),
            level=float(p["level"]),
            access_node=int(p["access_node"]),
        )
        for p in data["players"]
    ]
    return profiles, AccessInfoGraph.from_json(data["access"])
