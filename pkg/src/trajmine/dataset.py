"""Training-corpus construction: dedup filtering, chunking, triplets.

The pipeline from raw day logs to model inputs:

1. dedup_filter keeps the minutes whose cell differs from the previous
   online minute's cell (the first online minute is always kept), then
   tokenizes them;
2. chunk32 splits the filtered sequence into length-32 windows, dropping
   the remainder;
3. make_triplets turns the corpus-wide chunk list into (anchor, positive,
   negative) training samples with masked anchors.

Downstream (full-day) trajectories keep every online minute untouched and
carry raw coordinates for rendering plus 1-based minute indexes for the
timestamp encoding.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .containers import read_container, write_container
from .simulate import DayLog
from .vocab import MASK_ID, Vocabulary
from .world import OFFLINE, CellId, WorldConfig, ZoneId, pack_cells

CHUNK_LEN = 32
WINDOW_LEN = 16

_CORPUS_MAGIC = b"TMCORP01"
_TRAJ_MAGIC = b"TMTRAJ01"


def dedup_filter(
    log: DayLog, world: WorldConfig, vocabulary: Vocabulary
) -> np.ndarray:
    """Movement-only token sequence for one day log: (n, 2) [zone, cell].

    A minute survives when it is the first online minute of the day or its
    cell differs from the immediately preceding online minute's cell.
    """
    online = np.flatnonzero(log.online_mask())
    if online.size == 0:
        return np.empty((0, 2), dtype=np.int64)
    keys = pack_cells(log.x[online], log.y[online], log.continent[online], world)
    keep = np.empty(online.size, dtype=bool)
    keep[0] = True
    keep[1:] = keys[1:] != keys[:-1]
    kept = online[keep]
    zs = world.zone_size
    cs = world.cell_size
    out = np.empty((kept.size, 2), dtype=np.int64)
    for i, m in enumerate(kept):
        cont = int(log.continent[m])
        zone = ZoneId(int(log.x[m]) // zs, int(log.y[m]) // zs, cont)
        cell = CellId(int(log.x[m]) // cs, int(log.y[m]) // cs, cont)
        out[i, 0] = vocabulary.zone_token(zone)
        out[i, 1] = vocabulary.cell_token(cell)
    return out


def chunk32(tokens: np.ndarray) -> list[np.ndarray]:
    """Split an (n, 2) token sequence into (32, 2) chunks; remainder dropped."""
    tokens = np.asarray(tokens)
    if tokens.ndim != 2 or tokens.shape[1] != 2:
        raise ValueError(f"expected an (n, 2) token array, got shape {tokens.shape}")
    n_chunks = tokens.shape[0] // CHUNK_LEN
    return [
        tokens[i * CHUNK_LEN : (i + 1) * CHUNK_LEN].copy() for i in range(n_chunks)
    ]


@dataclass(eq=False)
class TripletSample:
    """One training sample.

    anchor is the masked window; anchor_source is the same window before
    masking (needed to re-mask during training and to recover zone tokens
    at masked positions). mask_indices are 0-based offsets into the
    16-token window; masked_truth maps each masked offset to the original
    cell token.
    """

    anchor: np.ndarray
    positive: np.ndarray
    negative: np.ndarray
    anchor_source: np.ndarray
    mask_indices: tuple[int, ...]
    masked_truth: dict[int, int]
    split_mode: str  # "odd_even" | "half"

    def __post_init__(self) -> None:
        for name in ("anchor", "positive", "negative", "anchor_source"):
            arr = getattr(self, name)
            if arr.shape != (WINDOW_LEN, 2):
                raise ValueError(f"{name} must have shape (16, 2), got {arr.shape}")
        if set(self.mask_indices) != set(self.masked_truth):
            raise ValueError("mask_indices and masked_truth keys must match")
        for idx in self.mask_indices:
            if not 0 <= idx < WINDOW_LEN:
                raise ValueError(f"mask index {idx} out of range [0, 16)")


def apply_mask(
    window: np.ndarray, mask_rate: float, rng: np.random.Generator
) -> tuple[np.ndarray, tuple[int, ...], dict[int, int]]:
    """Independent Bernoulli(mask_rate) masking of a (16, 2) window.

    Both the zone and cell token at a masked position are replaced by
    MASK_ID; the truth map records the original cell token.
    """
    if not 0.0 <= mask_rate <= 1.0:
        raise ValueError(f"mask_rate must be in [0, 1], got {mask_rate}")
    hits = np.flatnonzero(rng.random(WINDOW_LEN) < mask_rate)
    masked = window.copy()
    masked[hits] = MASK_ID
    truth = {int(i): int(window[i, 1]) for i in hits}
    return masked, tuple(int(i) for i in hits), truth


def make_triplets(
    chunks: Sequence[np.ndarray], mask_rate: float, rng: np.random.Generator
) -> list[TripletSample]:
    """Build one triplet per chunk over the corpus-wide chunk list.

    The first floor(M/2) chunks split odd/even positions into anchor and
    positive; the rest split first/second half. The negative is the
    positive window of a uniformly drawn different chunk.
    """
    m = len(chunks)
    if m < 2:
        raise ValueError(f"need at least 2 chunks to form triplets, got {m}")
    halves: list[tuple[np.ndarray, np.ndarray, str]] = []
    for k, chunk in enumerate(chunks):
        if chunk.shape != (CHUNK_LEN, 2):
            raise ValueError(f"chunk {k} must have shape (32, 2), got {chunk.shape}")
        if k < m // 2:
            halves.append((chunk[0::2], chunk[1::2], "odd_even"))
        else:
            halves.append((chunk[:WINDOW_LEN], chunk[WINDOW_LEN:], "half"))
    samples = []
    for k, (anchor_src, positive, mode) in enumerate(halves):
        other = int(rng.integers(0, m - 1))
        if other >= k:
            other += 1
        negative = halves[other][1]
        masked, idxs, truth = apply_mask(anchor_src, mask_rate, rng)
        samples.append(
            TripletSample(
                anchor=masked,
                positive=positive.copy(),
                negative=negative.copy(),
                anchor_source=anchor_src.copy(),
                mask_indices=idxs,
                masked_truth=truth,
                split_mode=mode,
            )
        )
    return samples


def build_corpus(
    logs: Sequence[DayLog],
    world: WorldConfig,
    vocabulary: Vocabulary,
    mask_rate: float,
    seed: int,
) -> list[TripletSample]:
    """Full preprocessing: dedup + chunk every log, then triplets."""
    chunks: list[np.ndarray] = []
    for log in logs:
        chunks.extend(chunk32(dedup_filter(log, world, vocabulary)))
    rng = np.random.default_rng([seed, 0xC0])
    return make_triplets(chunks, mask_rate, rng)


@dataclass(eq=False)
class DownstreamTrajectory:
    """Full-day inference input for one (player, day).

    minutes are 1-based logged minutes (the timestamp-encoding domain);
    tokens align with minutes. The raw per-minute arrays (length 1440,
    OFFLINE = -1) feed rendering and window-overlap metrics.
    """

    player_id: int
    day: int
    minutes: np.ndarray
    tokens: np.ndarray
    x: np.ndarray
    y: np.ndarray
    continent: np.ndarray

    @property
    def key(self) -> tuple[int, int]:
        return (self.player_id, self.day)

    def cells_by_minute(self, world: WorldConfig) -> np.ndarray:
        """Packed cell key per minute, OFFLINE where the player was offline."""
        return pack_cells(self.x, self.y, self.continent, world)


def build_downstream(
    log: DayLog, world: WorldConfig, vocabulary: Vocabulary
) -> DownstreamTrajectory:
    """Tokenize every online minute (no dedup, no masking)."""
    online = np.flatnonzero(log.online_mask())
    zs, cs = world.zone_size, world.cell_size
    tokens = np.empty((online.size, 2), dtype=np.int64)
    for i, m in enumerate(online):
        cont = int(log.continent[m])
        tokens[i, 0] = vocabulary.zone_token(
            ZoneId(int(log.x[m]) // zs, int(log.y[m]) // zs, cont)
        )
        tokens[i, 1] = vocabulary.cell_token(
            CellId(int(log.x[m]) // cs, int(log.y[m]) // cs, cont)
        )
    return DownstreamTrajectory(
        player_id=log.player_id,
        day=log.day,
        minutes=(online + 1).astype(np.int64),
        tokens=tokens,
        x=log.x.copy(),
        y=log.y.copy(),
        continent=log.continent.copy(),
    )


# ---------------------------------------------------------------------------
# Serialization.

def save_corpus(
    samples: Sequence[TripletSample],
    path: str | Path,
    mask_rate: float,
    vocab_sha256: str,
) -> None:
    """Write the triplet corpus; masked anchors are reconstructed on load."""
    n = len(samples)
    source = np.empty((n, WINDOW_LEN, 2), dtype=np.uint32)
    positive = np.empty((n, WINDOW_LEN, 2), dtype=np.uint32)
    negative = np.empty((n, WINDOW_LEN, 2), dtype=np.uint32)
    bitmaps = np.empty(n, dtype=np.uint16)
    modes = np.empty(n, dtype=np.uint8)
    for i, s in enumerate(samples):
        source[i] = s.anchor_source
        positive[i] = s.positive
        negative[i] = s.negative
        bitmaps[i] = sum(1 << idx for idx in s.mask_indices)
        modes[i] = 0 if s.split_mode == "odd_even" else 1
    payload = b"".join(
        arr.astype(arr.dtype.newbyteorder("<")).tobytes()
        for arr in (source, positive, negative, bitmaps, modes)
    )
    header = {
        "version": 1,
        "n_samples": n,
        "window_len": WINDOW_LEN,
        "mask_rate": mask_rate,
        "vocab_sha256": vocab_sha256,
    }
    write_container(Path(path), _CORPUS_MAGIC, header, payload)


def load_corpus(path: str | Path) -> tuple[list[TripletSample], dict]:
    header, payload = read_container(Path(path), _CORPUS_MAGIC)
    if header.get("version") != 1:
        raise ValueError(f"{path}: unsupported corpus version {header.get('version')}")
    n = header["n_samples"]
    w = header["window_len"]
    sz = n * w * 2 * 4
    offset = 0
    source = np.frombuffer(payload[offset : offset + sz], dtype="<u4").reshape(n, w, 2)
    offset += sz
    positive = np.frombuffer(payload[offset : offset + sz], dtype="<u4").reshape(n, w, 2)
    offset += sz
    negative = np.frombuffer(payload[offset : offset + sz], dtype="<u4").reshape(n, w, 2)
    offset += sz
    bitmaps = np.frombuffer(payload[offset : offset + n * 2], dtype="<u2")
    offset += n * 2
    modes = np.frombuffer(payload[offset : offset + n], dtype=np.uint8)
    samples = []
    for i in range(n):
        src = source[i].astype(np.int64)
        idxs = tuple(j for j in range(w) if bitmaps[i] & (1 << j))
        masked = src.copy()
        if idxs:
            masked[list(idxs)] = MASK_ID
        samples.append(
            TripletSample(
                anchor=masked,
                positive=positive[i].astype(np.int64),
                negative=negative[i].astype(np.int64),
                anchor_source=src,
                mask_indices=idxs,
                masked_truth={j: int(src[j, 1]) for j in idxs},
                split_mode="odd_even" if modes[i] == 0 else "half",
            )
        )
    return samples, header


def save_trajectories(
    trajs: Sequence[DownstreamTrajectory], path: str | Path, vocab_sha256: str
) -> None:
    """Write downstream trajectories (online minutes only, sorted by key)."""
    trajs = sorted(trajs, key=lambda t: t.key)
    index = []
    blobs = []
    for t in trajs:
        online = np.flatnonzero(t.continent != OFFLINE)
        if not np.array_equal(online + 1, t.minutes):
            raise ValueError(
                f"trajectory {t.key}: minutes and online arrays disagree"
            )
        rec = np.empty((online.size, 5), dtype=np.int32)
        rec[:, 0] = t.minutes
        rec[:, 1] = t.tokens[:, 0]
        rec[:, 2] = t.tokens[:, 1]
        rec[:, 3] = t.x[online]
        rec[:, 4] = t.y[online]
        cont = t.continent[online].astype(np.int32)
        blob = rec.astype("<i4").tobytes() + cont.astype("<i4").tobytes()
        index.append(
            {"player_id": t.player_id, "day": t.day, "n_online": int(online.size)}
        )
        blobs.append(blob)
    header = {"version": 1, "vocab_sha256": vocab_sha256, "index": index}
    write_container(Path(path), _TRAJ_MAGIC, header, b"".join(blobs))


def load_trajectories(path: str | Path) -> tuple[list[DownstreamTrajectory], dict]:
    header, payload = read_container(Path(path), _TRAJ_MAGIC)
    if header.get("version") != 1:
        raise ValueError(
            f"{path}: unsupported trajectory container version {header.get('version')}"
        )
    out = []
    offset = 0
    for ent in header["index"]:
        n = ent["n_online"]
        rec = np.frombuffer(payload[offset : offset + n * 5 * 4], dtype="<i4")
        rec = rec.reshape(n, 5)
        offset += n * 5 * 4
        cont_vals = np.frombuffer(payload[offset : offset + n * 4], dtype="<i4")
        offset += n * 4
        x = np.full(1440, OFFLINE, dtype=np.int32)
        y = np.full(1440, OFFLINE, dtype=np.int32)
        c = np.full(1440, OFFLINE, dtype=np.int32)
        idx = rec[:, 0] - 1
        x[idx] = rec[:, 3]
        y[idx] = rec[:, 4]
        c[idx] = cont_vals
        out.append(
            DownstreamTrajectory(
                player_id=ent["player_id"],
                day=ent["day"],
                minutes=rec[:, 0].astype(np.int64),
                tokens=rec[:, 1:3].astype(np.int64),
                x=x,
                y=y,
                continent=c,
            )
        )
    return out, header
