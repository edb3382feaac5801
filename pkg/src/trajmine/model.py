"""Trajectory encoder: token embeddings + sinusoidal minute encoding +
pre-norm transformer stack, with a mean-pooled representation head and a
masked-cell prediction head.

The minute encoding covers logged minutes 1..1440; inputs are summed as
zone_embedding + cell_embedding + minute_encoding per position. The two
heads share the encoder output: `represent` mean-pools over positions and
applies a d->d linear map; `mcp_logits` scores selected positions over the
cell vocabulary.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .containers import read_container, write_container

MAX_MINUTE = 1440

_CKPT_MAGIC = b"TMCKPT01"


@dataclass(frozen=True)
class ModelConfig:
    """Architecture plus the two loss hyperparameters recorded with it."""

    zone_vocab_size: int
    cell_vocab_size: int
    d_model: int = 256
    d_hid: int = 1024
    n_layers: int = 8
    n_heads: int = 8
    margin: float = 0.5
    mask_rate: float = 0.2
    dropout: float = 0.0

    def __post_init__(self) -> None:
        if self.zone_vocab_size < 4 or self.cell_vocab_size < 4:
            raise ValueError("vocab sizes must cover the 3 reserved ids plus content")
        if self.d_model <= 0 or self.d_hid <= 0 or self.n_layers <= 0:
            raise ValueError("d_model, d_hid, and n_layers must be positive")
        if self.d_model % 2 != 0:
            raise ValueError(f"d_model must be even, got {self.d_model}")
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model ({self.d_model}) must be divisible by "
                f"n_heads ({self.n_heads})"
            )
        if self.margin <= 0:
            raise ValueError(f"margin must be positive, got {self.margin}")
        if not 0.0 <= self.mask_rate <= 1.0:
            raise ValueError(f"mask_rate must be in [0, 1], got {self.mask_rate}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "ModelConfig":
        return cls(**data)


def timestamp_encoding(minute: int, d_model: int) -> np.ndarray:
    """Sinusoidal encoding of one logged minute; valid minutes are 1..1440.

    Component 2m is sin(t / 10000**(2m / d)), component 2m+1 the matching
    cosine.
    """
    if not 1 <= minute <= MAX_MINUTE:
        raise ValueError(f"minute {minute} out of range [1, {MAX_MINUTE}]")
    if d_model <= 0 or d_model % 2 != 0:
        raise ValueError(f"d_model must be a positive even number, got {d_model}")
    return _sinusoid_table(d_model)[minute].copy()


@lru_cache(maxsize=8)
def _sinusoid_table(d_model: int) -> np.ndarray:
    """(MAX_MINUTE + 1, d_model) float32 table; row t is the encoding of t."""
    t = np.arange(MAX_MINUTE + 1, dtype=np.float64)[:, None]
    m = np.arange(d_model // 2, dtype=np.float64)[None, :]
    angle = t / np.power(10000.0, 2.0 * m / d_model)
    table = np.empty((MAX_MINUTE + 1, d_model), dtype=np.float64)
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return table.astype(np.float32)


class NonFiniteActivationError(RuntimeError):
    """Raised when an encoder layer produces NaN/Inf activations."""


class TrajectoryEncoder(nn.Module):
    def __init__(self, config: ModelConfig, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.config = config
        self.zone_embedding = nn.Embedding(config.zone_vocab_size, config.d_model)
        self.cell_embedding = nn.Embedding(config.cell_vocab_size, config.d_model)
        self.layers = nn.ModuleList(
            nn.TransformerEncoderLayer(
                d_model=config.d_model,
                nhead=config.n_heads,
                dim_feedforward=config.d_hid,
                dropout=config.dropout,
                activation="gelu",
                batch_first=True,
                norm_first=True,
            )
            for _ in range(config.n_layers)
        )
        self.final_norm = nn.LayerNorm(config.d_model)
        self.repr_head = nn.Linear(config.d_model, config.d_model)
        self.mcp_head = nn.Linear(config.d_model, config.cell_vocab_size)
        self.register_buffer(
            "minute_table",
            torch.from_numpy(_sinusoid_table(config.d_model).copy()),
            persistent=False,
        )
        if dtype != torch.float32:
            self.to(dtype)

    def embed(self, tokens: torch.Tensor, minutes: torch.Tensor | None) -> torch.Tensor:
        """Sum the three input components for a (B, L, 2) token batch.

        minutes is a (B, L) batch of 1-based logged minutes, or None to
        omit the position signal entirely (used to test that attention
        alone is order-invariant).
        """
        if tokens.ndim != 3 or tokens.shape[-1] != 2:
            raise ValueError(f"tokens must have shape (B, L, 2), got {tuple(tokens.shape)}")
        emb = self.zone_embedding(tokens[..., 0]) + self.cell_embedding(tokens[..., 1])
        if minutes is not None:
            if minutes.shape != tokens.shape[:2]:
                raise ValueError(
                    f"minutes shape {tuple(minutes.shape)} must match "
                    f"tokens batch shape {tuple(tokens.shape[:2])}"
                )
            if bool((minutes < 1).any()) or bool((minutes > MAX_MINUTE).any()):
                bad = minutes[(minutes < 1) | (minutes > MAX_MINUTE)][0]
                raise ValueError(
                    f"minute {int(bad)} out of range [1, {MAX_MINUTE}]"
                )
            emb = emb + self.minute_table[minutes].to(emb.dtype)
        return emb

    def encode(self, emb: torch.Tensor) -> torch.Tensor:
        """Run the pre-norm stack; name the first layer that goes non-finite."""
        h = emb
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if not torch.isfinite(h).all():
                raise NonFiniteActivationError(
                    f"non-finite activations after encoder layer {i}"
                )
        h = self.final_norm(h)
        if not torch.isfinite(h).all():
            raise NonFiniteActivationError("non-finite activations after final norm")
        return h

    def represent(self, encoded: torch.Tensor) -> torch.Tensor:
        """Mean-pool positions and apply the representation head."""
        if encoded.ndim == 2:
            encoded = encoded.unsqueeze(0)
        return self.repr_head(encoded.mean(dim=1))

    def mcp_logits(self, encoded: torch.Tensor, positions: torch.Tensor) -> torch.Tensor:
        """Cell-vocabulary logits at (row, position) index pairs.

        positions is an (K, 2) long tensor of [batch_row, seq_position].
        """
        gathered = encoded[positions[:, 0], positions[:, 1]]
        return self.mcp_head(gathered)

    def forward(self, tokens: torch.Tensor, minutes: torch.Tensor | None) -> torch.Tensor:
        return self.represent(self.encode(self.embed(tokens, minutes)))


def build_model(config: ModelConfig, seed: int) -> TrajectoryEncoder:
    """Construct a TrajectoryEncoder with seeded parameter init."""
    torch.manual_seed(seed)
    return TrajectoryEncoder(config)


def save_checkpoint(
    path: str | Path,
    model: TrajectoryEncoder,
    vocab_sha256: str,
    extra: dict | None = None,
) -> None:
    """Versioned checkpoint binding the weights to a vocabulary hash."""
    state = model.state_dict()
    names = sorted(state)
    tensors = []
    blobs = []
    for name in names:
        t = state[name].detach().cpu().contiguous()
        arr = t.numpy()
        tensors.append(
            {"name": name, "shape": list(arr.shape), "dtype": str(arr.dtype)}
        )
        blobs.append(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    header = {
        "version": 1,
        "config": model.config.to_json(),
        "vocab_sha256": vocab_sha256,
        "tensors": tensors,
        "extra": extra or {},
    }
    write_container(Path(path), _CKPT_MAGIC, header, b"".join(blobs))


def load_checkpoint(
    path: str | Path, expected_vocab_sha256: str | None = None
) -> tuple[TrajectoryEncoder, dict]:
    """Rebuild the model; optionally enforce the vocabulary binding."""
    header, payload = read_container(Path(path), _CKPT_MAGIC)
    if header.get("version") != 1:
        raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
    if (
        expected_vocab_sha256 is not None
        and header["vocab_sha256"] != expected_vocab_sha256
    ):
        raise ValueError(
            f"{path}: checkpoint was trained against vocabulary "
            f"{header['vocab_sha256'][:12]}..., expected "
            f"{expected_vocab_sha256[:12]}..."
        )
    config = ModelConfig.from_json(header["config"])
    model = TrajectoryEncoder(config)
    state = {}
    offset = 0
    for ent in header["tensors"]:
        dtype = np.dtype(ent["dtype"])
        count = int(np.prod(ent["shape"])) if ent["shape"] else 1
        size = count * dtype.itemsize
        arr = np.frombuffer(payload[offset : offset + size], dtype=dtype.newbyteorder("<"))
        offset += size
        state[ent["name"]] = torch.from_numpy(
            arr.astype(dtype, copy=True).reshape(ent["shape"])
        )
    missing = set(model.state_dict()) - set(state)
    if missing:
        raise ValueError(f"{path}: checkpoint missing tensors {sorted(missing)}")
    model.load_state_dict(state)
    return model, header
