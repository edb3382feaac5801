"""Joint training of the trajectory encoder.

Each triplet contributes two anchor variants per epoch: the frozen masking
stored in the corpus and a fresh masking of the same window drawn from the
trainer's stream, giving the 2:1 anchor:positive mix. Timestamps are drawn
fresh every epoch; the joint loss is the batch-mean hinge over squared
representation distances plus the mean cross-entropy over masked cells.

Early stopping monitors the epoch-mean training loss with a hard epoch
floor (`min_epochs`) before the patience window applies; the best-epoch
weights are restored at the end. All randomness flows from numpy
substreams of `TrainConfig.seed`, so a fixed seed reproduces the exact
report and weights.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from sklearn.base import BaseEstimator

from .dataset import TripletSample, WINDOW_LEN
from .model import ModelConfig, TrajectoryEncoder, build_model
from .vocab import MASK_ID, Vocabulary

# Highest base timestamp that keeps t + 16 inside the encodable day.
MAX_BASE_MINUTE = 1440 - WINDOW_LEN


class TrainingDiverged(RuntimeError):
    """Raised when the joint loss goes non-finite; carries the partial report."""

    def __init__(self, message: str, report: "TrainReport"):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 200
    min_epochs: int = 70
    patience: int = 8
    batch_size: int = 64
    learning_rate: float = 1e-4
    grad_clip: float = 1.0
    seed: int = 0
    holdout_fraction: float = 0.1
    # None means: inherit from the model config.
    margin: float | None = None
    mask_rate: float | None = None

    def __post_init__(self) -> None:
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if not 1 <= self.min_epochs <= self.max_epochs:
            raise ValueError(
                f"min_epochs must be in [1, max_epochs], got {self.min_epochs}"
            )
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.grad_clip <= 0:
            raise ValueError(f"grad_clip must be positive, got {self.grad_clip}")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ValueError(
                f"holdout_fraction must be in [0, 1), got {self.holdout_fraction}"
            )

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "TrainConfig":
        return cls(**data)


@dataclass
class EpochStats:
    epoch: int
    loss: float
    triplet_loss: float
    mcp_loss: float
    mcp_accuracy: float


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False
    heldout: dict | None = None

    def to_json(self) -> dict:
        return {
            "epochs": [asdict(e) for e in self.epochs],
            "best_epoch": self.best_epoch,
            "stopped_early": self.stopped_early,
            "heldout": self.heldout,
        }

    @classmethod
    def from_json(cls, data: dict) -> "TrainReport":
        return cls(
            epochs=[EpochStats(**e) for e in data["epochs"]],
            best_epoch=data["best_epoch"],
            stopped_early=data["stopped_early"],
            heldout=data.get("heldout"),
        )


def sample_timestamps(rng: np.random.Generator) -> tuple[int, int, int]:
    """Draw (t_anchor, t_positive, t_negative) base minutes.

    Anchor and negative are uniform over [1, 1424]; the positive stays
    within 16 minutes of the anchor, clamped to the same range.
    """
    t_a = int(rng.integers(1, MAX_BASE_MINUTE + 1))
    t_p = int(np.clip(t_a + rng.integers(-16, 17), 1, MAX_BASE_MINUTE))
    t_n = int(rng.integers(1, MAX_BASE_MINUTE + 1))
    return t_a, t_p, t_n


def triplet_loss(
    anchor: torch.Tensor,
    positive: torch.Tensor,
    negative: torch.Tensor,
    margin: float,
) -> torch.Tensor:
    """Batch-mean hinge over squared Euclidean representation distances."""
    if anchor.ndim == 1:
        anchor, positive, negative = (
            anchor.unsqueeze(0),
            positive.unsqueeze(0),
            negative.unsqueeze(0),
        )
    if anchor.shape != positive.shape or anchor.shape != negative.shape:
        raise ValueError(
            f"representation shapes differ: {tuple(anchor.shape)}, "
            f"{tuple(positive.shape)}, {tuple(negative.shape)}"
        )
    d_ap = ((anchor - positive) ** 2).sum(dim=-1)
    d_an = ((anchor - negative) ** 2).sum(dim=-1)
    return torch.clamp(d_ap - d_an + margin, min=0.0).mean()


def mcp_loss(
    logits: Mapping[int, Sequence[float]] | torch.Tensor,
    truth: Mapping[int, int] | torch.Tensor,
) -> torch.Tensor:
    """Mean cross-entropy over masked positions.

    Accepts either aligned tensors ((K, C) logits and (K,) class ids) or a
    pair of mappings keyed by mask position; mapping key sets must match.
    """
    if isinstance(logits, torch.Tensor):
        if not isinstance(truth, torch.Tensor):
            raise ValueError("tensor logits require tensor truth")
        if logits.shape[0] != truth.shape[0]:
            raise ValueError(
                f"got {logits.shape[0]} logit rows for {truth.shape[0]} truths"
            )
        if logits.shape[0] == 0:
            return logits.sum() * 0.0
        return F.cross_entropy(logits, truth)
    if set(logits) != set(truth):
        raise ValueError(
            f"logit positions {sorted(logits)} do not match "
            f"truth positions {sorted(truth)}"
        )
    keys = sorted(logits)
    stacked = torch.stack(
        [torch.as_tensor(logits[k], dtype=torch.float64) for k in keys]
    )
    targets = torch.tensor([int(truth[k]) for k in keys], dtype=torch.long)
    return F.cross_entropy(stacked, targets)


@dataclass
class Batch:
    """A fully materialized training batch (4B sequences).

    Row layout: [anchors variant 1 | anchors variant 2 | positives |
    negatives], each block of size n_triplets. mcp_positions index
    (row, position) pairs into the first two blocks.
    """

    tokens: np.ndarray
    minutes: np.ndarray
    mcp_positions: np.ndarray
    mcp_truth: np.ndarray
    n_triplets: int


def assemble_batch(
    samples: Sequence[TripletSample],
    rng: np.random.Generator,
    mask_rate: float,
) -> Batch:
    """Build the 2-anchor-variant batch with fresh timestamps and masks."""
    b = len(samples)
    w = WINDOW_LEN
    a1 = np.stack([s.anchor for s in samples])
    src = np.stack([s.anchor_source for s in samples])
    pos = np.stack([s.positive for s in samples])
    neg = np.stack([s.negative for s in samples])

    # Variant 2: re-mask the anchor source from the training stream.
    hits = rng.random((b, w)) < mask_rate
    a2 = src.copy()
    a2[hits] = MASK_ID

    t_a1 = rng.integers(1, MAX_BASE_MINUTE + 1, size=b)
    t_p = np.clip(t_a1 + rng.integers(-16, 17, size=b), 1, MAX_BASE_MINUTE)
    t_n = rng.integers(1, MAX_BASE_MINUTE + 1, size=b)
    t_a2 = rng.integers(1, MAX_BASE_MINUTE + 1, size=b)

    offsets = np.arange(1, w + 1, dtype=np.int64)
    minutes = np.concatenate(
        [
            t_a1[:, None] + offsets,
            t_a2[:, None] + offsets,
            t_p[:, None] + offsets,
            t_n[:, None] + offsets,
        ]
    )
    tokens = np.concatenate([a1, a2, pos, neg]).astype(np.int64)

    rows1 = []
    cols1 = []
    truth1 = []
    for i, s in enumerate(samples):
        for idx in s.mask_indices:
            rows1.append(i)
            cols1.append(idx)
            truth1.append(s.masked_truth[idx])
    rows2, cols2 = np.nonzero(hits)
    truth2 = src[rows2, cols2, 1]
    mcp_positions = np.concatenate(
        [
            np.stack([np.asarray(rows1, dtype=np.int64), np.asarray(cols1, dtype=np.int64)], axis=1).reshape(-1, 2),
            np.stack([rows2 + b, cols2], axis=1).astype(np.int64).reshape(-1, 2),
        ]
    )
    mcp_truth = np.concatenate(
        [np.asarray(truth1, dtype=np.int64), truth2.astype(np.int64)]
    )
    return Batch(
        tokens=tokens,
        minutes=minutes,
        mcp_positions=mcp_positions,
        mcp_truth=mcp_truth,
        n_triplets=b,
    )


def batch_loss(
    model: TrajectoryEncoder, batch: Batch, margin: float
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, int, int]:
    """Joint loss for one batch.

    Returns (loss, triplet_term, mcp_term, n_mcp_correct, n_mcp_total).
    The triplet term averages hinge values over both anchor variants.
    """
    device_dtype = next(model.parameters()).dtype
    tokens = torch.from_numpy(batch.tokens)
    minutes = torch.from_numpy(batch.minutes)
    encoded = model.encode(model.embed(tokens, minutes))
    reps = model.represent(encoded)
    b = batch.n_triplets
    r_a1, r_a2, r_p, r_n = reps[:b], reps[b : 2 * b], reps[2 * b : 3 * b], reps[3 * b :]
    l_triplet = 0.5 * (
        triplet_loss(r_a1, r_p, r_n, margin) + triplet_loss(r_a2, r_p, r_n, margin)
    )
    if batch.mcp_positions.shape[0] > 0:
        logits = model.mcp_logits(encoded, torch.from_numpy(batch.mcp_positions))
        truth = torch.from_numpy(batch.mcp_truth)
        l_mcp = mcp_loss(logits, truth)
        correct = int((logits.argmax(dim=1) == truth).sum())
        total = int(truth.shape[0])
    else:
        l_mcp = torch.zeros((), dtype=device_dtype)
        correct, total = 0, 0
    return l_triplet + l_mcp, l_triplet, l_mcp, correct, total


def split_holdout(
    n: int, fraction: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic (train_indices, heldout_indices) split."""
    k = int(n * fraction)
    perm = np.random.default_rng([seed, 11]).permutation(n)
    heldout = np.sort(perm[:k])
    train = np.sort(perm[k:])
    return train, heldout


def evaluate_heldout(
    model: TrajectoryEncoder,
    samples: Sequence[TripletSample],
    seed: int,
    majority_class: int,
) -> dict:
    """Cosine-gap and masked-prediction diagnostics on held-out triplets."""
    if not samples:
        return {}
    rng = np.random.default_rng([seed, 23])
    model.eval()
    pos_cos: list[float] = []
    neg_cos: list[float] = []
    correct = 0
    majority_correct = 0
    total = 0
    with torch.no_grad():
        for start in range(0, len(samples), 256):
            part = samples[start : start + 256]
            batch = assemble_batch(part, rng, mask_rate=0.0)
            tokens = torch.from_numpy(batch.tokens)
            minutes = torch.from_numpy(batch.minutes)
            encoded = model.encode(model.embed(tokens, minutes))
            reps = model.represent(encoded)
            b = batch.n_triplets
            r_a, r_p, r_n = reps[:b], reps[2 * b : 3 * b], reps[3 * b :]
            pos_cos.extend(F.cosine_similarity(r_a, r_p, dim=1).tolist())
            neg_cos.extend(F.cosine_similarity(r_a, r_n, dim=1).tolist())
            if batch.mcp_positions.shape[0]:
                keep = batch.mcp_positions[:, 0] < b  # variant-1 rows only
                positions = batch.mcp_positions[keep]
                truth = batch.mcp_truth[keep]
                logits = model.mcp_logits(encoded, torch.from_numpy(positions))
                pred = logits.argmax(dim=1).numpy()
                correct += int((pred == truth).sum())
                majority_correct += int((truth == majority_class).sum())
                total += int(truth.shape[0])
    return {
        "n_samples": len(samples),
        "pos_cosine": float(np.mean(pos_cos)),
        "neg_cosine": float(np.mean(neg_cos)),
        "mcp_accuracy": (correct / total) if total else None,
        "majority_accuracy": (majority_correct / total) if total else None,
        "majority_class": int(majority_class),
    }


def train(
    corpus: Sequence[TripletSample],
    model: TrajectoryEncoder,
    config: TrainConfig,
    progress: Callable[[EpochStats], None] | None = None,
) -> tuple[TrajectoryEncoder, TrainReport]:
    """Optimize the encoder on a triplet corpus; returns best-epoch weights."""
    if not corpus:
        raise ValueError("training corpus is empty")
    margin = config.margin if config.margin is not None else model.config.margin
    mask_rate = (
        config.mask_rate if config.mask_rate is not None else model.config.mask_rate
    )
    train_idx, heldout_idx = split_holdout(
        len(corpus), config.holdout_fraction, config.seed
    )
    if train_idx.size == 0:
        raise ValueError("holdout fraction leaves no training samples")
    train_samples = [corpus[i] for i in train_idx]
    heldout_samples = [corpus[i] for i in heldout_idx]

    truth_counts: dict[int, int] = {}
    for s in train_samples:
        for v in s.masked_truth.values():
            truth_counts[v] = truth_counts.get(v, 0) + 1
    majority_class = 0
    if truth_counts:
        # Ties break toward the smallest class id for determinism.
        majority_class = min(
            truth_counts, key=lambda c: (-truth_counts[c], c)
        )

    rng = np.random.default_rng([config.seed, 17])
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    report = TrainReport()
    best_loss = float("inf")
    best_state: dict | None = None

    model.train()
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(train_samples))
        sums = {"loss": 0.0, "triplet": 0.0, "mcp": 0.0}
        correct = 0
        total = 0
        n_seen = 0
        for start in range(0, len(order), config.batch_size):
            picks = order[start : start + config.batch_size]
            batch = assemble_batch([train_samples[i] for i in picks], rng, mask_rate)
            optimizer.zero_grad()
            loss, l_triplet, l_mcp, c, t = batch_loss(model, batch, margin)
            if not torch.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}", report
                )
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            optimizer.step()
            k = len(picks)
            sums["loss"] += float(loss.detach()) * k
            sums["triplet"] += float(l_triplet.detach()) * k
            sums["mcp"] += float(l_mcp.detach()) * k
            correct += c
            total += t
            n_seen += k
        stats = EpochStats(
            epoch=epoch,
            loss=sums["loss"] / n_seen,
            triplet_loss=sums["triplet"] / n_seen,
            mcp_loss=sums["mcp"] / n_seen,
            mcp_accuracy=(correct / total) if total else 0.0,
        )
        report.epochs.append(stats)
        if progress is not None:
            progress(stats)
        if stats.loss < best_loss:
            best_loss = stats.loss
            report.best_epoch = epoch
            best_state = {
                k: v.detach().clone() for k, v in model.state_dict().items()
            }
        if epoch >= config.min_epochs and epoch - report.best_epoch >= config.patience:
            report.stopped_early = True
            break

    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    report.heldout = evaluate_heldout(
        model, heldout_samples, config.seed, majority_class
    )
    return model, report


class RepresentationLearner(BaseEstimator):
    """Estimator shell: fit on a triplet corpus, transform trajectories.

    fit(X) expects a sequence of TripletSample; transform(X) a sequence of
    DownstreamTrajectory and returns an (N, d_model) float32 matrix in
    input order. Attributes after fit: model_, report_.
    """

    def __init__(
        self,
        vocabulary: Vocabulary | None = None,
        d_model: int = 256,
        d_hid: int = 1024,
        n_layers: int = 8,
        n_heads: int = 8,
        margin: float = 0.5,
        mask_rate: float = 0.2,
        dropout: float = 0.0,
        max_epochs: int = 200,
        min_epochs: int = 70,
        patience: int = 8,
        batch_size: int = 64,
        learning_rate: float = 1e-4,
        holdout_fraction: float = 0.1,
        seed: int = 0,
    ):
        self.vocabulary = vocabulary
        self.d_model = d_model
        self.d_hid = d_hid
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.margin = margin
        self.mask_rate = mask_rate
        self.dropout = dropout
        self.max_epochs = max_epochs
        self.min_epochs = min_epochs
        self.patience = patience
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.holdout_fraction = holdout_fraction
        self.seed = seed

    def fit(self, X: Sequence[TripletSample], y=None) -> "RepresentationLearner":
        if self.vocabulary is None:
            raise ValueError("RepresentationLearner requires a vocabulary")
        config = ModelConfig(
            zone_vocab_size=self.vocabulary.zone_vocab_size,
            cell_vocab_size=self.vocabulary.cell_vocab_size,
            d_model=self.d_model,
            d_hid=self.d_hid,
            n_layers=self.n_layers,
            n_heads=self.n_heads,
            margin=self.margin,
            mask_rate=self.mask_rate,
            dropout=self.dropout,
        )
        train_config = TrainConfig(
            max_epochs=self.max_epochs,
            min_epochs=self.min_epochs,
            patience=self.patience,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            seed=self.seed,
            holdout_fraction=self.holdout_fraction,
        )
        model = build_model(config, self.seed)
        self.model_, self.report_ = train(list(X), model, train_config)
        return self

    def transform(self, X) -> np.ndarray:
        if not hasattr(self, "model_"):
            raise ValueError("RepresentationLearner is not fitted; call fit first")
        from .extract import extract  # deferred to avoid a module cycle

        return np.stack([extract(t, self.model_) for t in X])
