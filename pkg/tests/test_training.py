import math

import numpy as np
import pytest
import torch

from sklearn.base import clone

from test_dataset import random_log
from trajmine.dataset import build_corpus, build_downstream
from trajmine.extract import extract
from trajmine.model import ModelConfig, build_model
from trajmine.training import (
    MAX_BASE_MINUTE,
    Batch,
    RepresentationLearner,
    TrainConfig,
    TrainingDiverged,
    TrainReport,
    assemble_batch,
    batch_loss,
    evaluate_heldout,
    mcp_loss,
    sample_timestamps,
    split_holdout,
    train,
    triplet_loss,
)
from trajmine.vocab import MASK_ID, build_vocabulary


@pytest.fixture(scope="module")
def corpus_setup(small_world):
    rng = np.random.default_rng(40)
    logs = [random_log(rng, small_world, player_id=i) for i in range(10)]
    vocab = build_vocabulary((lg.locations() for lg in logs), small_world)
    corpus = build_corpus(logs, small_world, vocab, mask_rate=0.3, seed=40)
    assert len(corpus) >= 8
    config = ModelConfig(
        zone_vocab_size=vocab.zone_vocab_size,
        cell_vocab_size=vocab.cell_vocab_size,
        d_model=16,
        d_hid=32,
        n_layers=1,
        n_heads=2,
    )
    return corpus, config


class TestSampleTimestamps:
    def test_ranges_and_positive_proximity(self):
        rng = np.random.default_rng(0)
        for _ in range(2000):
            t_a, t_p, t_n = sample_timestamps(rng)
            assert 1 <= t_a <= MAX_BASE_MINUTE
            assert 1 <= t_n <= MAX_BASE_MINUTE
            assert 1 <= t_p <= MAX_BASE_MINUTE
            assert abs(t_p - t_a) <= 16


class TestTripletLoss:
    def test_identical_inputs_yield_margin(self):
        v = torch.tensor([[1.0, -2.0, 3.0]])
        assert float(triplet_loss(v, v, v, margin=0.7)) == pytest.approx(0.7)

    def test_separated_negative_yields_zero(self):
        a = torch.tensor([[0.0, 0.0]])
        n = torch.tensor([[10.0, 0.0]])
        assert float(triplet_loss(a, a, n, margin=0.5)) == 0.0

    def test_hand_case(self):
        # d_ap = 4, d_an = 1: hinge = 4 - 1 + 0.5 = 3.5.
        a = torch.tensor([[0.0]])
        p = torch.tensor([[2.0]])
        n = torch.tensor([[1.0]])
        assert float(triplet_loss(a, p, n, margin=0.5)) == pytest.approx(3.5)

    def test_batch_mean(self):
        a = torch.tensor([[0.0], [0.0]])
        p = torch.tensor([[2.0], [0.0]])
        n = torch.tensor([[1.0], [10.0]])
        # Rows give 3.5 and 0 -> mean 1.75.
        assert float(triplet_loss(a, p, n, margin=0.5)) == pytest.approx(1.75)

    def test_unbatched_vectors_accepted(self):
        a = torch.tensor([0.0])
        assert float(triplet_loss(a, a, a, margin=0.3)) == pytest.approx(0.3)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="shapes differ"):
            triplet_loss(torch.zeros(2, 3), torch.zeros(2, 3), torch.zeros(2, 4), 0.5)


class TestMcpLoss:
    def test_uniform_logits_equal_log_vocab(self):
        for c in (5, 17, 301):
            logits = torch.zeros(4, c)
            truth = torch.arange(4) % c
            assert float(mcp_loss(logits, truth)) == pytest.approx(
                math.log(c), abs=1e-6
            )

    def test_hand_case(self):
        # CE([1, 2, 3], class 2) = ln(1 + e^-1 + e^-2).
        truth = torch.tensor([2])
        expect = math.log(1.0 + math.exp(-1.0) + math.exp(-2.0))
        assert expect == pytest.approx(0.40760596444438, abs=1e-12)
        f32 = mcp_loss(torch.tensor([[1.0, 2.0, 3.0]]), truth)
        assert float(f32) == pytest.approx(expect, abs=1e-6)
        f64 = mcp_loss(torch.tensor([[1.0, 2.0, 3.0]], dtype=torch.float64), truth)
        assert float(f64) == pytest.approx(expect, abs=1e-12)

    def test_mapping_form_matches_tensor_form(self):
        logits = {4: [1.0, 2.0, 3.0], 0: [0.5, 0.5, -1.0]}
        truth = {4: 2, 0: 1}
        tensor_val = mcp_loss(
            torch.tensor([[0.5, 0.5, -1.0], [1.0, 2.0, 3.0]]),
            torch.tensor([1, 2]),
        )
        assert float(mcp_loss(logits, truth)) == pytest.approx(float(tensor_val))

    def test_mapping_key_mismatch_rejected(self):
        with pytest.raises(ValueError, match="do not match"):
            mcp_loss({0: [1.0, 2.0]}, {1: 0})

    def test_tensor_logits_require_tensor_truth(self):
        with pytest.raises(ValueError, match="tensor truth"):
            mcp_loss(torch.zeros(1, 2), {0: 1})

    def test_row_count_mismatch_rejected(self):
        with pytest.raises(ValueError, match="logit rows"):
            mcp_loss(torch.zeros(2, 3), torch.tensor([0]))

    def test_empty_tensor_contributes_zero(self):
        assert float(mcp_loss(torch.zeros(0, 9), torch.zeros(0, dtype=torch.long))) == 0.0


class TestAssembleBatch:
    def test_matches_manual_replay(self, corpus_setup):
        corpus, _config = corpus_setup
        samples = corpus[:5]
        b, w = len(samples), 16
        mask_rate = 0.35

        batch = assemble_batch(samples, np.random.default_rng(77), mask_rate)

        rng = np.random.default_rng(77)
        hits = rng.random((b, w)) < mask_rate
        t_a1 = rng.integers(1, MAX_BASE_MINUTE + 1, size=b)
        t_p = np.clip(t_a1 + rng.integers(-16, 17, size=b), 1, MAX_BASE_MINUTE)
        t_n = rng.integers(1, MAX_BASE_MINUTE + 1, size=b)
        t_a2 = rng.integers(1, MAX_BASE_MINUTE + 1, size=b)

        assert batch.n_triplets == b
        assert batch.tokens.shape == (4 * b, w, 2)
        src = np.stack([s.anchor_source for s in samples])
        a2 = src.copy()
        a2[hits] = MASK_ID
        assert np.array_equal(batch.tokens[:b], np.stack([s.anchor for s in samples]))
        assert np.array_equal(batch.tokens[b : 2 * b], a2)
        assert np.array_equal(
            batch.tokens[2 * b : 3 * b], np.stack([s.positive for s in samples])
        )
        assert np.array_equal(
            batch.tokens[3 * b :], np.stack([s.negative for s in samples])
        )

        offsets = np.arange(1, w + 1)
        for block, base in zip(range(4), (t_a1, t_a2, t_p, t_n)):
            got = batch.minutes[block * b : (block + 1) * b]
            assert np.array_equal(got, base[:, None] + offsets)
        assert batch.minutes.min() >= 1 and batch.minutes.max() <= 1440

        k1 = sum(len(s.mask_indices) for s in samples)
        expect_pos1 = [
            (i, idx) for i, s in enumerate(samples) for idx in s.mask_indices
        ]
        expect_truth1 = [
            s.masked_truth[idx] for s in samples for idx in s.mask_indices
        ]
        assert [tuple(r) for r in batch.mcp_positions[:k1]] == expect_pos1
        assert batch.mcp_truth[:k1].tolist() == expect_truth1
        rows2, cols2 = np.nonzero(hits)
        assert np.array_equal(batch.mcp_positions[k1:, 0], rows2 + b)
        assert np.array_equal(batch.mcp_positions[k1:, 1], cols2)
        assert np.array_equal(batch.mcp_truth[k1:], src[rows2, cols2, 1])

    def test_zero_mask_rate_keeps_source_unmasked(self, corpus_setup):
        corpus, _config = corpus_setup
        samples = corpus[:3]
        batch = assemble_batch(samples, np.random.default_rng(1), mask_rate=0.0)
        b = len(samples)
        assert np.array_equal(
            batch.tokens[b : 2 * b], np.stack([s.anchor_source for s in samples])
        )
        # Variant-2 block contributes no masked positions.
        assert (batch.mcp_positions[:, 0] < b).all()


class TestBatchLoss:
    def test_joint_loss_is_sum_of_terms(self, corpus_setup):
        corpus, config = corpus_setup
        model = build_model(config, seed=1).eval()
        batch = assemble_batch(corpus[:6], np.random.default_rng(3), mask_rate=0.25)
        loss, l_triplet, l_mcp, correct, total = batch_loss(model, batch, margin=0.5)
        loss, l_triplet, l_mcp = (
            float(loss.detach()),
            float(l_triplet.detach()),
            float(l_mcp.detach()),
        )
        assert loss == pytest.approx(l_triplet + l_mcp)
        assert 0 <= correct <= total
        assert total == batch.mcp_truth.shape[0] > 0

    def test_triplet_term_averages_both_anchor_variants(self, corpus_setup):
        corpus, config = corpus_setup
        model = build_model(config, seed=1).eval()
        batch = assemble_batch(corpus[:6], np.random.default_rng(3), mask_rate=0.25)
        _, l_triplet, _, _, _ = batch_loss(model, batch, margin=0.5)
        with torch.no_grad():
            encoded = model.encode(
                model.embed(
                    torch.from_numpy(batch.tokens), torch.from_numpy(batch.minutes)
                )
            )
            reps = model.represent(encoded)
        b = batch.n_triplets
        expect = 0.5 * (
            triplet_loss(reps[:b], reps[2 * b : 3 * b], reps[3 * b :], 0.5)
            + triplet_loss(reps[b : 2 * b], reps[2 * b : 3 * b], reps[3 * b :], 0.5)
        )
        assert float(l_triplet.detach()) == pytest.approx(float(expect), abs=1e-6)

    def test_empty_mask_positions_zero_mcp(self, corpus_setup):
        corpus, config = corpus_setup
        model = build_model(config, seed=1).eval()
        sample = corpus[0]
        bare = type(sample)(
            anchor=sample.anchor_source.copy(),
            positive=sample.positive,
            negative=sample.negative,
            anchor_source=sample.anchor_source,
            mask_indices=(),
            masked_truth={},
            split_mode=sample.split_mode,
        )
        batch = assemble_batch([bare], np.random.default_rng(3), mask_rate=0.0)
        loss, l_triplet, l_mcp, correct, total = batch_loss(model, batch, margin=0.5)
        assert float(l_mcp.detach()) == 0.0 and correct == 0 and total == 0
        assert float(loss.detach()) == pytest.approx(float(l_triplet.detach()))


class TestSplitHoldout:
    def test_partition_properties(self):
        train_idx, held = split_holdout(100, 0.1, seed=4)
        assert held.shape == (10,)
        assert train_idx.shape == (90,)
        assert sorted(np.concatenate([train_idx, held]).tolist()) == list(range(100))
        assert np.array_equal(train_idx, np.sort(train_idx))
        assert np.array_equal(held, np.sort(held))

    def test_deterministic_per_seed(self):
        a = split_holdout(57, 0.2, seed=9)
        b = split_holdout(57, 0.2, seed=9)
        c = split_holdout(57, 0.2, seed=10)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
        assert not np.array_equal(a[1], c[1])

    def test_zero_fraction_keeps_everything(self):
        train_idx, held = split_holdout(10, 0.0, seed=1)
        assert held.size == 0 and train_idx.tolist() == list(range(10))


class TestTrainConfig:
    def test_validation(self):
        with pytest.raises(ValueError, match="max_epochs"):
            TrainConfig(max_epochs=0, min_epochs=1)
        with pytest.raises(ValueError, match="min_epochs"):
            TrainConfig(max_epochs=5, min_epochs=6)
        with pytest.raises(ValueError, match="patience"):
            TrainConfig(patience=0)
        with pytest.raises(ValueError, match="batch_size"):
            TrainConfig(batch_size=0)
        with pytest.raises(ValueError, match="learning_rate"):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ValueError, match="grad_clip"):
            TrainConfig(grad_clip=0.0)
        with pytest.raises(ValueError, match="holdout_fraction"):
            TrainConfig(holdout_fraction=1.0)

    def test_json_roundtrip(self):
        cfg = TrainConfig(max_epochs=3, min_epochs=2, seed=8, margin=0.25)
        assert TrainConfig.from_json(cfg.to_json()) == cfg


class TestTrain:
    def small_config(self, **kw):
        base = dict(
            max_epochs=3,
            min_epochs=1,
            patience=8,
            batch_size=8,
            learning_rate=1e-3,
            seed=5,
            holdout_fraction=0.2,
        )
        base.update(kw)
        return TrainConfig(**base)

    def test_deterministic_given_seed(self, corpus_setup):
        corpus, config = corpus_setup
        runs = []
        for _ in range(2):
            model = build_model(config, seed=2)
            model, report = train(corpus, model, self.small_config())
            runs.append((model.state_dict(), report.to_json()))
        s1, s2 = runs[0][0], runs[1][0]
        assert all(torch.equal(s1[k], s2[k]) for k in s1)
        assert runs[0][1] == runs[1][1]

    def test_report_shape_and_best_epoch(self, corpus_setup):
        corpus, config = corpus_setup
        model = build_model(config, seed=2)
        _, report = train(corpus, model, self.small_config())
        assert len(report.epochs) == 3
        losses = [e.loss for e in report.epochs]
        assert report.best_epoch == int(np.argmin(losses)) + 1
        assert report.heldout is not None
        assert report.heldout["n_samples"] >= 1
        assert -1.0 <= report.heldout["pos_cosine"] <= 1.0
        assert -1.0 <= report.heldout["neg_cosine"] <= 1.0
        assert TrainReport.from_json(report.to_json()).to_json() == report.to_json()

    def test_restores_best_epoch_weights(self, corpus_setup):
        corpus, config = corpus_setup
        cfg = self.small_config(max_epochs=4, learning_rate=5e-2)
        model1 = build_model(config, seed=2)
        model1, report1 = train(corpus, model1, cfg)
        # Re-running with the horizon cut at the best epoch must land on
        # exactly the weights the full run restored.
        cfg2 = self.small_config(
            max_epochs=report1.best_epoch, learning_rate=5e-2
        )
        model2 = build_model(config, seed=2)
        model2, _ = train(corpus, model2, cfg2)
        s1, s2 = model1.state_dict(), model2.state_dict()
        assert all(torch.equal(s1[k], s2[k]) for k in s1)

    def test_early_stop_invariants(self, corpus_setup):
        corpus, config = corpus_setup
        model = build_model(config, seed=2)
        cfg = self.small_config(
            max_epochs=40, min_epochs=1, patience=1, learning_rate=5e-2
        )
        _, report = train(corpus, model, cfg)
        if report.stopped_early:
            last = len(report.epochs)
            assert last >= cfg.min_epochs
            assert last - report.best_epoch >= cfg.patience
            assert last < cfg.max_epochs

    def test_min_epochs_floor(self, corpus_setup):
        corpus, config = corpus_setup
        model = build_model(config, seed=2)
        cfg = self.small_config(
            max_epochs=6, min_epochs=5, patience=1, learning_rate=5e-2
        )
        _, report = train(corpus, model, cfg)
        assert len(report.epochs) >= 5

    def test_empty_corpus_rejected(self, corpus_setup):
        _, config = corpus_setup
        with pytest.raises(ValueError, match="empty"):
            train([], build_model(config, seed=0), self.small_config())

    def test_divergence_raises_with_report(self, corpus_setup):
        corpus, config = corpus_setup
        model = build_model(config, seed=2)
        with torch.no_grad():
            model.repr_head.bias.fill_(float("inf"))
        with pytest.raises(TrainingDiverged, match="epoch 1") as excinfo:
            train(corpus, model, self.small_config())
        assert isinstance(excinfo.value.report, TrainReport)


class TestEvaluateHeldout:
    def test_empty_input(self, corpus_setup):
        _, config = corpus_setup
        assert evaluate_heldout(build_model(config, seed=0), [], 0, 3) == {}

    def test_diagnostics_ranges(self, corpus_setup):
        corpus, config = corpus_setup
        model = build_model(config, seed=0)
        out = evaluate_heldout(model, corpus[:8], seed=3, majority_class=3)
        assert out["n_samples"] == 8
        assert -1.0 <= out["pos_cosine"] <= 1.0
        assert -1.0 <= out["neg_cosine"] <= 1.0
        assert out["mcp_accuracy"] is None or 0.0 <= out["mcp_accuracy"] <= 1.0
        assert out["majority_class"] == 3


@pytest.fixture(scope="module")
def learner_setup(small_world):
    rng = np.random.default_rng(41)
    logs = [random_log(rng, small_world, player_id=i) for i in range(10)]
    vocab = build_vocabulary((lg.locations() for lg in logs), small_world)
    corpus = build_corpus(logs, small_world, vocab, mask_rate=0.3, seed=41)
    trajs = [
        t
        for t in (build_downstream(lg, small_world, vocab) for lg in logs)
        if len(t.minutes) > 0
    ]
    return vocab, corpus, trajs


class TestRepresentationLearner:
    def make(self, vocab):
        return RepresentationLearner(
            vocabulary=vocab,
            d_model=16,
            d_hid=32,
            n_layers=1,
            n_heads=2,
            max_epochs=2,
            min_epochs=1,
            batch_size=8,
            learning_rate=1e-3,
            seed=9,
        )

    def test_params_round_trip_and_clone(self, learner_setup):
        vocab, _, _ = learner_setup
        learner = self.make(vocab)
        params = learner.get_params()
        assert params["d_model"] == 16
        assert params["seed"] == 9
        copy = clone(learner)
        assert copy.get_params() == params
        copy.set_params(seed=10)
        assert copy.seed == 10 and learner.seed == 9

    def test_requires_vocabulary(self, learner_setup):
        _, corpus, _ = learner_setup
        with pytest.raises(ValueError, match="vocabulary"):
            RepresentationLearner().fit(corpus)

    def test_transform_before_fit_rejected(self, learner_setup):
        vocab, _, trajs = learner_setup
        with pytest.raises(ValueError, match="not fitted"):
            self.make(vocab).transform(trajs)

    def test_fit_transform_matches_extract(self, learner_setup):
        vocab, corpus, trajs = learner_setup
        learner = self.make(vocab).fit(corpus)
        assert isinstance(learner.report_, TrainReport)
        out = learner.transform(trajs)
        assert out.shape == (len(trajs), 16)
        assert out.dtype == np.float32
        for i, traj in enumerate(trajs):
            assert np.array_equal(out[i], extract(traj, learner.model_))
