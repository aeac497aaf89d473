import json

import numpy as np
import pytest

from atr import autodiff as ad
from atr.autodiff import DiffArray, NumericError, Tape
from atr.data import DataError, make_batches, synth_dataset
from atr.metrics import evaluate_split
from atr.model import ModelConfig, init_model_params
from atr.optim import SgdConfig, sgd_step
from atr.train import (Checkpoint, LossConfig, batch_scores, load_checkpoint,
                       ranking_loss, save_checkpoint, train)


def loss_loop_oracle(scores, margin):
    """Double loop over both hinge families, normalized by batch size."""
    n = scores.shape[0]
    total = 0.0
    for i in range(n):
        for j in range(n):
            if j == i:
                continue
            total += max(0.0, margin + scores[i, j] - scores[i, i])
            total += max(0.0, margin + scores[j, i] - scores[i, i])
    return total / n


def loss_value(scores, margin):
    return float(ranking_loss(ad.constant(scores), margin).values.reshape(()))


def small_dataset(seed=0):
    return synth_dataset(16, 4, 6, 5, seed=seed, split_counts=(10, 3, 3),
                         frames_range=(2, 5), words_range=(2, 4))


SMALL_CFG = ModelConfig(pooling="netrvlad", audio_dim=6, text_dim=5, dim=8,
                        clusters_text=2, clusters_audio=2)


class TestRankingLoss:
    def test_perfectly_separated_gives_zero(self):
        scores = -np.ones((4, 4)) + 2 * np.eye(4)
        assert loss_value(scores, 0.2) == 0.0

    def test_uniform_matrix_closed_form(self):
        for n, m in [(2, 0.0), (3, 0.2), (8, 1.0)]:
            scores = 0.37 * np.ones((n, n))
            assert abs(loss_value(scores, m) - 2 * m * (n - 1)) <= 1e-12

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            scores = rng.uniform(-1, 1, size=(4, 4))
            assert abs(loss_value(scores, 0.2) - loss_loop_oracle(scores, 0.2)) <= 1e-12

    def test_non_negative(self):
        rng = np.random.default_rng(1)
        assert all(loss_value(rng.uniform(-1, 1, (5, 5)), 0.2) >= 0.0
                   for _ in range(20))

    def test_shift_invariance(self):
        rng = np.random.default_rng(2)
        scores = rng.uniform(-1, 1, size=(5, 5))
        assert abs(loss_value(scores, 0.2) - loss_value(scores + 0.41, 0.2)) <= 1e-12

    def test_zero_iff_all_hinges_inactive(self):
        scores = np.array([[1.0, 0.7], [0.75, 1.0]])
        assert loss_value(scores, 0.2) == 0.0      # worst slack is exactly m+0.75-1
        assert loss_value(scores, 0.3) > 0.0

    def test_inactive_hinges_get_zero_gradient(self):
        tape = Tape()
        scores = DiffArray(-np.ones((3, 3)) + 2 * np.eye(3), tape)
        ad.backward(ranking_loss(scores, 0.2))
        np.testing.assert_array_equal(scores.grad, np.zeros((3, 3)))

    def test_batch_below_two_rejected(self):
        with pytest.raises(ValueError):
            ranking_loss(ad.constant(np.ones((1, 1))), 0.2)

    def test_non_square_rejected(self):
        with pytest.raises(ad.ShapeMismatch):
            ranking_loss(ad.constant(np.ones((2, 3))), 0.2)

    def test_one_small_step_decreases_batch_loss(self):
        ds = small_dataset()
        params = init_model_params(SMALL_CFG, seed=5)
        batch = next(make_batches(ds, "train", 8, seed=0))
        tape = Tape()
        scores, wrapped = batch_scores(params, batch, SMALL_CFG, tape)
        loss = ranking_loss(scores, 0.2)
        before = float(loss.values.reshape(()))
        assert before > 0
        ad.backward(loss)
        grads = {k: wrapped[k].grad for k in params}
        params2 = sgd_step(params, grads, SgdConfig(1e-4, 0.0))
        scores2, _ = batch_scores(params2, batch, SMALL_CFG, None)
        after = float(ranking_loss(scores2, 0.2).values.reshape(()))
        assert after < before


class TestCheckpoint:
    def trained(self, tmp_path, epochs=2):
        ds = small_dataset()
        ckpt, history = train(ds, SMALL_CFG, LossConfig(0.2, 8), SgdConfig(0.05, 0.001),
                              epochs=epochs, seed=3)
        return ds, ckpt, history

    def test_round_trip_scores_bit_identical(self, tmp_path):
        ds, ckpt, _ = self.trained(tmp_path)
        path = tmp_path / "m.ckpt"
        save_checkpoint(ckpt, path)
        loaded = load_checkpoint(path)
        batch = next(make_batches(ds, "test", 3, seed=0))
        s1, _ = batch_scores(ckpt.params, batch, SMALL_CFG, None)
        s2, _ = batch_scores(loaded.params, batch, SMALL_CFG, None)
        assert s1.values.tobytes() == s2.values.tobytes()

    def test_truncated_file_names_section(self, tmp_path):
        _, ckpt, _ = self.trained(tmp_path)
        path = tmp_path / "m.ckpt"
        save_checkpoint(ckpt, path)
        path.write_bytes(path.read_bytes()[:-16])
        with pytest.raises(DataError, match="truncated array section"):
            load_checkpoint(path)

    def test_config_mismatch_rejected(self, tmp_path):
        _, ckpt, _ = self.trained(tmp_path)
        path = tmp_path / "m.ckpt"
        save_checkpoint(ckpt, path)
        other = ModelConfig(pooling="netrvlad", audio_dim=6, text_dim=5, dim=8,
                            clusters_text=4, clusters_audio=2)
        with pytest.raises(DataError, match="does not match"):
            load_checkpoint(path, expect_model=other)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"JUNKJUNKJUNK")
        with pytest.raises(DataError, match="magic"):
            load_checkpoint(path)


class TestTrainLoop:
    def test_zero_epochs_returns_initial_params(self):
        ds = small_dataset()
        ckpt, history = train(ds, SMALL_CFG, LossConfig(0.2, 8), SgdConfig(),
                              epochs=0, seed=1)
        init = init_model_params(SMALL_CFG, seed=1)
        assert ckpt.epoch == 0
        for name in init:
            np.testing.assert_array_equal(ckpt.params[name], init[name])
        assert history[0]["val"]["t2a"]["r1"] is not None

    def test_fixed_seed_identical_loss_trajectory(self, tmp_path):
        ds = small_dataset()
        logs = []
        for run in range(2):
            log = tmp_path / f"log{run}.jsonl"
            train(ds, SMALL_CFG, LossConfig(0.2, 8), SgdConfig(0.05, 0.001),
                  epochs=3, seed=7, log_file=log)
            logs.append(log.read_bytes())
        assert logs[0] == logs[1]

    def test_synthetic_learnability_quick(self):
        # small smoke version; the full-strength run lives in the acceptance suite
        ds = synth_dataset(24, 4, 6, 5, seed=0, split_counts=(16, 4, 4),
                           noise_sigma=0.05)
        ckpt, _ = train(ds, SMALL_CFG, LossConfig(0.2, 8), SgdConfig(0.05, 0.001),
                        epochs=40, seed=0, patience=None)
        report = evaluate_split(ckpt.params, ds, "train", SMALL_CFG)
        assert report["t2a"]["r1"] >= 50.0

    def test_empty_split_rejected(self):
        ds = synth_dataset(6, 3, 4, 4, seed=0, split_counts=(6, 0, 0))
        with pytest.raises(DataError, match="validation"):
            train(ds, ModelConfig(pooling="mean", audio_dim=4, text_dim=4, dim=5),
                  LossConfig(0.2, 4), SgdConfig(), epochs=1, seed=0)

    def test_log_is_one_json_object_per_line(self, tmp_path):
        ds = small_dataset()
        log = tmp_path / "log.jsonl"
        train(ds, SMALL_CFG, LossConfig(0.2, 8), SgdConfig(),
              epochs=2, seed=0, log_file=log)
        lines = log.read_text().strip().splitlines()
        assert len(lines) == 3  # epoch 0 baseline + 2 epochs
        for line in lines:
            record = json.loads(line)
            assert {"epoch", "loss", "val"} <= set(record)
