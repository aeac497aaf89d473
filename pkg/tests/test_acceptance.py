"""Acceptance suite: one test per release criterion, each printing a
pass/fail line.  Run with `pytest tests/test_acceptance.py -s`."""

import time

import numpy as np
import pytest

from atr import autodiff as ad
from atr.cli import main as cli_main
from atr.data import make_batches, synth_dataset
from atr.gradcheck import check_all_ops, check_heads
from atr.metrics import compute_metrics, evaluate_split, rank_queries
from atr.model import (ModelConfig, SimilarityMatrix, init_model_params,
                       project_and_gate, similarity_matrix, wrap_params)
from atr.optim import SgdConfig
from atr.pooling import pool_max, pool_mean, pool_netrvlad, pool_netvlad
from atr.train import LossConfig, batch_scores, ranking_loss, train

GRADCHECK_TOL = 1e-4
VALUE_TOL = 1e-12


def report(name, detail=""):
    print(f"\nPASS: {name}" + (f" ({detail})" if detail else ""))


# ---------------------------------------------------------------------------
# independent scalar oracles

def softmax_rows(logits):
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def vlad_oracle(x, w, b, c):
    clusters, dim = w.shape
    a = softmax_rows(x @ w.T + b)
    out = np.zeros((clusters, dim))
    for k in range(clusters):
        for j in range(dim):
            for i in range(x.shape[0]):
                res = x[i, j] - (c[k, j] if c is not None else 0.0)
                out[k, j] += a[i, k] * res
    return out.reshape(1, -1)


def gate_oracle(pooled, fc_w, fc_b, gate_w, gate_b):
    x = pooled @ fc_w + fc_b
    return (1.0 / (1.0 + np.exp(-(x @ gate_w + gate_b)))) * x


def cosine_oracle(c, a):
    out = np.empty((c.shape[0], a.shape[0]))
    for i in range(c.shape[0]):
        for j in range(a.shape[0]):
            out[i, j] = (c[i] / np.linalg.norm(c[i])) @ (a[j] / np.linalg.norm(a[j]))
    return out


def loss_oracle(scores, margin):
    n = scores.shape[0]
    total = 0.0
    for i in range(n):
        for j in range(n):
            if j != i:
                total += max(0.0, margin + scores[i, j] - scores[i, i])
                total += max(0.0, margin + scores[j, i] - scores[i, i])
    return total / n


def rank_oracle(scores_row, true_idx):
    order = sorted(range(len(scores_row)),
                   key=lambda j: (-scores_row[j], j == true_idx))
    return order.index(true_idx) + 1


# ---------------------------------------------------------------------------

def test_gradcheck_suite():
    start = time.monotonic()
    op_errors = check_all_ops(seed=0)
    head_errors = check_heads(seed=0)
    elapsed = time.monotonic() - start
    worst = max(max(op_errors.values()), max(head_errors.values()))
    assert worst <= GRADCHECK_TOL, (op_errors, head_errors)
    assert elapsed < 60.0
    report("gradcheck: every op and every pooling head matches finite differences",
           f"worst rel err {worst:.2e}, {elapsed:.1f}s")


def test_oracle_equivalence():
    rng = np.random.default_rng(2024)
    for trial in range(100):
        rows = int(rng.integers(2, 8))
        dim = int(rng.integers(2, 6))
        clusters = int(rng.integers(1, 5))
        x = rng.uniform(-1, 1, (rows, dim))
        # pooling
        assert np.abs(pool_mean(ad.constant(x), rows).values
                      - x.mean(axis=0)).max() <= VALUE_TOL
        assert np.abs(pool_max(ad.constant(x), rows).values
                      - x.max(axis=0)).max() <= VALUE_TOL
        w = rng.normal(size=(clusters, dim))
        b = rng.normal(size=(1, clusters))
        c = rng.normal(size=(clusters, dim))
        p = {"w": ad.constant(w), "b": ad.constant(b), "c": ad.constant(c)}
        assert np.abs(pool_netvlad(ad.constant(x), rows, p).values
                      - vlad_oracle(x, w, b, c)).max() <= VALUE_TOL
        assert np.abs(pool_netrvlad(ad.constant(x), rows, p).values
                      - vlad_oracle(x, w, b, None)).max() <= VALUE_TOL
        # gating
        d = int(rng.integers(2, 6))
        fc_w, fc_b = rng.normal(size=(dim, d)), rng.normal(size=(1, d))
        g_w, g_b = rng.normal(size=(d, d)), rng.normal(size=(1, d))
        got = project_and_gate(ad.constant(x[:1]), wrap_params(
            {"fc/weight": fc_w, "fc/bias": fc_b,
             "gate/weight": g_w, "gate/bias": g_b}, None)).values
        assert np.abs(got - gate_oracle(x[:1], fc_w, fc_b, g_w, g_b)).max() <= VALUE_TOL
        # similarity
        cv, av = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
        sim = similarity_matrix(cv, av, [0, 1, 2])
        assert np.abs(sim.scores - cosine_oracle(cv, av)).max() <= VALUE_TOL
        # loss
        s = rng.uniform(-1, 1, (4, 4))
        got_loss = float(ranking_loss(ad.constant(s), 0.2).values.reshape(()))
        assert abs(got_loss - loss_oracle(s, 0.2)) <= VALUE_TOL
        # ranking: exact agreement with the full-sort oracle
        n_aud = int(rng.integers(2, 8))
        caps = int(rng.integers(1, 4))
        truth = np.repeat(np.arange(n_aud), caps)
        scores = rng.uniform(-1, 1, (n_aud * caps, n_aud))
        rsim = SimilarityMatrix(scores, truth)
        t2a = rank_queries(rsim, "t2a").ranks
        assert all(t2a[i] == rank_oracle(scores[i], int(truth[i]))
                   for i in range(len(truth)))
        a2t = rank_queries(rsim, "a2t").ranks
        assert all(a2t[j] == min(rank_oracle(scores[:, j], r)
                                 for r in rsim.grouping[j])
                   for j in range(n_aud))
    report("oracle equivalence: pooling, gating, similarity, loss, ranking "
           "on 100 random instances")


def test_closed_form_loss():
    for n in (2, 3, 8):
        for m in (0.0, 0.2, 1.0):
            uniform = 0.123 * np.ones((n, n))
            got = float(ranking_loss(ad.constant(uniform), m).values.reshape(()))
            assert abs(got - 2 * m * (n - 1)) <= VALUE_TOL, (n, m, got)
        separated = -np.ones((n, n)) + 2 * np.eye(n)
        assert float(ranking_loss(ad.constant(separated), 0.2).values.reshape(())) == 0.0
    report("closed-form loss: uniform matrix gives 2m(B-1); separated matrix gives 0")


def test_netvlad_netrvlad_identity():
    rng = np.random.default_rng(7)
    for _ in range(20):
        rows, dim, clusters = (int(rng.integers(2, 9)), int(rng.integers(2, 7)),
                               int(rng.integers(1, 6)))
        x = ad.constant(rng.normal(size=(rows, dim)))
        w, b = rng.normal(size=(clusters, dim)), rng.normal(size=(1, clusters))
        v = pool_netvlad(x, rows, {"w": ad.constant(w), "b": ad.constant(b),
                                   "c": ad.constant(np.zeros((clusters, dim)))})
        r = pool_netrvlad(x, rows, {"w": ad.constant(w), "b": ad.constant(b)})
        assert v.values.tobytes() == r.values.tobytes()
    report("NetVLAD with zero centers equals NetRVLAD bit-for-bit")


def test_learnability_synthetic():
    start = time.monotonic()
    dataset = synth_dataset(128, latent_dim=16, audio_dim=24, text_dim=16,
                            frames_range=(4, 10), words_range=(3, 8),
                            noise_sigma=0.1, seed=0, split_counts=(64, 32, 32))
    cfg = ModelConfig(pooling="netrvlad", audio_dim=24, text_dim=16, dim=64,
                      clusters_text=4, clusters_audio=4)
    ckpt, history = train(dataset, cfg, LossConfig(margin=0.2, batch_size=16),
                          SgdConfig(learning_rate=0.01, weight_decay=0.2),
                          epochs=200, seed=0, patience=None)
    elapsed = time.monotonic() - start
    assert history[-1]["epoch"] <= 200
    train_report = evaluate_split(ckpt.params, dataset, "train", cfg)
    test_report = evaluate_split(ckpt.params, dataset, "test", cfg)
    assert train_report["t2a"]["r1"] >= 90.0, train_report
    assert train_report["a2t"]["r1"] >= 90.0, train_report
    assert test_report["t2a"]["r1"] >= 50.0, test_report
    assert test_report["a2t"]["r1"] >= 50.0, test_report
    assert elapsed < 300.0
    report("learnability: NetRVLAD on 64/32 synthetic items",
           f"train R@1 {train_report['t2a']['r1']:.0f}/{train_report['a2t']['r1']:.0f}, "
           f"test R@1 {test_report['t2a']['r1']:.0f}/{test_report['a2t']['r1']:.0f}, "
           f"{elapsed:.0f}s")


@pytest.mark.parametrize("method", ("mean", "max", "lstm", "netvlad", "netrvlad"))
def test_padding_invariance(method):
    from atr.model import encode_sequences
    from atr.pooling import pool

    dataset = synth_dataset(20, 4, 6, 5, seed=11, split_counts=(0, 0, 20),
                            frames_range=(2, 9), words_range=(2, 7))
    cfg = ModelConfig(pooling=method, audio_dim=6, text_dim=5, dim=8,
                      clusters_text=2, clusters_audio=2)
    params = init_model_params(cfg, seed=1)
    wrapped = wrap_params(params, None)

    # pooled outputs: padded-batch tensor rows vs raw per-item sequences
    batch = next(make_batches(dataset, "test", 20, seed=0, caption_choice="first"))
    pool_p = {name[len("audio/pool/"):]: ad.constant(arr)
              for name, arr in params.items() if name.startswith("audio/pool/")}
    items_by_id = {it.id: it for it in dataset.items}
    for i, item_id in enumerate(batch.item_ids):
        raw = items_by_id[item_id].audio.data
        length = int(batch.audio_lengths[i])
        a = pool(method, ad.constant(batch.audios[i, :length]), length, pool_p)
        b = pool(method, ad.constant(raw), length, pool_p)
        assert a.values.tobytes() == b.values.tobytes()

    # end-to-end: one big padded batch vs per-item (unpadded) encoding
    cap_b = encode_sequences(batch.captions, batch.caption_lengths, cfg,
                             "text", wrapped).values
    aud_b = encode_sequences(batch.audios, batch.audio_lengths, cfg,
                             "audio", wrapped).values
    cap_i = np.concatenate(
        [encode_sequences(items_by_id[i].captions[0].data[None, :, :],
                          [items_by_id[i].captions[0].rows], cfg, "text", wrapped).values
         for i in batch.item_ids], axis=0)
    aud_i = np.concatenate(
        [encode_sequences(items_by_id[i].audio.data[None, :, :],
                          [items_by_id[i].audio.rows], cfg, "audio", wrapped).values
         for i in batch.item_ids], axis=0)
    # projected vectors may differ at float64 rounding (BLAS picks different
    # kernels for 1-row vs 20-row matmuls); metrics must agree exactly
    np.testing.assert_allclose(cap_b, cap_i, rtol=0, atol=1e-12)
    np.testing.assert_allclose(aud_b, aud_i, rtol=0, atol=1e-12)
    truth = np.arange(20)
    sim_b = similarity_matrix(cap_b, aud_b, truth)
    sim_i = similarity_matrix(cap_i, aud_i, truth)
    for direction in ("t2a", "a2t"):
        assert compute_metrics(rank_queries(sim_b, direction)) == \
               compute_metrics(rank_queries(sim_i, direction))
    report(f"padding invariance ({method}): padded-batch and per-item "
           "evaluation agree exactly")


def test_determinism_byte_identical_runs(tmp_path):
    data_dir = tmp_path / "data"
    assert cli_main(["synth", "--out", str(data_dir), "--n-train", "10",
                     "--n-val", "4", "--n-test", "4", "--latent-dim", "4",
                     "--audio-dim", "6", "--text-dim", "5", "--seed", "0"]) == 0
    outputs = []
    for name in ("run_a", "run_b"):
        out = tmp_path / name
        assert cli_main(["train", "--dataset", str(data_dir / "manifest.json"),
                         "--out", str(out), "--pooling", "netrvlad",
                         "--clusters-text", "2", "--clusters-audio", "2",
                         "--dim", "8", "--epochs", "4", "--batch-size", "4",
                         "--seed", "123"]) == 0
        outputs.append(out)
    ckpt_a = (outputs[0] / "checkpoint.ckpt").read_bytes()
    ckpt_b = (outputs[1] / "checkpoint.ckpt").read_bytes()
    log_a = (outputs[0] / "train_log.jsonl").read_bytes()
    log_b = (outputs[1] / "train_log.jsonl").read_bytes()
    assert ckpt_a == ckpt_b
    assert log_a == log_b
    report("determinism: identical seeded train runs produce byte-identical "
           "checkpoints and logs")
