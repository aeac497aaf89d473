"""Central finite-difference gradient checks for ops and full model heads."""

from __future__ import annotations

import zlib

import numpy as np

from . import autodiff as ad
from .autodiff import DiffArray, Tape
from .data import Batch
from .model import ModelConfig, init_model_params
from .train import LossConfig, ranking_loss

DEFAULT_H = 1e-5


def analytic_grads(build, arrays: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    tape = Tape()
    wrapped = {name: DiffArray(a, tape) for name, a in arrays.items()}
    out = build(wrapped)
    ad.backward(out)
    return {name: wrapped[name].grad.copy() for name in arrays}


def finite_diff_grads(build, arrays: dict[str, np.ndarray],
                      h: float = DEFAULT_H) -> dict[str, np.ndarray]:
    def value(mod):
        wrapped = {name: ad.constant(a) for name, a in mod.items()}
        return float(build(wrapped).values.reshape(()))

    grads = {}
    for name, a in arrays.items():
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            mod = dict(arrays)
            pert = a.copy().reshape(-1)
            pert[k] = orig + h
            mod[name] = pert.reshape(a.shape)
            up = value(mod)
            pert[k] = orig - h
            mod[name] = pert.reshape(a.shape)
            down = value(mod)
            g.reshape(-1)[k] = (up - down) / (2 * h)
        grads[name] = g
    return grads


def max_rel_error(build, arrays: dict[str, np.ndarray], h: float = DEFAULT_H) -> float:
    """Worst relative disagreement between analytic and numeric gradients."""
    analytic = analytic_grads(build, arrays)
    numeric = finite_diff_grads(build, arrays, h)
    worst = 0.0
    for name in arrays:
        a, n = analytic[name], numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-2)
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst


def _scalarize(out: DiffArray, rng) -> DiffArray:
    # fixed random projection so every output entry influences the scalar
    r = ad.constant(rng.uniform(0.5, 1.5, size=out.values.shape))
    return ad.total_sum(ad.mul(out, r))


def _op_case(kind: str, rng):
    """(build, arrays) for one op on random small inputs away from kinks."""
    a = rng.uniform(-1, 1, size=(3, 4))
    b = rng.uniform(-1, 1, size=(3, 4))
    mask = np.array([1.0, 1.0, 0.0])
    if kind == "matmul":
        arrays = {"a": rng.uniform(-1, 1, size=(3, 4)), "b": rng.uniform(-1, 1, size=(4, 2))}
        build = lambda w: ad.matmul(w["a"], w["b"])
    elif kind in ("add", "sub", "mul"):
        arrays = {"a": a, "b": b}
        build = lambda w, op=getattr(ad, kind): op(w["a"], w["b"])
    elif kind == "div":
        arrays = {"a": a, "b": np.sign(b) * (np.abs(b) + 0.2)}
        build = lambda w: ad.div(w["a"], w["b"])
    elif kind == "log":
        arrays = {"a": np.abs(a) + 0.2}
        build = lambda w: ad.log(w["a"])
    elif kind == "relu-hinge":
        # bounded away from the kink at zero
        arrays = {"a": np.sign(a) * (np.abs(a) + 0.1)}
        build = lambda w: ad.relu_hinge(w["a"])
    elif kind in ("exp", "tanh", "sigmoid", "row-softmax", "l2-normalize", "transpose"):
        arrays = {"a": a}
        ops = {"exp": ad.exp, "tanh": ad.tanh, "sigmoid": ad.sigmoid,
               "row-softmax": ad.row_softmax, "l2-normalize": ad.l2_normalize,
               "transpose": ad.transpose}
        build = lambda w, op=ops[kind]: op(w["a"])
    elif kind in ("masked-sum", "masked-mean", "masked-max"):
        arrays = {"a": a}
        ops = {"masked-sum": ad.masked_sum, "masked-mean": ad.masked_mean,
               "masked-max": ad.masked_max}
        build = lambda w, op=ops[kind]: op(w["a"], mask)
    elif kind == "reshape":
        arrays = {"a": a}
        build = lambda w: ad.reshape(w["a"], (2, 6))
    elif kind == "concat":
        arrays = {"a": a, "b": b}
        build = lambda w: ad.concat([w["a"], w["b"]], axis=0)
    elif kind == "scalar-scale":
        arrays = {"a": a}
        build = lambda w: ad.scalar_scale(w["a"], 1.7)
    else:
        raise ValueError(f"no gradcheck case for op {kind!r}")
    return build, arrays


def check_op(kind: str, seed: int = 0, h: float = DEFAULT_H) -> float:
    rng = np.random.default_rng([seed, zlib.crc32(kind.encode())])
    build, arrays = _op_case(kind, rng)
    return max_rel_error(lambda w: _scalarize(build(w), np.random.default_rng(seed)),
                         arrays, h)


def check_all_ops(seed: int = 0, h: float = DEFAULT_H) -> dict[str, float]:
    return {kind: check_op(kind, seed, h) for kind in ad.OP_KINDS}


def _toy_batch(cfg: ModelConfig, rng) -> Batch:
    b = 3
    cap_len = np.array([2, 4, 3])
    aud_len = np.array([3, 2, 4])
    caps = np.zeros((b, 4, cfg.text_dim))
    auds = np.zeros((b, 4, cfg.audio_dim))
    for i in range(b):
        caps[i, :cap_len[i]] = rng.uniform(-1, 1, size=(cap_len[i], cfg.text_dim))
        auds[i, :aud_len[i]] = rng.uniform(-1, 1, size=(aud_len[i], cfg.audio_dim))
    return Batch(caps, cap_len, auds, aud_len, [f"i{k}" for k in range(b)])


def check_head(method: str, seed: int = 0, h: float = DEFAULT_H) -> float:
    """Gradcheck one full head: pooling -> FC -> gate -> normalize -> loss."""
    cfg = ModelConfig(pooling=method, audio_dim=5, text_dim=4, dim=6,
                      clusters_text=2, clusters_audio=2)
    rng = np.random.default_rng([seed, 17])
    batch = _toy_batch(cfg, rng)
    params = init_model_params(cfg, seed)

    from .model import encode_sequences, similarity_scores

    def build(wrapped):
        cap = encode_sequences(batch.captions, batch.caption_lengths, cfg, "text", wrapped)
        aud = encode_sequences(batch.audios, batch.audio_lengths, cfg, "audio", wrapped)
        return ranking_loss(similarity_scores(cap, aud), LossConfig().margin)
    return max_rel_error(build, params, h)


def check_heads(seed: int = 0, h: float = DEFAULT_H) -> dict[str, float]:
    from .pooling import POOLING_METHODS
    return {m: check_head(m, seed, h) for m in POOLING_METHODS}
