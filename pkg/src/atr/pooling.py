"""Sequence aggregation: mean, max, LSTM+mean, NetVLAD and NetRVLAD.

Each pooler collapses a padded (rows x dim) sequence with a true length
into a single (1 x out_dim) vector, built entirely from autodiff ops so
gradients flow into the trainable pooling parameters.

NetVLAD soft-assigns every descriptor to K clusters and sums residuals
against cluster centers; NetRVLAD drops the centers and sums the
softly-assigned descriptors directly.  Both flatten the (K x dim)
descriptor matrix row-major.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import DiffArray

POOLING_METHODS = ("mean", "max", "lstm", "netvlad", "netrvlad")


def xavier_uniform(rng, fan_in, fan_out, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def pooled_dim(method: str, input_dim: int, clusters: int) -> int:
    if method in ("mean", "max", "lstm"):
        return input_dim
    if method in ("netvlad", "netrvlad"):
        return clusters * input_dim
    raise ValueError(f"unknown pooling method {method!r}")


def init_pooling_params(method: str, input_dim: int, clusters: int, rng) -> dict:
    """Trainable parameter arrays for one branch's pooler (empty for mean/max)."""
    if method in ("mean", "max"):
        return {}
    if method == "lstm":
        return init_lstm_params(input_dim, input_dim, rng)
    if method in ("netvlad", "netrvlad"):
        params = {
            # assignment weights, Xavier over the (dim, K) fan
            "w": xavier_uniform(rng, input_dim, clusters, (clusters, input_dim)),
            "b": np.zeros((1, clusters)),
        }
        if method == "netvlad":
            params["c"] = rng.normal(scale=1.0 / np.sqrt(input_dim),
                                     size=(clusters, input_dim))
        return params
    raise ValueError(f"unknown pooling method {method!r}")


def init_lstm_params(input_dim: int, hidden_dim: int, rng) -> dict:
    params = {}
    for gate in ("i", "f", "o", "g"):
        params[f"w_{gate}"] = xavier_uniform(rng, input_dim + hidden_dim, hidden_dim,
                                             (input_dim + hidden_dim, hidden_dim))
        params[f"b_{gate}"] = np.zeros((1, hidden_dim))
    params["b_f"] = np.ones((1, hidden_dim))  # standard forget-gate bias
    return params


def _mask(x: DiffArray, length: int) -> np.ndarray:
    rows = x.values.shape[0]
    if not 1 <= length <= rows:
        raise ValueError(f"length {length} out of range for {rows} rows")
    return (np.arange(rows) < length).astype(np.float64)


def pool_mean(x: DiffArray, length: int) -> DiffArray:
    return ad.masked_mean(x, _mask(x, length))


def pool_max(x: DiffArray, length: int) -> DiffArray:
    return ad.masked_max(x, _mask(x, length))


def pool_lstm_mean(x: DiffArray, length: int, params: dict[str, DiffArray]) -> DiffArray:
    """Single-direction LSTM from zero state, then mean over hidden states."""
    rows, dim = x.values.shape
    hidden = params["w_i"].values.shape[1]
    if params["w_i"].values.shape[0] != dim + hidden:
        raise ad.ShapeMismatch(
            f"lstm expects input dim {params['w_i'].values.shape[0] - hidden}, got {dim}")
    _mask(x, length)
    h = ad.constant(np.zeros((1, hidden)))
    c = ad.constant(np.zeros((1, hidden)))
    states = []
    for t in range(length):
        e_t = ad.constant(np.eye(rows)[t:t + 1])
        z = ad.concat([ad.matmul(e_t, x), h], axis=1)
        i = ad.sigmoid(ad.add(ad.matmul(z, params["w_i"]), params["b_i"]))
        f = ad.sigmoid(ad.add(ad.matmul(z, params["w_f"]), params["b_f"]))
        o = ad.sigmoid(ad.add(ad.matmul(z, params["w_o"]), params["b_o"]))
        g = ad.tanh(ad.add(ad.matmul(z, params["w_g"]), params["b_g"]))
        c = ad.add(ad.mul(f, c), ad.mul(i, g))
        h = ad.mul(o, ad.tanh(c))
        states.append(h)
    stacked = states[0] if length == 1 else ad.concat(states, axis=0)
    return ad.masked_mean(stacked, np.ones(length))


def soft_assign(x: DiffArray, length: int, params: dict[str, DiffArray]) -> DiffArray:
    """Row-softmax cluster assignments, zeroed on padded rows."""
    mask = _mask(x, length)
    clusters = params["w"].values.shape[0]
    logits = ad.add(ad.matmul(x, ad.transpose(params["w"])), params["b"])
    a = ad.row_softmax(logits)
    return ad.mul(a, ad.constant(np.outer(mask, np.ones(clusters))))


def pool_netvlad(x: DiffArray, length: int, params: dict[str, DiffArray]) -> DiffArray:
    rows, dim = x.values.shape
    clusters = params["w"].values.shape[0]
    a = soft_assign(x, length, params)
    at = ad.transpose(a)
    summed = ad.matmul(at, x)                                   # K x dim
    a_tot = ad.matmul(at, ad.constant(np.ones((rows, 1))))      # K x 1
    centers_term = ad.mul(ad.matmul(a_tot, ad.constant(np.ones((1, dim)))), params["c"])
    return ad.reshape(ad.sub(summed, centers_term), (1, clusters * dim))


def pool_netrvlad(x: DiffArray, length: int, params: dict[str, DiffArray]) -> DiffArray:
    rows, dim = x.values.shape
    clusters = params["w"].values.shape[0]
    a = soft_assign(x, length, params)
    return ad.reshape(ad.matmul(ad.transpose(a), x), (1, clusters * dim))


def pool(method: str, x: DiffArray, length: int, params: dict[str, DiffArray]) -> DiffArray:
    if method == "mean":
        return pool_mean(x, length)
    if method == "max":
        return pool_max(x, length)
    if method == "lstm":
        return pool_lstm_mean(x, length, params)
    if method == "netvlad":
        return pool_netvlad(x, length, params)
    if method == "netrvlad":
        return pool_netrvlad(x, length, params)
    raise ValueError(f"unknown pooling method {method!r}")
