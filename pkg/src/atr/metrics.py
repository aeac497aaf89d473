"""Ranking metrics (R@K, median rank, mean rank) and retrieval reports.

Conventions:
  - directions are "t2a" (each caption queries the audios) and "a2t"
    (each audio queries the captions; its rank is the best rank among
    its ground-truth captions);
  - ties rank pessimistically: the ground truth is placed after every
    equal-scored competitor, so recall is never inflated;
  - even-count median takes the lower middle, keeping MedR integer.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .data import EmbeddingSequence, RetrievalDataset
from .model import (ModelConfig, SimilarityMatrix, encode_sequences,
                    similarity_matrix, wrap_params)

DIRECTIONS = ("t2a", "a2t")


@dataclass
class RankVector:
    ranks: np.ndarray            # 1-based rank of the ground truth per query
    direction: str
    n_candidates: int

    def __post_init__(self):
        self.ranks = np.asarray(self.ranks, dtype=np.int64)
        if self.ranks.size and not (1 <= self.ranks.min()
                                    and self.ranks.max() <= self.n_candidates):
            raise ValueError("ranks outside [1, n_candidates]")


@dataclass
class MetricsReport:
    direction: str
    r1: float
    r5: float
    r10: float
    medr: float
    mnr: float
    n_queries: int
    n_candidates: int

    def to_dict(self) -> dict:
        return asdict(self)


def _pessimistic_rank(scores: np.ndarray, true_idx: int) -> int:
    # ground truth goes after all equal-scored competitors
    return int(np.count_nonzero(scores >= scores[true_idx]))


def rank_queries(sim: SimilarityMatrix, direction: str) -> RankVector:
    if direction not in DIRECTIONS:
        raise ValueError(f"unknown direction {direction!r}")
    n_cap, n_aud = sim.scores.shape
    if n_cap == 0 or n_aud == 0:
        raise ValueError("empty similarity matrix")
    if direction == "t2a":
        ranks = [_pessimistic_rank(sim.scores[i], int(sim.truth[i]))
                 for i in range(n_cap)]
        return RankVector(np.array(ranks), direction, n_aud)
    ranks = []
    for j, rows in enumerate(sim.grouping):
        if not rows:
            continue
        col = sim.scores[:, j]
        ranks.append(min(_pessimistic_rank(col, r) for r in rows))
    if not ranks:
        raise ValueError("a2t direction: no audio has ground-truth captions")
    return RankVector(np.array(ranks), direction, n_cap)


def compute_metrics(ranks: RankVector) -> MetricsReport:
    r = ranks.ranks
    if r.size == 0:
        raise ValueError("empty rank vector")
    ordered = np.sort(r)
    medr = float(ordered[(r.size - 1) // 2])  # lower middle for even counts
    recall = {k: 100.0 * np.count_nonzero(r <= k) / r.size for k in (1, 5, 10)}
    return MetricsReport(ranks.direction, recall[1], recall[5], recall[10],
                         medr, float(r.mean()), int(r.size), ranks.n_candidates)


# ---------------------------------------------------------------------------
# full-split evaluation

def encode_split(params: dict[str, np.ndarray], dataset: RetrievalDataset,
                 split: str, cfg: ModelConfig):
    """Embed every caption and audio of a split; multi-caption items give one
    query row per caption."""
    items = dataset.split_items(split)
    if not items:
        raise ValueError(f"split {split!r} is empty")
    wrapped = wrap_params(params, None)
    cap_seqs, truth = [], []
    for j, it in enumerate(items):
        for cap in it.captions:
            cap_seqs.append(cap.data)
            truth.append(j)
    cap_vecs = np.concatenate(
        [encode_sequences(s[None, :, :], [s.shape[0]], cfg, "text", wrapped).values
         for s in cap_seqs], axis=0)
    aud_vecs = np.concatenate(
        [encode_sequences(it.audio.data[None, :, :], [it.audio.rows], cfg,
                          "audio", wrapped).values
         for it in items], axis=0)
    return cap_vecs, aud_vecs, np.array(truth), [it.id for it in items]


def evaluate_split(params: dict[str, np.ndarray], dataset: RetrievalDataset,
                   split: str, cfg: ModelConfig) -> dict:
    cap_vecs, aud_vecs, truth, _ = encode_split(params, dataset, split, cfg)
    sim = similarity_matrix(cap_vecs, aud_vecs, truth)
    report = {"split": split}
    for direction in DIRECTIONS:
        report[direction] = compute_metrics(rank_queries(sim, direction)).to_dict()
    return report


def render_table(report: dict, label: str = "model") -> str:
    """Aligned plain-text table, one row per model, both directions."""
    cols = ["R@1", "R@5", "R@10", "Medr", "MnR"]
    header = (f"{'Model':<24}" + "".join(f"{c:>8}" for c in cols)
              + " | " + "".join(f"{c:>8}" for c in cols))
    sub = f"{'':<24}" + f"{'Text => Audio':>40}" + " | " + f"{'Audio => Text':>40}"
    def cells(d):
        return (f"{d['r1']:>8.1f}{d['r5']:>8.1f}{d['r10']:>8.1f}"
                f"{d['medr']:>8.1f}{d['mnr']:>8.1f}")
    row = f"{label:<24}" + cells(report["t2a"]) + " | " + cells(report["a2t"])
    return "\n".join([sub, header, row])


# ---------------------------------------------------------------------------
# single-query retrieval

def retrieve(params: dict[str, np.ndarray], cfg: ModelConfig,
             query: EmbeddingSequence, candidates, top_k: int,
             direction: str = "t2a") -> list[tuple[str, float]]:
    """Top-k candidates by descending cosine score; ties break by id.

    candidates is a list of (id, EmbeddingSequence).  direction "t2a"
    takes a text query against audio candidates, "a2t" the reverse.
    """
    if direction not in DIRECTIONS:
        raise ValueError(f"unknown direction {direction!r}")
    if not candidates:
        raise ValueError("no candidates")
    wrapped = wrap_params(params, None)
    q_branch, c_branch = ("text", "audio") if direction == "t2a" else ("audio", "text")
    q_vec = encode_sequences(query.data[None, :, :], [query.rows], cfg,
                             q_branch, wrapped).values
    cand_vecs = np.concatenate(
        [encode_sequences(seq.data[None, :, :], [seq.rows], cfg, c_branch, wrapped).values
         for _, seq in candidates], axis=0)
    qn = ad.l2_normalize(ad.constant(q_vec)).values
    cn = ad.l2_normalize(ad.constant(cand_vecs)).values
    scores = (cn @ qn[0]).tolist()
    if top_k > len(candidates):
        warnings.warn(f"top_k {top_k} exceeds candidate count {len(candidates)}; "
                      "returning all")
        top_k = len(candidates)
    ranked = sorted(zip((cid for cid, _ in candidates), scores),
                    key=lambda t: (-t[1], t[0]))
    return ranked[:top_k]
