"""Caption embedding via a word-vector table.

Vocabulary file format: UTF-8 text, one entry per line, the word followed
by its 300 vector components, whitespace-separated.  Tokenization is
lowercase, punctuation stripped, whitespace split; out-of-vocabulary
tokens are dropped.
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ExportError

TEXT_DIM = 300
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def tokenize(sentence: str) -> list[str]:
    return [t for t in sentence.lower().translate(_PUNCT_TABLE).split() if t]


@dataclass
class Vocabulary:
    vectors: dict[str, np.ndarray]
    dim: int = TEXT_DIM

    @classmethod
    def load(cls, path) -> "Vocabulary":
        path = Path(path)
        if not path.exists():
            raise ExportError(f"vocabulary file not found: {path}")
        vectors: dict[str, np.ndarray] = {}
        dim = None
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split()
            word, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
            if len(values) != dim:
                raise ExportError(f"{path}:{lineno}: expected {dim} components, "
                                  f"got {len(values)}")
            vectors[word] = np.array(values, dtype=np.float64)
        if not vectors:
            raise ExportError(f"{path}: empty vocabulary")
        return cls(vectors, dim)

    def __contains__(self, word: str) -> bool:
        return word in self.vectors


def embed_sentence(sentence: str, vocab: Vocabulary) -> np.ndarray | None:
    """N x dim matrix of in-vocabulary word vectors, or None if every
    token is out of vocabulary."""
    rows = [vocab.vectors[t] for t in tokenize(sentence) if t in vocab]
    if not rows:
        return None
    return np.stack(rows)
