"""Hashed n-gram featurization (FNV-1a 64, log-scaled counts)."""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from frag.rng import fnv1a64

_TOKEN_RE = re.compile(r"[^\W_]+")
_HASH_CACHE: dict[str, int] = {}

UNIGRAMS = 1
BIGRAMS = 2
CHAR_TRIGRAMS = 4


def tokenize(text: str) -> list[str]:
    """Lowercase and split on anything that is not a letter or digit."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class FeaturizerConfig:
    hash_dim: int = 2**18
    flags: int = UNIGRAMS | BIGRAMS | CHAR_TRIGRAMS

    def __post_init__(self):
        if self.hash_dim < 1 or self.hash_dim >= 2**32:
            raise ValueError("hash_dim must fit in an unsigned 32-bit integer")
        if not 0 < self.flags < 8:
            raise ValueError("at least one feature kind must be enabled")


def feature_strings(text: str, flags: int = UNIGRAMS | BIGRAMS | CHAR_TRIGRAMS) -> list[str]:
    tokens = tokenize(text)
    feats = []
    if flags & UNIGRAMS:
        feats.extend("w:" + t for t in tokens)
    if flags & BIGRAMS:
        feats.extend(f"b:{a} {b}" for a, b in zip(tokens, tokens[1:]))
    if flags & CHAR_TRIGRAMS:
        for t in tokens:
            padded = f"#{t}#"
            feats.extend("c:" + padded[i : i + 3] for i in range(len(padded) - 2))
    return feats


def _hash(feature: str) -> int:
    h = _HASH_CACHE.get(feature)
    if h is None:
        h = _HASH_CACHE[feature] = fnv1a64(feature)
    return h


def featurize(config: FeaturizerConfig, text: str) -> dict[int, float]:
    """Sparse bucket -> log(1 + count) map."""
    counts = Counter(_hash(f) % config.hash_dim for f in feature_strings(text, config.flags))
    return {b: math.log1p(c) for b, c in sorted(counts.items())}


def featurize_many(config: FeaturizerConfig, texts: Sequence[str] | Iterable[str],
                   dtype=np.float32) -> sp.csr_matrix:
    """Stack featurized texts into a CSR matrix of shape (len(texts), hash_dim)."""
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for text in texts:
        row = featurize(config, text)
        indices.extend(row.keys())
        data.extend(row.values())
        indptr.append(len(indices))
    return sp.csr_matrix(
        (np.asarray(data, dtype=dtype), np.asarray(indices, dtype=np.int64), np.asarray(indptr, dtype=np.int64)),
        shape=(len(indptr) - 1, config.hash_dim),
    )
