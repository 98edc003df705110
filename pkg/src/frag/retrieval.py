"""Exact top-k retrieval: Okapi BM25 and dense (cosine) indexes."""

from __future__ import annotations

import json
import math
import os
import struct
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np
import scipy.sparse as sp

from frag.corpus import Element, render_element
from frag.encoder import EncoderModel, embed_many
from frag.features import tokenize
from frag.templates import strip_header


class EmptyIndexError(ValueError):
    pass


class UnknownDocError(KeyError):
    pass


class FingerprintError(ValueError):
    pass


@dataclass(frozen=True)
class Hit:
    element: Element
    score: float

    def to_json(self) -> dict:
        e = self.element
        return {"kind": e.kind, "name": e.name, "parent": e.parent or None, "score": self.score}


def kind_pools(elements: Sequence[Element]) -> dict[str, np.ndarray]:
    pools: dict[str, list[int]] = {}
    for i, e in enumerate(elements):
        pools.setdefault(e.kind, []).append(i)
    return {kind: np.asarray(ix, dtype=np.int64) for kind, ix in pools.items()}


def rank(elements: Sequence[Element], scores: np.ndarray, k: int, kind: str | None = None,
         pools: dict[str, np.ndarray] | None = None) -> list[Hit]:
    """Exact top-k by (score desc, name asc, kind asc), optionally restricted to one kind."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if kind is None:
        idx = np.arange(len(elements))
    else:
        pools = pools if pools is not None else kind_pools(elements)
        idx = pools.get(kind, np.zeros(0, dtype=np.int64))
    if len(idx) == 0:
        return []
    s = scores[idx]
    # partial selection first, then an exact ordering that includes every tie at the cutoff
    if len(idx) > k:
        cut = np.partition(-s, k - 1)[k - 1]
        keep = -s <= cut
        idx, s = idx[keep], s[keep]
    order = sorted(range(len(idx)),
                   key=lambda j: (-s[j], elements[idx[j]].name, elements[idx[j]].kind, elements[idx[j]].parent or ""))
    return [Hit(elements[idx[j]], float(s[j])) for j in order[:k]]


class Retriever(Protocol):
    name: str

    def topk(self, query: str, k: int, kind: str | None = None) -> list[Hit]: ...


# -- BM25 ----------------------------------------------------------------------


class Bm25Index:
    """Okapi BM25 over element renderings with IDF = ln(1 + (N - df + 0.5) / (df + 0.5))."""

    name = "bm25"

    def __init__(self, elements: Sequence[Element], k1: float = 1.2, b: float = 0.75,
                 texts: Sequence[str] | None = None, strip_query_header: bool = True):
        if not elements:
            raise EmptyIndexError("cannot index an empty element list")
        self.elements = list(elements)
        self.k1, self.b = k1, b
        self.strip_query_header = strip_query_header
        texts = texts if texts is not None else [render_element(e) for e in self.elements]
        self.vocab: dict[str, int] = {}
        rows, cols, vals = [], [], []
        lengths = []
        for i, text in enumerate(texts):
            tokens = tokenize(text)
            lengths.append(len(tokens))
            for term, tf in Counter(tokens).items():
                rows.append(i)
                cols.append(self.vocab.setdefault(term, len(self.vocab)))
                vals.append(tf)
        n = len(self.elements)
        self.tf = sp.csr_matrix((np.asarray(vals, dtype=np.float64), (rows, cols)), shape=(n, len(self.vocab)))
        self.doc_len = np.asarray(lengths, dtype=np.float64)
        self.avgdl = float(self.doc_len.mean())
        self.df = np.bincount(np.asarray(cols, dtype=np.int64), minlength=len(self.vocab)).astype(np.float64)
        self.idf = np.log1p((n - self.df + 0.5) / (self.df + 0.5))
        # per (doc, term) contribution with tf saturation and length normalization baked in
        norm = k1 * (1 - b + b * self.doc_len / self.avgdl) if self.avgdl > 0 else np.full(n, k1)
        coo = self.tf.tocoo()
        w = coo.data * (k1 + 1) / (coo.data + norm[coo.row]) * self.idf[coo.col]
        self.weights = sp.csc_matrix((w, (coo.row, coo.col)), shape=self.tf.shape)
        self.pools = kind_pools(self.elements)

    @property
    def n_docs(self) -> int:
        return len(self.elements)

    def _query_vector(self, query: str) -> np.ndarray:
        if self.strip_query_header:
            query = strip_header(query)
        q = np.zeros(len(self.vocab))
        for term, count in Counter(tokenize(query)).items():
            j = self.vocab.get(term)
            if j is not None:
                q[j] = count
        return q

    def scores(self, query: str) -> np.ndarray:
        return np.asarray(self.weights @ self._query_vector(query)).ravel()

    def score(self, query: str, doc_id: int) -> float:
        if not 0 <= doc_id < self.n_docs:
            raise UnknownDocError(doc_id)
        return float(self.scores(query)[doc_id])

    def topk(self, query: str, k: int, kind: str | None = None) -> list[Hit]:
        if not self.elements:
            raise EmptyIndexError("BM25 index is empty")
        return rank(self.elements, self.scores(query), k, kind, self.pools)


# -- dense ---------------------------------------------------------------------

INDEX_MAGIC = b"FRAGIX"
INDEX_VERSION = 1
_INDEX_HEADER = struct.Struct("<HII16s")

Embedder = Callable[[Sequence[str]], np.ndarray]


class DenseIndex:
    """Unit vectors, one per element rendering, tied to the fingerprint of the encoder that made them."""

    name = "dense"

    def __init__(self, elements: Sequence[Element], vectors: np.ndarray, fingerprint: str):
        vectors = np.asarray(vectors, dtype=np.float32)
        if len(elements) != vectors.shape[0]:
            raise ValueError("metadata length must equal row count")
        self.elements = list(elements)
        self.vectors = vectors
        self.fingerprint = fingerprint
        self.pools = kind_pools(self.elements)
        self._v64 = vectors.astype(np.float64)

    @property
    def embed_dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.elements)

    def check(self, fingerprint: str) -> None:
        if fingerprint != self.fingerprint:
            raise FingerprintError(f"index built by encoder {self.fingerprint}, queried with {fingerprint}")

    def scores_for(self, vector: np.ndarray) -> np.ndarray:
        return self._v64 @ np.asarray(vector, dtype=np.float64)

    def topk_vector(self, vector: np.ndarray, k: int, kind: str | None = None) -> list[Hit]:
        if not self.elements:
            raise EmptyIndexError("dense index is empty")
        return rank(self.elements, self.scores_for(vector), k, kind, self.pools)

    def save(self, path: str | Path) -> None:
        """Binary matrix at ``path`` plus ``path.jsonl`` metadata."""
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "wb") as fh:
            fh.write(INDEX_MAGIC)
            fh.write(_INDEX_HEADER.pack(INDEX_VERSION, len(self.elements), self.embed_dim,
                                        self.fingerprint.encode("ascii").ljust(16, b"\0")))
            fh.write(np.ascontiguousarray(self.vectors, dtype="<f4").tobytes())
        meta = metadata_path(path)
        meta_tmp = meta.with_name(meta.name + ".tmp")
        with open(meta_tmp, "w", encoding="utf-8") as fh:
            for e in self.elements:
                fh.write(json.dumps(e.to_json(), sort_keys=True, ensure_ascii=False) + "\n")
        os.replace(meta_tmp, meta)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str | Path) -> "DenseIndex":
        from frag.encoder import FormatError

        path = Path(path)
        raw = path.read_bytes()
        if raw[: len(INDEX_MAGIC)] != INDEX_MAGIC:
            raise FormatError("not a dense index file (bad magic)")
        version, n, dim, fp = _INDEX_HEADER.unpack_from(raw, len(INDEX_MAGIC))
        if version != INDEX_VERSION:
            raise FormatError(f"unsupported index version {version}")
        offset = len(INDEX_MAGIC) + _INDEX_HEADER.size
        if len(raw) != offset + 4 * n * dim:
            raise FormatError("index file size does not match its header")
        vectors = np.frombuffer(raw, dtype="<f4", offset=offset).reshape(n, dim).astype(np.float32)
        with open(metadata_path(path), encoding="utf-8") as fh:
            elements = [Element.from_json(json.loads(line)) for line in fh if line.strip()]
        if len(elements) != n:
            raise FormatError("index metadata does not match the matrix")
        return cls(elements, vectors, fp.rstrip(b"\0").decode("ascii"))


def metadata_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".jsonl")


def dense_build(model: EncoderModel, elements: Sequence[Element], texts: Sequence[str] | None = None) -> DenseIndex:
    texts = texts if texts is not None else [render_element(e) for e in elements]
    return DenseIndex(elements, embed_many(model, texts), model.fingerprint())


def dense_build_remote(embedder: Embedder, fingerprint: str, elements: Sequence[Element]) -> DenseIndex:
    vectors = np.asarray(embedder([render_element(e) for e in elements]), dtype=np.float32)
    return DenseIndex(elements, vectors, fingerprint)


class DenseRetriever:
    """A dense index paired with the encoder used to embed queries."""

    name = "dense"

    def __init__(self, model: EncoderModel, index: DenseIndex):
        index.check(model.fingerprint())
        self.model = model
        self.index = index

    @property
    def fingerprint(self) -> str:
        return self.index.fingerprint

    def embed_queries(self, queries: Sequence[str]) -> np.ndarray:
        return embed_many(self.model, list(queries))

    def topk(self, query: str, k: int, kind: str | None = None) -> list[Hit]:
        self.index.check(self.model.fingerprint())
        return self.index.topk_vector(self.embed_queries([query])[0], k, kind)

    def topk_many(self, queries: Sequence[str], k: int, kind: str | None = None) -> list[list[Hit]]:
        self.index.check(self.model.fingerprint())
        vectors = self.embed_queries(queries)
        return [self.index.topk_vector(v, k, kind) for v in vectors]


def unit_norm_ok(vectors: np.ndarray, tol: float = 1e-6) -> bool:
    norms = np.linalg.norm(np.asarray(vectors, dtype=np.float64), axis=1)
    return bool(np.all(np.abs(norms - 1.0) <= tol))


def idf(n_docs: int, df: int) -> float:
    return math.log1p((n_docs - df + 0.5) / (df + 0.5))
