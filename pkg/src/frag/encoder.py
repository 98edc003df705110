"""Hashed-feature linear encoder producing unit-norm embeddings."""

from __future__ import annotations

import hashlib
import io
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from frag.features import FeaturizerConfig, featurize, featurize_many
from frag.rng import stream

MAGIC = b"FRAG1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<HIII")
HEADER_SIZE = len(MAGIC) + _HEADER.size


class FormatError(ValueError):
    pass


@dataclass
class EncoderModel:
    """Projection of hashed features to ``embed_dim`` dimensions.

    ``weights`` is stored as (hash_dim, embed_dim) so that the rows touched by
    a sparse input are contiguous. On disk the matrix is written transposed,
    i.e. embed_dim x hash_dim row-major.
    """

    featurizer: FeaturizerConfig
    weights: np.ndarray
    _fingerprint: str | None = field(default=None, repr=False, compare=False)

    @property
    def embed_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def hash_dim(self) -> int:
        return self.weights.shape[0]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, EncoderModel)
            and self.featurizer == other.featurizer
            and self.weights.shape == other.weights.shape
            and self.weights.tobytes() == other.weights.tobytes()
        )

    def fingerprint(self) -> str:
        if self._fingerprint is None:
            digest = hashlib.sha256(_header_bytes(self))
            digest.update(np.ascontiguousarray(self.weights.T, dtype="<f4").tobytes())
            self._fingerprint = digest.hexdigest()[:16]
        return self._fingerprint

    def invalidate(self) -> None:
        self._fingerprint = None


def init_model(featurizer: FeaturizerConfig | None = None, embed_dim: int = 256, seed: int = 0) -> EncoderModel:
    featurizer = featurizer or FeaturizerConfig()
    rng = stream(seed, "encoder-init")
    weights = rng.standard_normal((featurizer.hash_dim, embed_dim), dtype=np.float32)
    weights *= np.float32(1.0 / math.sqrt(embed_dim))
    return EncoderModel(featurizer, weights)


def _normalize_rows(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    norms = np.linalg.norm(z, axis=1)
    out = np.zeros_like(z)
    nonzero = norms > 0
    out[nonzero] = z[nonzero] / norms[nonzero, None]
    # featureless text maps to the first basis vector
    out[~nonzero, 0] = 1.0
    return out.astype(np.float32)


def embed(model: EncoderModel, text: str) -> np.ndarray:
    feats = featurize(model.featurizer, text)
    z = np.zeros((1, model.embed_dim), dtype=np.float64)
    for bucket, weight in feats.items():
        z[0] += weight * model.weights[bucket]
    return _normalize_rows(z)[0]


def embed_many(model: EncoderModel, texts: Sequence[str], batch_size: int = 4096) -> np.ndarray:
    out = np.empty((len(texts), model.embed_dim), dtype=np.float32)
    for start in range(0, len(texts), batch_size):
        x = featurize_many(model.featurizer, texts[start : start + batch_size], dtype=np.float64)
        out[start : start + x.shape[0]] = _normalize_rows(x @ model.weights.astype(np.float64, copy=False))
    return out


def pair_distance(u: np.ndarray, v: np.ndarray) -> float:
    """Euclidean distance between unit vectors, via the dot product."""
    return math.sqrt(max(0.0, 2.0 - 2.0 * float(np.dot(u, v))))


def contrastive_loss(d: float, y: int, margin: float = 0.5) -> float:
    """Hadsell et al. loss: pull positives together, push negatives past the margin."""
    return y * d * d + (1 - y) * max(0.0, margin - d) ** 2


def batch_loss_and_grad(weights: np.ndarray, xq: sp.csr_matrix, xd: sp.csr_matrix, y: np.ndarray,
                        margin: float) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean contrastive loss over a batch and its gradient w.r.t. ``weights``.

    Only rows of ``weights`` hit by some feature receive gradient, so the
    gradient is returned as ``(rows, grad_rows)``. Arithmetic runs in the
    dtype of ``weights``.
    """
    dtype = weights.dtype
    rows = np.unique(np.concatenate([xq.indices, xd.indices]))
    wc = weights[rows]
    n = xq.shape[0]
    xq_c = sp.csr_matrix((xq.data.astype(dtype, copy=False), np.searchsorted(rows, xq.indices), xq.indptr),
                         shape=(n, len(rows)))
    xd_c = sp.csr_matrix((xd.data.astype(dtype, copy=False), np.searchsorted(rows, xd.indices), xd.indptr),
                         shape=(n, len(rows)))
    zq = xq_c @ wc
    zd = xd_c @ wc
    nq = np.linalg.norm(zq, axis=1)
    nd = np.linalg.norm(zd, axis=1)
    live = (nq > 0) & (nd > 0)
    safe_q = np.where(nq > 0, nq, 1)
    safe_d = np.where(nd > 0, nd, 1)
    u = zq / safe_q[:, None]
    v = zd / safe_d[:, None]
    s = np.einsum("ij,ij->i", u, v)
    d = np.sqrt(np.maximum(0.0, 2.0 - 2.0 * s))
    y = np.asarray(y, dtype=dtype)
    hinge = np.maximum(0.0, margin - d)
    loss = float(np.mean(y * d * d + (1 - y) * hinge * hinge))

    # dL_i/ds_i; positives: d^2 = 2 - 2s; negatives: dd/ds = -1/d
    d_safe = np.maximum(d, 1e-12)
    g_s = np.where(y > 0, -2.0, np.where(hinge > 0, 2.0 * hinge / d_safe, 0.0)) / n
    g_s = np.where(live, g_s, 0.0).astype(dtype)
    du = g_s[:, None] * v
    dv = g_s[:, None] * u
    dzq = (du - u * np.einsum("ij,ij->i", u, du)[:, None]) / safe_q[:, None]
    dzd = (dv - v * np.einsum("ij,ij->i", v, dv)[:, None]) / safe_d[:, None]
    grad = xq_c.T @ dzq + xd_c.T @ dzd
    return loss, rows, np.asarray(grad, dtype=dtype)


# -- persistence ---------------------------------------------------------------


def _header_bytes(model: EncoderModel) -> bytes:
    return MAGIC + _HEADER.pack(FORMAT_VERSION, model.hash_dim, model.embed_dim, model.featurizer.flags)


def model_file_size(hash_dim: int, embed_dim: int) -> int:
    return HEADER_SIZE + 4 * hash_dim * embed_dim


def save_model(model: EncoderModel, path: str | Path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_header_bytes(model))
        # embed_dim x hash_dim, row-major, little-endian f32; chunked to bound memory
        w = model.weights
        for start in range(0, model.embed_dim, 16):
            fh.write(np.ascontiguousarray(w[:, start : start + 16].T, dtype="<f4").tobytes())
    os.replace(tmp, path)


def load_model(path: str | Path) -> EncoderModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    return model_from_bytes(raw)


def model_from_bytes(raw: bytes) -> EncoderModel:
    if len(raw) < HEADER_SIZE or raw[: len(MAGIC)] != MAGIC:
        raise FormatError("not an encoder model file (bad magic)")
    version, hash_dim, embed_dim, flags = _HEADER.unpack_from(raw, len(MAGIC))
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported model format version {version}")
    expected = model_file_size(hash_dim, embed_dim)
    if len(raw) != expected:
        raise FormatError(f"model file has {len(raw)} bytes, expected {expected}")
    try:
        featurizer = FeaturizerConfig(hash_dim=hash_dim, flags=flags)
    except ValueError as exc:
        raise FormatError(str(exc)) from None
    matrix = np.frombuffer(raw, dtype="<f4", offset=HEADER_SIZE).reshape(embed_dim, hash_dim)
    weights = np.ascontiguousarray(matrix.T, dtype=np.float32)
    return EncoderModel(featurizer, weights)


def model_to_bytes(model: EncoderModel) -> bytes:
    buf = io.BytesIO()
    buf.write(_header_bytes(model))
    buf.write(np.ascontiguousarray(model.weights.T, dtype="<f4").tobytes())
    return buf.getvalue()
