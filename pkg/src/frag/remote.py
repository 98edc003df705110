"""Client for an external embedding endpoint."""

from __future__ import annotations

import logging
import os
import time
from typing import Sequence

import httpx
import numpy as np

log = logging.getLogger(__name__)


class NetworkError(RuntimeError):
    pass


class SchemaError(ValueError):
    pass


class DimensionError(ValueError):
    pass


def remote_embed(url: str, texts: Sequence[str], task_header: str = "", *, token_env: str | None = None,
                 expected_dim: int | None = None, batch_size: int = 64, retries: int = 3, backoff: float = 0.5,
                 timeout: float = 30.0, client: httpx.Client | None = None) -> np.ndarray:
    """Embed ``texts`` remotely in batches; returns unit-normalized float32 rows in input order.

    Each batch is a POST of ``{"input": [...], "task": task_header}``.
    Transport errors and 5xx responses are retried with exponential backoff;
    4xx responses fail immediately.
    """
    headers = {}
    if token_env and os.environ.get(token_env):
        headers["Authorization"] = f"Bearer {os.environ[token_env]}"
    own = client is None
    client = client or httpx.Client(timeout=timeout)
    try:
        parts = []
        for start in range(0, len(texts), batch_size):
            batch = list(texts[start : start + batch_size])
            part = _post(client, url, {"input": batch, "task": task_header}, headers, retries, backoff, expected_dim)
            if parts and part.shape[1] != parts[0].shape[1]:
                raise DimensionError(f"batch starting at index {start} has dimension {part.shape[1]}, "
                                     f"earlier batches {parts[0].shape[1]}")
            parts.append(part)
        if not parts:
            return np.zeros((0, expected_dim or 0), dtype=np.float32)
        return np.concatenate(parts)
    finally:
        if own:
            client.close()


def _post(client: httpx.Client, url: str, payload: dict, headers: dict, retries: int, backoff: float,
          expected_dim: int | None) -> np.ndarray:
    texts = payload["input"]
    last: Exception | None = None
    for attempt in range(retries + 1):
        if attempt:
            time.sleep(backoff * 2 ** (attempt - 1))
        try:
            resp = client.post(url, json=payload, headers=headers)
        except httpx.HTTPError as exc:
            last = exc
            log.warning("embedding request failed (attempt %d): %s", attempt + 1, exc)
            continue
        if resp.status_code >= 500:
            last = NetworkError(f"server error {resp.status_code}")
            continue
        if resp.status_code >= 400:
            raise NetworkError(f"embedding endpoint returned {resp.status_code}: {resp.text[:200]}")
        return _parse(resp, len(texts), expected_dim)
    raise NetworkError(f"embedding endpoint unreachable after {retries + 1} attempts: {last}")


def _parse(resp: httpx.Response, n: int, expected_dim: int | None) -> np.ndarray:
    try:
        rows = resp.json()["embeddings"]
    except (ValueError, KeyError, TypeError) as exc:
        raise SchemaError(f"malformed embedding response: {exc}") from None
    if not isinstance(rows, list) or len(rows) != n or not all(isinstance(r, list) and r for r in rows):
        raise SchemaError(f"expected {n} non-empty embedding lists")
    dim = len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != dim:
            raise DimensionError(f"embedding {i} has dimension {len(r)}, expected {dim}")
    try:
        matrix = np.asarray(rows, dtype=np.float64)
    except (ValueError, TypeError) as exc:
        raise SchemaError(f"non-numeric embedding values: {exc}") from None
    if expected_dim is not None and matrix.shape[1] != expected_dim:
        raise DimensionError(f"expected dimension {expected_dim}, got {matrix.shape[1]}")
    if not np.all(np.isfinite(matrix)):
        raise SchemaError("embedding response contains non-finite values")
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return (matrix / norms).astype(np.float32)
