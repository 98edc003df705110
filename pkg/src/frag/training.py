"""Contrastive training of the encoder: schedule, optimizers and the loop."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from frag.encoder import EncoderModel, batch_loss_and_grad
from frag.features import featurize_many
from frag.rng import stream

log = logging.getLogger(__name__)

OPTIMIZERS = ("lazy_adamw", "adamw", "adafactor")


class TrainError(RuntimeError):
    pass


class RangeError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 5000
    batch_size: int = 32
    grad_accum: int = 1
    peak_lr: float = 1e-3
    weight_decay: float = 0.01
    warmup_steps: int = 500
    margin: float = 0.5
    optimizer: str = "lazy_adamw"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.total_steps < 1 or self.batch_size < 1 or self.grad_accum < 1:
            raise ValueError("total_steps, batch_size and grad_accum must be positive")
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ValueError("warmup_steps must lie in [0, total_steps]")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")

    @classmethod
    def paper(cls, **overrides) -> "TrainConfig":
        """Rates as reported for fine-tuning a pretrained transformer."""
        return cls(**{"peak_lr": 5e-5, **overrides})

    def to_json(self) -> dict:
        return asdict(self)


def lr_at(config: TrainConfig, step: int) -> float:
    """Linear warmup to ``peak_lr`` then cosine decay to zero at ``total_steps``."""
    if not 0 <= step <= config.total_steps:
        raise RangeError(f"step {step} outside [0, {config.total_steps}]")
    warm = config.warmup_steps
    if step < warm:
        return config.peak_lr * step / warm
    if warm == config.total_steps:
        return config.peak_lr
    progress = (step - warm) / (config.total_steps - warm)
    return config.peak_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


class LazyAdamW:
    """AdamW whose moment updates touch only rows that received gradient.

    Decoupled weight decay is still applied to every row: rows not in the
    current batch accumulate their pending decay factor and settle it the
    next time they are touched (or on ``finalize``).
    """

    def __init__(self, weights: np.ndarray, cfg: TrainConfig):
        self.w = weights
        self.cfg = cfg
        self.m = np.zeros_like(weights)
        self.v = np.zeros_like(weights)
        self.t = 0
        self.log_decay = np.zeros(cfg.total_steps + 1)
        self.synced = np.zeros(weights.shape[0], dtype=np.int64)

    def sync(self, rows: np.ndarray) -> None:
        """Apply pending decay so ``rows`` hold their current values."""
        if self.cfg.weight_decay == 0:
            return
        cum = self.log_decay
        factor = np.exp(cum[self.t] - cum[self.synced[rows]]).astype(self.w.dtype)
        self.w[rows] *= factor[:, None]
        self.synced[rows] = self.t

    def step(self, rows: np.ndarray, grad: np.ndarray, lr: float) -> None:
        cfg = self.cfg
        self.sync(rows)
        self.t += 1
        self.log_decay[self.t] = self.log_decay[self.t - 1] + math.log1p(-lr * cfg.weight_decay)
        m = self.m[rows] * cfg.beta1 + (1 - cfg.beta1) * grad
        v = self.v[rows] * cfg.beta2 + (1 - cfg.beta2) * grad * grad
        self.m[rows] = m
        self.v[rows] = v
        mhat = m / (1 - cfg.beta1**self.t)
        vhat = v / (1 - cfg.beta2**self.t)
        w = self.w[rows] * np.float32(1 - lr * cfg.weight_decay)
        self.w[rows] = w - np.float32(lr) * (mhat / (np.sqrt(vhat) + cfg.eps))
        self.synced[rows] = self.t

    def finalize(self) -> None:
        self.sync(np.arange(self.w.shape[0]))


class AdamW:
    """Dense AdamW; every parameter is updated each step."""

    def __init__(self, weights: np.ndarray, cfg: TrainConfig):
        self.w = weights
        self.cfg = cfg
        self.m = np.zeros_like(weights)
        self.v = np.zeros_like(weights)
        self.t = 0

    def sync(self, rows) -> None:
        pass

    def step(self, rows: np.ndarray, grad: np.ndarray, lr: float) -> None:
        cfg = self.cfg
        self.t += 1
        g = np.zeros_like(self.w)
        g[rows] = grad
        self.m *= cfg.beta1
        self.m += (1 - cfg.beta1) * g
        self.v *= cfg.beta2
        self.v += (1 - cfg.beta2) * g * g
        mhat = self.m / (1 - cfg.beta1**self.t)
        vhat = self.v / (1 - cfg.beta2**self.t)
        self.w *= np.float32(1 - lr * cfg.weight_decay)
        self.w -= np.float32(lr) * (mhat / (np.sqrt(vhat) + cfg.eps))

    def finalize(self) -> None:
        pass


class FactoredAdafactor:
    """Adafactor-style update: factored second moments, no first moment."""

    def __init__(self, weights: np.ndarray, cfg: TrainConfig):
        self.w = weights
        self.cfg = cfg
        self.row = np.zeros(weights.shape[0], dtype=np.float64)
        self.col = np.zeros(weights.shape[1], dtype=np.float64)
        self.t = 0

    def sync(self, rows) -> None:
        pass

    def step(self, rows: np.ndarray, grad: np.ndarray, lr: float) -> None:
        cfg = self.cfg
        self.t += 1
        beta2 = 1.0 - self.t ** -0.8
        g = np.zeros(self.w.shape, dtype=np.float64)
        g[rows] = grad
        sq = g * g + 1e-30
        self.row = beta2 * self.row + (1 - beta2) * sq.mean(axis=1)
        self.col = beta2 * self.col + (1 - beta2) * sq.mean(axis=0)
        vhat = np.outer(self.row, self.col) / self.row.mean()
        update = g / np.sqrt(vhat)
        rms = math.sqrt(float(np.mean(update * update)))
        update /= max(1.0, rms)
        self.w *= np.float32(1 - lr * cfg.weight_decay)
        self.w -= (lr * update).astype(self.w.dtype)

    def finalize(self) -> None:
        pass


_OPTIMIZER_CLASSES = {"lazy_adamw": LazyAdamW, "adamw": AdamW, "adafactor": FactoredAdafactor}


@dataclass
class TrainResult:
    model: EncoderModel
    losses: list[float]


def _text_ids(texts: Sequence[str], table: dict[str, int]) -> np.ndarray:
    out = np.empty(len(texts), dtype=np.int64)
    for i, t in enumerate(texts):
        out[i] = table.setdefault(t, len(table))
    return out


def train(model: EncoderModel, pairs: Sequence[tuple[str, str, int]], config: TrainConfig,
          log_every: int = 0) -> TrainResult:
    """Train ``model`` in place on (instruction, document, label) pairs.

    Queries and documents share the encoder. Batches are drawn from a fresh
    permutation each epoch; no in-batch negatives are formed, each pair
    contributes only its own contrastive term.
    """
    if not pairs:
        raise TrainError("training set is empty")
    table: dict[str, int] = {}
    qid = _text_ids([p[0] for p in pairs], table)
    did = _text_ids([p[1] for p in pairs], table)
    labels = np.asarray([int(p[2]) for p in pairs], dtype=np.float32)
    texts = [None] * len(table)
    for t, i in table.items():
        texts[i] = t
    feats = featurize_many(model.featurizer, texts, dtype=np.float32)

    opt = _OPTIMIZER_CLASSES[config.optimizer](model.weights, config)
    n = len(pairs)
    epoch = 0
    order = stream(config.seed, "shuffle", epoch).permutation(n)
    cursor = 0
    losses: list[float] = []
    for step in range(1, config.total_steps + 1):
        acc_rows, acc_grads, acc_loss = [], [], 0.0
        for _ in range(config.grad_accum):
            idx = []
            while len(idx) < config.batch_size:
                if cursor == n:
                    epoch += 1
                    order = stream(config.seed, "shuffle", epoch).permutation(n)
                    cursor = 0
                take = min(config.batch_size - len(idx), n - cursor)
                idx.extend(order[cursor : cursor + take])
                cursor += take
                if n < config.batch_size and len(idx) >= n:
                    break
            idx = np.asarray(idx)
            xq, xd = feats[qid[idx]], feats[did[idx]]
            rows = np.unique(np.concatenate([xq.indices, xd.indices]))
            opt.sync(rows)
            loss, rows, grad = batch_loss_and_grad(model.weights, xq, xd, labels[idx], config.margin)
            acc_rows.append(rows)
            acc_grads.append(grad)
            acc_loss += loss
        if len(acc_rows) == 1:
            rows, grad = acc_rows[0], acc_grads[0]
        else:
            rows = np.unique(np.concatenate(acc_rows))
            grad = np.zeros((len(rows), model.embed_dim), dtype=np.float32)
            for r, g in zip(acc_rows, acc_grads):
                grad[np.searchsorted(rows, r)] += g
        grad /= config.grad_accum
        loss = acc_loss / config.grad_accum
        if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise TrainError(f"non-finite loss at step {step}")
        opt.step(rows, grad, lr_at(config, step))
        losses.append(loss)
        if log_every and step % log_every == 0:
            log.info("step %d loss %.4f (mean of last %d: %.4f)", step, loss, log_every,
                     float(np.mean(losses[-log_every:])))
    opt.finalize()
    model.invalidate()
    return TrainResult(model, losses)
