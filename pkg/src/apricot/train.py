"""Patient-level split, class-weighted multi-head loss and Adam training."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import ndgrad as nd
from .model import ModelConfig, bind, forward_logits, init_params, make_batch, predict_logits
from .records import HEADS

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 4
    batch_size: int = 64
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0
    patience: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ValueError("epochs, batch_size and patience must be positive")
        if self.lr < 0 or not (0 < self.beta1 < 1 and 0 < self.beta2 < 1) or self.eps <= 0:
            raise ValueError("invalid optimizer settings")


def split_patients(items: Sequence, frac: float = 0.8, seed: int = 0):
    """Random patient-level split; every item of a patient lands on one side."""
    pids = sorted({it.patient_id for it in items})
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pids))
    n_train = int(round(frac * len(pids)))
    train_ids = {pids[i] for i in order[:n_train]}
    train = [it for it in items if it.patient_id in train_ids]
    val = [it for it in items if it.patient_id not in train_ids]
    return train, val


def head_weights(labels) -> np.ndarray:
    """Balanced class weights per head as rows ``(w_pos, w_neg)``.

    A head without positives (or without negatives) gets zero weights and
    drops out of the loss.
    """
    y = np.asarray(labels, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    n = y.shape[0]
    if n == 0:
        raise ValueError("labels must be non-empty")
    pos = y.sum(axis=0)
    neg = n - pos
    out = np.zeros((y.shape[1], 2))
    ok = (pos > 0) & (neg > 0)
    out[ok, 0] = n / (2.0 * pos[ok])
    out[ok, 1] = n / (2.0 * neg[ok])
    return out


def sample_weights(targets: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return np.where(targets > 0, weights[:, 0], weights[:, 1])


def weighted_loss(logits: nd.Tensor, targets: np.ndarray, weights: np.ndarray) -> nd.Tensor:
    """Sum over heads of the per-head weighted BCE averaged over the batch."""
    y = np.asarray(targets, dtype=np.float64)
    w = sample_weights(y, weights)
    return nd.scale(nd.bce_with_logits(logits, y, w), float(y.shape[1]))


def per_head_loss(logits: np.ndarray, targets: np.ndarray, weights: np.ndarray) -> np.ndarray:
    y = np.asarray(targets, dtype=np.float64)
    w = sample_weights(y, weights)
    per = np.logaddexp(0.0, logits) - y * logits
    return (w * per).mean(axis=0)


class Adam:
    def __init__(self, params: dict[str, np.ndarray], cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        c = self.cfg
        self.t += 1
        norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        clip = min(1.0, c.clip_norm / norm) if norm > 0 and c.clip_norm > 0 else 1.0
        b1t = 1.0 - c.beta1 ** self.t
        b2t = 1.0 - c.beta2 ** self.t
        out = {}
        for k, p in params.items():
            g = grads.get(k)
            if g is None:
                out[k] = p
                continue
            g = g * clip
            self.m[k] = c.beta1 * self.m[k] + (1 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1 - c.beta2) * g * g
            out[k] = p - c.lr * (self.m[k] / b1t) / (np.sqrt(self.v[k] / b2t) + c.eps)
        return out


def _targets(samples) -> np.ndarray:
    return np.stack([s.targets for s in samples]).astype(np.float64)


def gradient_step(params, batch_samples, model_cfg: ModelConfig, weights: np.ndarray):
    """Loss value and parameter gradients for one batch."""
    tape = nd.Tape()
    p = bind(params, tape)
    logits = forward_logits(p, make_batch(batch_samples, model_cfg.L_max), model_cfg)
    y = _targets(batch_samples)
    loss = weighted_loss(logits, y, weights)
    value = float(loss.data)
    if not math.isfinite(value):
        heads = per_head_loss(logits.data, y, weights)
        bad = [HEADS[i] for i in range(len(HEADS)) if not np.isfinite(heads[i])]
        raise TrainingError(f"non-finite loss {value} (heads: {', '.join(bad) or 'unknown'})")
    grads = nd.backward(tape, loss)
    return value, {k: grads[t.id] for k, t in p.items() if t.id in grads}


def _batches(samples, batch_size: int, rng: np.random.Generator):
    """Shuffled batches of similar sequence length to limit padding."""
    order = rng.permutation(len(samples))
    group = batch_size * 32
    batches = []
    for start in range(0, len(order), group):
        chunk = sorted(order[start:start + group], key=lambda i: (len(samples[i].codes), i))
        batches += [chunk[j:j + batch_size] for j in range(0, len(chunk), batch_size)]
    return [batches[i] for i in rng.permutation(len(batches))]


@dataclass
class History:
    rows: list[dict] = field(default_factory=list)
    best_epoch: int = -1

    def write_csv(self, path) -> None:
        cols = ["epoch", "train_loss", "val_loss"] + [f"val_loss_{h}" for h in HEADS]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.rows:
                w.writerow([r["epoch"], f"{r['train_loss']:.10g}", f"{r['val_loss']:.10g}",
                            *[f"{v:.10g}" for v in r["val_head_loss"]]])


def evaluate_loss(params, samples, model_cfg: ModelConfig, weights: np.ndarray):
    logits = predict_logits(params, samples, model_cfg)
    heads = per_head_loss(logits, _targets(samples), weights)
    return float(heads.sum()), heads


def train(model_cfg: ModelConfig, train_set, val_set, cfg: TrainConfig = TrainConfig(),
          params: dict[str, np.ndarray] | None = None):
    """Train from scratch (or from ``params``); returns best-validation params and history."""
    if not train_set:
        raise ValueError("empty training set")
    params = init_params(model_cfg) if params is None else dict(params)
    weights = head_weights(_targets(train_set))
    opt = Adam(params, cfg)
    rng = np.random.default_rng(cfg.seed)
    history = History()
    best, best_loss, stale = params, math.inf, 0
    for epoch in range(cfg.epochs):
        losses = []
        for bi, idx in enumerate(_batches(train_set, cfg.batch_size, rng)):
            try:
                value, grads = gradient_step(params, [train_set[i] for i in idx], model_cfg, weights)
            except TrainingError as exc:
                raise TrainingError(f"epoch {epoch} batch {bi}: {exc}") from None
            params = opt.step(params, grads)
            losses.append(value)
        train_loss = float(np.mean(losses))
        if val_set:
            val_loss, heads = evaluate_loss(params, val_set, model_cfg, weights)
        else:
            val_loss, heads = train_loss, np.full(len(HEADS), np.nan)
        history.rows.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss,
                             "val_head_loss": heads.tolist()})
        log.info("epoch %d train %.4f val %.4f", epoch, train_loss, val_loss)
        if val_loss < best_loss:
            best, best_loss, stale = params, val_loss, 0
            history.best_epoch = epoch
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return best, history


@dataclass
class Scores:
    patient_ids: list[str]
    admission_ids: list[str]
    window_index: np.ndarray
    logits: np.ndarray
    probs: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.admission_ids)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["patient_id", "admission_id", "window_index",
                        *[f"p_{h}" for h in HEADS], *[f"y_{h}" for h in HEADS]])
            for i in range(len(self)):
                w.writerow([self.patient_ids[i], self.admission_ids[i], int(self.window_index[i]),
                            *[repr(float(x)) for x in self.probs[i]],
                            *[int(x) for x in self.labels[i]]])

    @classmethod
    def read_csv(cls, path) -> "Scores":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        probs = np.array([[float(r[f"p_{h}"]) for h in HEADS] for r in rows]).reshape(-1, len(HEADS))
        labels = np.array([[int(r[f"y_{h}"]) for h in HEADS] for r in rows]).reshape(-1, len(HEADS))
        clipped = np.clip(probs, 1e-300, 1 - 1e-16)
        return cls([r["patient_id"] for r in rows], [r["admission_id"] for r in rows],
                   np.array([int(r["window_index"]) for r in rows], dtype=np.int64),
                   np.log(clipped) - np.log1p(-clipped), probs, labels)


def predict_scores(params, samples, model_cfg: ModelConfig, batch_size: int = 128) -> Scores:
    logits = predict_logits(params, samples, model_cfg, batch_size)
    return Scores(
        patient_ids=[s.patient_id for s in samples],
        admission_ids=[s.admission_id for s in samples],
        window_index=np.array([s.window_index for s in samples], dtype=np.int64),
        logits=logits,
        probs=nd._sigmoid(logits),
        labels=_targets(samples).astype(np.int64) if samples else np.zeros((0, len(HEADS)), dtype=np.int64),
    )
