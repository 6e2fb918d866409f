"""Integrated-gradients attributions at the event embedding and static inputs."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import ndgrad as nd
from .model import ModelConfig, bind, event_embedding, logits_from_embedding, positional_encoding
from .records import HEAD_INDEX, PRIMARY_HEADS


def path_weights(steps: int, rule: str = "trapezoid") -> tuple[np.ndarray, np.ndarray]:
    """Nodes on [0, 1] and weights summing to 1 for ``steps`` equal intervals.

    "right" is the right Riemann sum over k/steps, k = 1..steps. "trapezoid"
    adds the baseline node and halves both end weights, which is exact for
    linear targets and second order on smooth paths.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if rule == "right":
        return np.arange(1, steps + 1) / steps, np.full(steps, 1.0 / steps)
    if rule == "trapezoid":
        w = np.full(steps + 1, 1.0 / steps)
        w[[0, -1]] *= 0.5
        return np.arange(steps + 1) / steps, w
    raise ValueError(f"unknown rule {rule!r}; expected 'right' or 'trapezoid'")


def ig_path(grad_fn: Callable, x: np.ndarray, baseline: np.ndarray, steps: int,
            rule: str = "trapezoid") -> np.ndarray:
    """Quadrature of the IG path integral for a generic ``grad_fn``.

    ``grad_fn(points[S, ...]) -> grads[S, ...]`` evaluates the gradient of the
    scalar target at each point.
    """
    alphas, weights = path_weights(steps, rule)
    points = baseline[None] + alphas.reshape((-1,) + (1,) * x.ndim) * (x - baseline)[None]
    return (x - baseline) * np.tensordot(weights, grad_fn(points), axes=1)


@dataclass
class Attribution:
    head: str
    admission_id: str
    window_index: int
    times: np.ndarray        # event offsets, aligned with ``codes``
    codes: np.ndarray
    events: np.ndarray       # per-event attribution (channel sum)
    static: np.ndarray       # per-static-feature attribution
    f_input: float
    f_baseline: float

    @property
    def total(self) -> float:
        return float(self.events.sum() + self.static.sum())

    @property
    def completeness_gap(self) -> float:
        return abs(self.total - (self.f_input - self.f_baseline))


def _logits_at(p, e: np.ndarray, mask: np.ndarray, static: np.ndarray, cfg: ModelConfig, tape=None):
    if tape is None:
        return logits_from_embedding(p, nd.Tensor(e), mask, nd.Tensor(static), cfg), None, None
    e_t, s_t = tape.leaf(e, "ig.embedding"), tape.leaf(static, "ig.static")
    return logits_from_embedding(p, e_t, mask, s_t, cfg), e_t, s_t


def integrated_gradients_heads(params, sample, heads: Sequence[str], cfg: ModelConfig,
                               steps: int = 64, chunk: int = 32, pad_to: int | None = None,
                               rule: str = "trapezoid") -> list[Attribution]:
    """IG of each head's logit from a zero event embedding and zero static baseline.

    The path scales the fused event embedding while positional encodings
    stay fixed, so both endpoints share the same positions and mask.
    Gradients for all heads share one forward pass per chunk of path points.
    Events older than the ``L_max`` most recent receive zero attribution.
    """
    if steps < 2:
        raise ValueError("steps must be >= 2")
    n_all = len(sample.codes)
    n = min(n_all, cfg.L_max)
    width = n if pad_to is None else max(pad_to, n)
    p = bind(params)
    e = np.zeros((width, cfg.d_model))
    if n:
        e[:n] = event_embedding(p, sample.times[-n:], sample.values[-n:], sample.codes[-n:], cfg).data
    pe = positional_encoding(width, cfg.d_model)
    mask = np.zeros(width, dtype=bool)
    mask[:n] = True
    static = np.asarray(sample.static_vec, dtype=np.float64)
    cols = [HEAD_INDEX[h] for h in heads]

    ends = _logits_at(p, np.stack([pe, pe + e]), np.stack([mask, mask]),
                      np.stack([np.zeros_like(static), static]), cfg)[0].data
    alphas, weights = path_weights(steps, rule)
    g_e = np.zeros((len(cols),) + e.shape)
    g_s = np.zeros((len(cols),) + static.shape)
    for start in range(0, len(alphas), chunk):
        a, w = alphas[start:start + chunk], weights[start:start + chunk]
        tape = nd.Tape()
        pt = bind(params, tape)
        logits, e_t, s_t = _logits_at(pt, pe[None] + a[:, None, None] * e[None],
                                      np.repeat(mask[None], len(a), 0), a[:, None] * static[None], cfg, tape)
        for j, col in enumerate(cols):
            seed = np.zeros(logits.shape)
            seed[:, col] = 1.0
            grads = nd.backward(tape, logits, seed)
            g_e[j] += np.tensordot(w, grads[e_t.id], axes=1)
            g_s[j] += np.tensordot(w, grads[s_t.id], axes=1)
    out = []
    for j, (head, col) in enumerate(zip(heads, cols)):
        ev = np.zeros(n_all)
        ev[n_all - n:] = (e * g_e[j]).sum(axis=1)[:n]
        out.append(Attribution(
            head=head, admission_id=getattr(sample, "admission_id", ""),
            window_index=int(getattr(sample, "window_index", 0)),
            times=np.asarray(sample.times), codes=np.asarray(sample.codes), events=ev,
            static=static * g_s[j], f_input=float(ends[1, col]), f_baseline=float(ends[0, col])))
    return out


def integrated_gradients(params, sample, head: str, cfg: ModelConfig, steps: int = 64,
                         pad_to: int | None = None, rule: str = "trapezoid") -> Attribution:
    return integrated_gradients_heads(params, sample, [head], cfg, steps, pad_to=pad_to, rule=rule)[0]


@dataclass
class RankingRow:
    variable: str
    head: str
    signed_sum: float
    abs_sum: float
    rank: int


def rank_variables(attributions: Sequence[Attribution], variable_names: Sequence[str],
                   static_names: Sequence[str], heads: Sequence[str] = PRIMARY_HEADS) -> list[RankingRow]:
    """Per-head signed and absolute attribution sums for variables and static features.

    Rank 1 has the largest absolute sum across ``heads``; ties keep vocabulary
    order followed by static order.
    """
    names = list(variable_names) + list(static_names)
    v = len(variable_names)
    signed = {h: np.zeros(len(names)) for h in heads}
    absolute = {h: np.zeros(len(names)) for h in heads}
    for a in attributions:
        if a.head not in signed:
            continue
        np.add.at(signed[a.head], a.codes, a.events)
        np.add.at(absolute[a.head], a.codes, np.abs(a.events))
        signed[a.head][v:] += a.static
        absolute[a.head][v:] += np.abs(a.static)
    total = sum(absolute[h] for h in heads)
    order = np.argsort(-total, kind="stable")
    rank = np.empty(len(names), dtype=np.int64)
    rank[order] = np.arange(1, len(names) + 1)
    rows = []
    for i in order:
        for h in heads:
            rows.append(RankingRow(names[i], h, float(signed[h][i]), float(absolute[h][i]), int(rank[i])))
    return rows


def top_variables(rows: Sequence[RankingRow], k: int) -> list[str]:
    seen = []
    for r in sorted(rows, key=lambda r: r.rank):
        if r.variable not in seen:
            seen.append(r.variable)
    return seen[:k]


def write_ranking_csv(path, rows: Sequence[RankingRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variable", "head", "signed_sum", "abs_sum", "rank"])
        for r in rows:
            w.writerow([r.variable, r.head, f"{r.signed_sum:.8g}", f"{r.abs_sum:.8g}", r.rank])


def write_trajectories(path, attributions: Sequence[Attribution], variable_names: Sequence[str],
                       static_names: Sequence[str]) -> None:
    """One JSON line per (sample, head) with per-event attributions for shading."""
    with open(path, "w") as fh:
        for a in attributions:
            fh.write(json.dumps({
                "admission_id": a.admission_id, "window_index": a.window_index, "head": a.head,
                "times": [round(float(t), 6) for t in a.times],
                "variables": [variable_names[c] for c in a.codes],
                "attribution": [round(float(x), 8) for x in a.events],
                "static": {n: round(float(x), 8) for n, x in zip(static_names, a.static)},
                "f_input": round(a.f_input, 8), "f_baseline": round(a.f_baseline, 8),
                "completeness_gap": round(a.completeness_gap, 10),
            }) + "\n")
