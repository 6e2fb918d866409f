"""Discrimination metrics, Youden thresholds, bootstrap intervals and rank-sum tests."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
from dataclasses import asdict, dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

Triple = tuple[float, float, float]
RATES = ("sensitivity", "specificity", "ppv", "npv")
METRICS = ("auroc", "auprc") + RATES


def _arrays(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be aligned 1-D arrays")
    return s, y


def midranks(x) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    xs = x[order]
    starts = np.r_[0, np.flatnonzero(np.diff(xs)) + 1]
    ends = np.r_[starts[1:], len(xs)]
    ranks = np.empty(len(x))
    ranks[order] = np.repeat((starts + ends + 1) / 2.0, ends - starts)
    return ranks


def auroc(scores, labels) -> float | None:
    """Mann-Whitney AUROC with ties counted half; None unless both labels occur."""
    s, y = _arrays(scores, labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    u = midranks(s)[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auprc(scores, labels) -> float | None:
    """Step average precision over distinct thresholds; None without positives."""
    s, y = _arrays(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        return None
    order = np.argsort(-s, kind="stable")
    ss, yy = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(ss)), len(ss) - 1]
    tp = np.cumsum(yy)[last]
    n_pred = last + 1
    recall = tp / n_pos
    precision = tp / n_pred
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def _counts_at(s, y, thresholds):
    """TP and FP counts for the rule 'positive iff score >= t'."""
    pos = np.sort(s[y])
    neg = np.sort(s[~y])
    tp = len(pos) - np.searchsorted(pos, thresholds, side="left")
    fp = len(neg) - np.searchsorted(neg, thresholds, side="left")
    return tp, fp


def youden_threshold(scores, labels) -> tuple[float, float]:
    """(t*, J) over observed scores; ties go to the smallest threshold."""
    s, y = _arrays(scores, labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("both label values are required")
    ts = np.unique(s)
    tp, fp = _counts_at(s, y, ts)
    # J * P * N in integers so the argmax is exact
    j_scaled = tp * n_neg + (n_neg - fp) * n_pos - n_pos * n_neg
    best = int(np.argmax(j_scaled))
    return float(ts[best]), float(j_scaled[best] / (n_pos * n_neg))


def _ratio(a: int, b: int) -> float | None:
    return None if b == 0 else a / b


def confusion_at(scores, labels, t: float):
    """(sensitivity, specificity, ppv, npv) at threshold t; 0/0 gives None."""
    if not math.isfinite(t):
        raise ValueError("threshold must be finite")
    s, y = _arrays(scores, labels)
    pred = s >= t
    tp = int(np.sum(pred & y))
    fp = int(np.sum(pred & ~y))
    fn = int(np.sum(~pred & y))
    tn = int(np.sum(~pred & ~y))
    return _ratio(tp, tp + fn), _ratio(tn, tn + fp), _ratio(tp, tp + fp), _ratio(tn, tn + fn)


def bootstrap_ci(metric: Callable, data: Sequence, n: int = 100, seed: int = 0,
                 retry_cap: int = 10) -> Triple:
    """Window-level bootstrap: (median, 2.5th, 97.5th percentile) of ``metric``.

    ``data`` is a tuple of aligned arrays resampled jointly. Undefined draws
    (None or NaN) are redrawn up to ``retry_cap`` times, then dropped.
    """
    arrays = [np.asarray(a) for a in data]
    size = len(arrays[0])
    if size == 0 or any(len(a) != size for a in arrays):
        raise ValueError("bootstrap data must be non-empty and aligned")
    rng = np.random.default_rng(seed)
    values, dropped = [], 0
    for _ in range(n):
        for _attempt in range(retry_cap + 1):
            idx = rng.integers(0, size, size)
            v = metric(*[a[idx] for a in arrays])
            if v is not None and math.isfinite(v):
                values.append(float(v))
                break
        else:
            dropped += 1
    if not values:
        raise ValueError("metric undefined on every bootstrap resample")
    if dropped:
        log.warning("dropped %d of %d bootstrap iterations with an undefined metric", dropped, n)
    med = float(np.median(values))
    lo, hi = np.percentile(values, [2.5, 97.5])
    return med, float(min(lo, med)), float(max(hi, med))


# ---------------------------------------------------------------------------
# rank-sum test


def _exact_ranksum_p(ranks: np.ndarray, n_a: int, observed: float) -> float:
    mean = n_a * (len(ranks) + 1) / 2.0
    dev = abs(observed - mean)
    hits = total = 0
    for combo in itertools.combinations(range(len(ranks)), n_a):
        total += 1
        if abs(ranks[list(combo)].sum() - mean) >= dev - 1e-9:
            hits += 1
    return hits / total


def wilcoxon_ranksum(a, b, method: str = "auto") -> tuple[float, float]:
    """Mann-Whitney U of ``a`` and a two-sided p-value.

    ``method`` is "exact" (enumeration over rank assignments), "normal"
    (tie and continuity corrected) or "auto" (exact when |a|+|b| <= 10).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("both samples must be non-empty")
    if method not in ("auto", "exact", "normal"):
        raise ValueError(f"unknown method {method!r}")
    n_a, n_b = len(a), len(b)
    n = n_a + n_b
    ranks = midranks(np.r_[a, b])
    r_a = ranks[:n_a].sum()
    u = r_a - n_a * (n_a + 1) / 2.0
    if method == "exact" or (method == "auto" and n <= 10):
        return float(u), _exact_ranksum_p(ranks, n_a, r_a)
    _, tie_counts = np.unique(ranks, return_counts=True)
    tie_term = float(np.sum(tie_counts ** 3 - tie_counts)) / (n * (n - 1))
    var = n_a * n_b / 12.0 * ((n + 1) - tie_term)
    if var <= 0:
        return float(u), 1.0
    z = max(0.0, abs(u - n_a * n_b / 2.0) - 0.5) / math.sqrt(var)
    return float(u), float(min(1.0, math.erfc(z / math.sqrt(2.0))))


# ---------------------------------------------------------------------------
# per-head reports


@dataclass
class HeadReport:
    n: int
    n_pos: int
    youden_threshold: float | None
    auroc: Triple | None = None
    auprc: Triple | None = None
    sensitivity: Triple | None = None
    specificity: Triple | None = None
    ppv: Triple | None = None
    npv: Triple | None = None

    def rows(self, outcome: str, cohort: str):
        for m in METRICS:
            v = getattr(self, m)
            yield (outcome, cohort, m, *(v if v is not None else (None, None, None)))


def evaluate_head(scores, labels, n_boot: int = 100, seed: int = 0) -> HeadReport:
    """Bootstrap all six metrics; rates use the Youden threshold of the full set."""
    s, y = _arrays(scores, labels)
    n_pos = int(y.sum())
    report = HeadReport(n=len(y), n_pos=n_pos, youden_threshold=None)
    if n_pos == 0 or n_pos == len(y):
        return report
    t, _ = youden_threshold(s, y)
    report.youden_threshold = t
    report.auroc = bootstrap_ci(auroc, (s, y), n_boot, seed)
    report.auprc = bootstrap_ci(auprc, (s, y), n_boot, seed)
    for i, name in enumerate(RATES):
        try:
            ci = bootstrap_ci(lambda ss, yy, i=i: confusion_at(ss, yy, t)[i], (s, y), n_boot, seed)
        except ValueError:
            ci = None
        setattr(report, name, ci)
    return report


def age_group(age: float) -> str:
    return "young" if age <= 60 else "old"


GROUPINGS = {
    "age": lambda st: age_group(st["age_years"]),
    "sex": lambda st: st["sex"],
    "race": lambda st: st["race"],
}


def subgroup_eval(scores: np.ndarray, labels: np.ndarray, admission_ids: Sequence[str],
                  static_table: Mapping[str, Mapping], grouping: str, heads: Sequence[str],
                  n_boot: int = 100, seed: int = 0) -> dict[str, dict[str, HeadReport]]:
    """Per-group reports for every head; ``scores``/``labels`` are [N, n_heads]."""
    if grouping not in GROUPINGS:
        raise ValueError(f"unknown grouping {grouping!r}; expected one of {sorted(GROUPINGS)}")
    key = GROUPINGS[grouping]
    groups = np.array([str(key(static_table[a])) for a in admission_ids])
    out = {}
    for g in sorted(set(groups.tolist())):
        sel = groups == g
        out[g] = {h: evaluate_head(scores[sel, j], labels[sel, j], n_boot, seed) for j, h in enumerate(heads)}
    return out


REPORT_COLUMNS = ("outcome", "cohort", "metric", "median", "lo", "hi")


def _fmt(v) -> str:
    return "" if v is None else f"{v:.6f}"


def write_report_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for r in rows:
            w.writerow([r[0], r[1], r[2], *[_fmt(v) for v in r[3:]]])


def write_report_json(path, reports: Mapping[str, Mapping[str, HeadReport]]) -> None:
    """``reports`` maps cohort -> head -> HeadReport."""
    def clean(v):
        if isinstance(v, float):
            return round(v, 6)
        if isinstance(v, (tuple, list)):
            return [clean(x) for x in v]
        return v

    payload = {c: {h: {k: clean(v) for k, v in asdict(r).items()} for h, r in by_head.items()}
               for c, by_head in reports.items()}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
