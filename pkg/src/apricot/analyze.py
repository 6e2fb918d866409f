"""False-positive lead times, acuity confusion and per-day state distributions."""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .records import AcuityState

N_STATES = len(AcuityState)


def _ratio(a: int, b: int) -> float | None:
    return None if b == 0 else a / b


@dataclass
class LeadTimeReport:
    tp: int
    fp: int
    tn: int
    fn: int
    fp_with_outcome: int
    fp_without_outcome: int
    adjusted: int
    leads_h: list[float] = field(default_factory=list)
    bin_h: float = 4.0

    @property
    def sensitivity(self):
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def ppv(self):
        return _ratio(self.tp, self.tp + self.fp)

    @property
    def adjusted_sensitivity(self):
        return _ratio(self.tp + self.adjusted, self.tp + self.adjusted + self.fn)

    @property
    def adjusted_ppv(self):
        return _ratio(self.tp + self.adjusted, self.tp + self.fp)

    def histogram(self) -> list[tuple[float, int]]:
        """(bin start in hours, count) for lead times; negative leads come after the last positive."""
        if not self.leads_h:
            return []
        bins = np.floor(np.asarray(self.leads_h) / self.bin_h).astype(np.int64)
        values, counts = np.unique(bins, return_counts=True)
        return [(float(v * self.bin_h), int(c)) for v, c in zip(values, counts)]


def fp_lead_analysis(window_preds, window_labels, admission_keys: Sequence[str], window_index=None,
                     horizon_h: float = 4.0, window_h: float = 4.0) -> LeadTimeReport:
    """Classify false positives by signed lead time to the next positive window.

    A false positive followed by a positive-label window at least
    ``horizon_h`` later counts as a true positive in the adjusted metrics.
    False positives after an admission's last positive get a negative lead
    (to that last positive) and stay false.
    """
    pred = np.asarray(window_preds).astype(bool)
    lab = np.asarray(window_labels).astype(bool)
    keys = np.asarray(admission_keys)
    widx = np.arange(len(pred)) if window_index is None else np.asarray(window_index)
    if not (len(pred) == len(lab) == len(keys) == len(widx)):
        raise ValueError("predictions, labels and keys must be aligned")
    report = LeadTimeReport(
        tp=int(np.sum(pred & lab)), fp=int(np.sum(pred & ~lab)),
        tn=int(np.sum(~pred & ~lab)), fn=int(np.sum(~pred & lab)),
        fp_with_outcome=0, fp_without_outcome=0, adjusted=0, bin_h=window_h)
    groups = defaultdict(list)
    for i, k in enumerate(keys.tolist()):
        groups[k].append(i)
    for k in sorted(groups):
        idx = np.asarray(groups[k])
        idx = idx[np.argsort(widx[idx], kind="stable")]
        pos_t = widx[idx][lab[idx]] * window_h
        for i in idx[pred[idx] & ~lab[idx]]:
            if pos_t.size == 0:
                report.fp_without_outcome += 1
                continue
            report.fp_with_outcome += 1
            t = widx[i] * window_h
            later = pos_t[pos_t > t]
            lead = float(later[0] - t) if later.size else float(pos_t[-1] - t)
            report.leads_h.append(lead)
            if lead >= horizon_h:
                report.adjusted += 1
    return report


def status_confusion(predicted_states, true_states) -> tuple[np.ndarray, np.ndarray]:
    """Column-normalised matrix P(predicted = i | true = j) and the raw counts."""
    p = np.asarray([int(s) for s in predicted_states], dtype=np.int64)
    t = np.asarray([int(s) for s in true_states], dtype=np.int64)
    if p.shape != t.shape:
        raise ValueError("state sequences must be aligned")
    counts = np.zeros((N_STATES, N_STATES), dtype=np.int64)
    np.add.at(counts, (p, t), 1)
    col = counts.sum(axis=0, keepdims=True)
    return np.divide(counts, col, out=np.zeros(counts.shape), where=col > 0), counts


def daily_distribution(states_by_admission: Mapping[str, Sequence], max_day: int = 15,
                       windows_per_day: int = 6) -> tuple[np.ndarray, np.ndarray]:
    """Per-day state proportions over windows of admissions present that day.

    Window t belongs to day ``t // windows_per_day + 1``. Returns
    ``(proportions[max_day, 4], counts[max_day, 4])``; empty days are zero rows.
    """
    counts = np.zeros((max_day, N_STATES), dtype=np.int64)
    for states in states_by_admission.values():
        for t, s in enumerate(states):
            day = t // windows_per_day
            if day < max_day:
                counts[day, int(s)] += 1
    tot = counts.sum(axis=1, keepdims=True)
    return np.divide(counts, tot, out=np.zeros(counts.shape), where=tot > 0), counts


# ---------------------------------------------------------------------------
# plot data


def write_lead_histogram_csv(path, reports: Mapping[str, LeadTimeReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["outcome", "lead_bin_start_h", "count"])
        for outcome, r in reports.items():
            for start, c in r.histogram():
                w.writerow([outcome, f"{start:g}", c])


def _fmt(v) -> str:
    return "" if v is None else f"{v:.6f}"


def write_lead_summary_csv(path, reports: Mapping[str, LeadTimeReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["outcome", "tp", "fp", "tn", "fn", "fp_with_outcome", "fp_without_outcome",
                    "adjusted_fp", "sensitivity", "adjusted_sensitivity", "ppv", "adjusted_ppv"])
        for outcome, r in reports.items():
            w.writerow([outcome, r.tp, r.fp, r.tn, r.fn, r.fp_with_outcome, r.fp_without_outcome,
                        r.adjusted, _fmt(r.sensitivity), _fmt(r.adjusted_sensitivity),
                        _fmt(r.ppv), _fmt(r.adjusted_ppv)])


def write_confusion_csv(path, matrix: np.ndarray, counts: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["predicted", "true", "proportion", "count"])
        for i in AcuityState:
            for j in AcuityState:
                w.writerow([i.label, j.label, f"{matrix[i, j]:.6f}", int(counts[i, j])])


def write_daily_csv(path, series: Mapping[str, tuple[np.ndarray, np.ndarray]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["source", "day", "state", "proportion", "count"])
        for source, (props, counts) in series.items():
            for d in range(props.shape[0]):
                for s in AcuityState:
                    w.writerow([source, d + 1, s.label, f"{props[d, s]:.6f}", int(counts[d, s])])
