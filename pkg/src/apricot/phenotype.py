"""Computable acuity phenotype: window states, next-window targets, transitions."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .records import HEADS, THERAPIES, AcuityState, AdmissionRecord, Disposition, n_windows

BT_UNITS = 10.0
BT_HORIZON_H = 24.0

TRANSITION_SOURCES = (AcuityState.STABLE, AcuityState.UNSTABLE)
TRANSITION_TARGETS = (AcuityState.STABLE, AcuityState.UNSTABLE,
                      AcuityState.DISCHARGE, AcuityState.DECEASED)


def bt_intervals(transfusion_events, los_h: float | None = None,
                 units: float = BT_UNITS, horizon_h: float = BT_HORIZON_H):
    """Intervals ``[start, end)`` where the trailing 24 h unit total reaches ``units``.

    An event at time ``e`` counts toward every instant in ``[e, e + horizon_h)``.
    """
    events = sorted((float(t), float(u)) for t, u in transfusion_events)
    if any(u < 0 for _, u in events):
        raise ValueError("transfusion units must be non-negative")
    if not events:
        return []
    # piecewise-constant running total with jumps at arrivals and expiries
    deltas: dict[float, float] = {}
    for t, u in events:
        deltas[t] = deltas.get(t, 0.0) + u
        deltas[t + horizon_h] = deltas.get(t + horizon_h, 0.0) - u
    out: list[list[float]] = []
    total = 0.0
    points = sorted(deltas)
    for i, p in enumerate(points):
        total += deltas[p]
        if total >= units - 1e-9:
            nxt = points[i + 1] if i + 1 < len(points) else p
            if out and out[-1][1] == p:
                out[-1][1] = nxt
            else:
                out.append([p, nxt])
    if los_h is not None:
        out = [[s, min(e, los_h)] for s, e in out if s < los_h]
    return [(s, e) for s, e in out if e > s]


def window_activity(intervals, los_h: float, window_h: float = 4.0) -> np.ndarray:
    """Boolean per window: does any interval overlap it with positive length?"""
    n = n_windows(los_h, window_h)
    active = np.zeros(n, dtype=bool)
    for start, end in intervals:
        end = min(end, los_h)
        if end <= start:
            continue
        first = int(np.floor(start / window_h))
        last = int(np.ceil(end / window_h)) - 1
        active[max(first, 0):min(last, n - 1) + 1] = True
    return active


def therapy_activity(admission: AdmissionRecord, window_h: float = 4.0) -> dict[str, np.ndarray]:
    """Per-therapy window activity for MV, VP, CRRT plus derived BT."""
    act = {t: window_activity(admission.therapy_intervals.get(t, []), admission.los_h, window_h)
           for t in THERAPIES}
    act["BT"] = window_activity(bt_intervals(admission.transfusion_events, admission.los_h),
                                admission.los_h, window_h)
    return act


def label_states(admission: AdmissionRecord, window_h: float = 4.0,
                 activity: dict[str, np.ndarray] | None = None) -> list[AcuityState]:
    """Acuity state of every window; the last window carries the disposition."""
    act = therapy_activity(admission, window_h) if activity is None else activity
    unstable = np.zeros(n_windows(admission.los_h, window_h), dtype=bool)
    for a in act.values():
        unstable |= a
    states = [AcuityState.UNSTABLE if u else AcuityState.STABLE for u in unstable]
    if admission.disposition == Disposition.DECEASED:
        states[-1] = AcuityState.DECEASED
    else:
        states[-1] = AcuityState.DISCHARGE
    return states


def label_vector(states: Sequence[AcuityState], therapy_activity: dict[str, np.ndarray]) -> np.ndarray:
    """Targets for windows 1..n-1, one row per observation window 0..n-2.

    Columns follow :data:`apricot.records.HEADS`. Blood transfusion has no
    onset column.
    """
    n = len(states)
    out = np.zeros((max(n - 1, 0), len(HEADS)), dtype=np.int8)
    if n < 2:
        return out
    cur = np.array([int(s) for s in states[:-1]])
    nxt = np.array([int(s) for s in states[1:]])
    out[np.arange(n - 1), [HEADS.index(AcuityState(s).name.lower()) for s in nxt]] = 1
    out[:, HEADS.index("stable_to_unstable")] = (cur == AcuityState.STABLE) & (nxt == AcuityState.UNSTABLE)
    out[:, HEADS.index("unstable_to_stable")] = (cur == AcuityState.UNSTABLE) & (nxt == AcuityState.STABLE)
    for therapy in THERAPIES:
        a = np.asarray(therapy_activity[therapy], dtype=bool)[:n]
        out[:, HEADS.index(therapy.lower())] = a[1:] & ~a[:-1]
    return out


def label_admission(admission: AdmissionRecord, window_h: float = 4.0):
    """States and next-window label vectors for one admission."""
    act = therapy_activity(admission, window_h)
    states = label_states(admission, window_h, act)
    return states, label_vector(states, act)


@dataclass
class TransitionMatrix:
    """Next-state frequencies for Stable/Unstable sources.

    ``probs`` rows are (Stable, Unstable); columns (Stable, Unstable,
    Discharge, Deceased). A row with no observations is all zeros and has
    ``defined`` False.
    """

    counts: np.ndarray
    probs: np.ndarray
    defined: tuple[bool, bool]

    def as_rows(self):
        for i, src in enumerate(TRANSITION_SOURCES):
            for j, dst in enumerate(TRANSITION_TARGETS):
                yield src.label, dst.label, int(self.counts[i, j]), float(self.probs[i, j]), self.defined[i]


def transition_matrix(state_sequences: Iterable[Sequence[AcuityState]]) -> TransitionMatrix:
    counts = np.zeros((2, 4), dtype=np.int64)
    src_idx = {s: i for i, s in enumerate(TRANSITION_SOURCES)}
    dst_idx = {s: j for j, s in enumerate(TRANSITION_TARGETS)}
    for seq in state_sequences:
        for a, b in zip(seq[:-1], seq[1:]):
            if a in src_idx:
                counts[src_idx[a], dst_idx[AcuityState(b)]] += 1
    totals = counts.sum(axis=1)
    if totals.sum() == 0:
        raise ValueError("no transitions observed")
    probs = np.zeros((2, 4))
    for i in range(2):
        if totals[i]:
            probs[i] = counts[i] / totals[i]
    return TransitionMatrix(counts, probs, (bool(totals[0]), bool(totals[1])))


def write_labels_csv(path, labeled) -> None:
    """``labeled`` yields (admission_id, states, label_matrix).

    One row per observation window: its own state and the targets of the
    following window.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["admission_id", "window_index", "state", *HEADS])
        for adm_id, states, labels in labeled:
            for t, row in enumerate(labels):
                w.writerow([adm_id, t, states[t].label, *[int(v) for v in row]])
