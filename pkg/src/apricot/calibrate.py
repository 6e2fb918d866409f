"""Isotonic calibration with three-fold cross-validation and Brier scoring."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class IsotonicMap:
    """Stepwise-constant monotone map, clamped outside the fitted range."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if len(self.x) == 0 or len(self.x) != len(self.y):
            raise ValueError("breakpoints and values must be non-empty and aligned")
        if np.any(np.diff(self.x) <= 0) or np.any(np.diff(self.y) < 0):
            raise ValueError("breakpoints must increase and values must not decrease")

    def __call__(self, scores) -> np.ndarray:
        s = np.asarray(scores, dtype=np.float64)
        idx = np.searchsorted(self.x, s, side="right") - 1
        return self.y[np.clip(idx, 0, len(self.y) - 1)]

    def to_dict(self) -> dict:
        return {"x": self.x.tolist(), "y": self.y.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "IsotonicMap":
        return cls(np.asarray(d["x"], dtype=np.float64), np.asarray(d["y"], dtype=np.float64))


def pava(values, weights=None) -> np.ndarray:
    """Weighted least-squares nondecreasing fit by pooling adjacent violators."""
    v = np.asarray(values, dtype=np.float64)
    w = np.ones_like(v) if weights is None else np.asarray(weights, dtype=np.float64)
    means, wts, sizes = [], [], []
    for vi, wi in zip(v, w):
        means.append(vi)
        wts.append(wi)
        sizes.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            m2, w2, n2 = means.pop(), wts.pop(), sizes.pop()
            total = wts[-1] + w2
            means[-1] = (means[-1] * wts[-1] + m2 * w2) / total
            wts[-1] = total
            sizes[-1] += n2
    return np.repeat(means, sizes)


def isotonic_fit(scores, labels) -> IsotonicMap:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if s.shape != y.shape or s.ndim != 1 or len(s) < 2:
        raise ValueError("scores and labels must be 1-D of equal length >= 2")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    xs, inverse, counts = np.unique(s, return_inverse=True, return_counts=True)
    means = np.bincount(inverse, weights=y) / counts
    return IsotonicMap(xs, pava(means, counts))


@dataclass
class CVCalibrator:
    """Mean of three isotonic maps, each fit on two of three folds."""

    maps: list[IsotonicMap]
    degenerate_folds: list[int] = field(default_factory=list)

    def __call__(self, scores) -> np.ndarray:
        return np.mean([m(scores) for m in self.maps], axis=0)

    def to_dict(self) -> dict:
        return {"maps": [m.to_dict() for m in self.maps], "degenerate_folds": list(self.degenerate_folds)}

    @classmethod
    def from_dict(cls, d: dict) -> "CVCalibrator":
        return cls([IsotonicMap.from_dict(m) for m in d["maps"]], list(d.get("degenerate_folds", [])))


def calibrate_cv3(scores, labels, seed: int = 0) -> CVCalibrator:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if len(s) < 9:
        raise ValueError("need at least 3 samples per fold")
    folds = np.array_split(np.random.default_rng(seed).permutation(len(s)), 3)
    maps, degenerate = [], []
    for k in range(3):
        fit_idx = np.sort(np.concatenate([folds[j] for j in range(3) if j != k]))
        if np.unique(y[fit_idx]).size < 2:
            degenerate.append(k)
        maps.append(isotonic_fit(s[fit_idx], y[fit_idx]))
    return CVCalibrator(maps, degenerate)


def brier(probs, labels) -> float:
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    return float(np.mean((p - y) ** 2))


def calibration_curve(probs, labels, n_bins: int = 10) -> list[tuple[float, float, int]]:
    """Equal-width bins on [0, 1]; rows (mean prob, positive fraction, count), empty bins omitted."""
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    b = np.clip(np.floor(p * n_bins).astype(np.int64), 0, n_bins - 1)
    rows = []
    for k in range(n_bins):
        sel = b == k
        if sel.any():
            rows.append((float(p[sel].mean()), float(y[sel].mean()), int(sel.sum())))
    return rows


def save_calibrators(path, calibrators: dict[str, CVCalibrator]) -> None:
    with open(path, "w") as fh:
        json.dump({head: c.to_dict() for head, c in calibrators.items()}, fh, indent=1)


def load_calibrators(path) -> dict[str, CVCalibrator]:
    with open(path) as fh:
        return {head: CVCalibrator.from_dict(d) for head, d in json.load(fh).items()}
