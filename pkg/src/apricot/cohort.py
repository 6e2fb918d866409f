"""Cohort filtering, vocabulary, scaling and 4-hour windowing."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .records import AcuityState, AdmissionRecord

log = logging.getLogger(__name__)

ROUTINE_VITALS = ("HR", "RR", "SBP", "DBP", "Temp", "SpO2")
RACE_GROUPS = ("White", "Black", "Other")


@dataclass(frozen=True)
class CohortSchema:
    routine_vitals: tuple[str, ...] = ROUTINE_VITALS
    required_static: tuple[str, ...] = ("age_years", "bmi", "sex", "race")
    comorbidities: tuple[str, ...] = ()
    min_los_h: float = 12.0
    max_los_h: float = 720.0


# ---------------------------------------------------------------------------
# filtering


def _rejection(adm: AdmissionRecord, schema: CohortSchema) -> str | None:
    if not (schema.min_los_h <= adm.los_h <= schema.max_los_h):
        return f"length of stay {adm.los_h:g} h outside [{schema.min_los_h:g}, {schema.max_los_h:g}]"
    for name in schema.required_static:
        v = getattr(adm.static, name, None)
        if v is None or (isinstance(v, float) and math.isnan(v)):
            return f"missing static field {name}"
    if adm.disposition is None:
        return "missing disposition"
    if schema.comorbidities and len(adm.static.comorbidities) != len(schema.comorbidities):
        return "comorbidity vector has wrong length"
    for therapy, intervals in adm.therapy_intervals.items():
        for start, end in intervals:
            if not (start < end <= adm.los_h + 1e-9):
                return f"malformed {therapy} interval [{start:g}, {end:g})"
    seen = set()
    for ev in adm.events:
        if ev.time_h < 0 or not math.isfinite(ev.value):
            return f"malformed event {ev.variable}@{ev.time_h:g}"
        seen.add(ev.variable)
    missing = [v for v in schema.routine_vitals if v not in seen]
    if missing:
        return "missing routine vitals: " + ",".join(missing)
    return None


def apply_admission_filters(admissions: Sequence[AdmissionRecord], schema: CohortSchema = CohortSchema()):
    """Split admissions into (kept, rejected); ``rejected`` holds (admission_id, reason)."""
    kept, rejected = [], []
    for adm in admissions:
        reason = _rejection(adm, schema)
        if reason is None:
            kept.append(adm)
        else:
            rejected.append((adm.admission_id, reason))
    return kept, rejected


# ---------------------------------------------------------------------------
# vocabulary


@dataclass(frozen=True)
class Vocabulary:
    codes: dict[str, int]

    def __len__(self) -> int:
        return len(self.codes)

    def __contains__(self, name: str) -> bool:
        return name in self.codes

    @property
    def names(self) -> list[str]:
        return sorted(self.codes, key=self.codes.get)

    def to_json(self) -> str:
        return json.dumps({"variables": self.names})

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        return cls({name: i for i, name in enumerate(json.loads(text)["variables"])})


def build_vocabulary(admissions: Sequence[AdmissionRecord], min_prevalence: float = 0.05) -> Vocabulary:
    """Codes for variables present in at least ``min_prevalence`` of admissions.

    Codes follow first appearance while iterating admissions and their events
    in order.
    """
    if not admissions:
        raise ValueError("cannot build a vocabulary from an empty cohort")
    first_seen: dict[str, int] = {}
    present: dict[str, int] = {}
    for adm in admissions:
        names = set()
        for ev in adm.events:
            first_seen.setdefault(ev.variable, len(first_seen))
            names.add(ev.variable)
        for name in names:
            present[name] = present.get(name, 0) + 1
    n = len(admissions)
    # integer comparison keeps the boundary exact (5 of 100 is kept at 5%)
    kept = [v for v in sorted(first_seen, key=first_seen.get) if present[v] >= min_prevalence * n - 1e-9]
    if not kept:
        raise ValueError("no variable reaches the prevalence threshold")
    return Vocabulary({name: i for i, name in enumerate(kept)})


# ---------------------------------------------------------------------------
# scaling


def _static_features(schema: CohortSchema) -> list[str]:
    return (["age_years", "bmi", "cci", "sex_male"]
            + [f"race_{r}" for r in RACE_GROUPS]
            + [f"comorb_{c}" for c in schema.comorbidities])


def raw_static_vector(adm: AdmissionRecord, schema: CohortSchema) -> np.ndarray:
    """Unscaled static features; missing numeric entries are NaN."""
    s = adm.static

    def num(v):
        return np.nan if v is None else float(v)

    race = s.race if s.race in RACE_GROUPS else "Other"
    vec = [num(s.age_years), num(s.bmi), num(s.cci), 1.0 if s.sex == "M" else 0.0]
    vec += [1.0 if race == r else 0.0 for r in RACE_GROUPS]
    comorb = list(s.comorbidities) + [np.nan] * (len(schema.comorbidities) - len(s.comorbidities))
    vec += [num(c) for c in comorb[:len(schema.comorbidities)]]
    return np.array(vec, dtype=np.float64)


def _minmax(x, lo, hi):
    span = hi - lo
    if span <= 0:
        return np.zeros_like(np.asarray(x, dtype=np.float64))
    return np.clip((np.asarray(x, dtype=np.float64) - lo) / span, 0.0, 1.0)


@dataclass
class ScalerStats:
    """Per-variable outlier bounds and min/max; per-static mean and min/max."""

    lower: np.ndarray
    upper: np.ndarray
    vmin: np.ndarray
    vmax: np.ndarray
    static_names: list[str]
    static_mean: np.ndarray
    static_min: np.ndarray
    static_max: np.ndarray

    def scale_values(self, codes: np.ndarray, values: np.ndarray) -> np.ndarray:
        lo, hi = self.vmin[codes], self.vmax[codes]
        span = hi - lo
        safe = np.where(span > 0, span, 1.0)
        return np.where(span > 0, np.clip((values - lo) / safe, 0.0, 1.0), 0.0)

    def scale_static(self, raw: np.ndarray) -> np.ndarray:
        filled = np.where(np.isnan(raw), self.static_mean, raw)
        return np.array([_minmax(v, lo, hi) for v, lo, hi in
                         zip(filled, self.static_min, self.static_max)])

    def to_dict(self) -> dict:
        return {
            "lower": self.lower.tolist(), "upper": self.upper.tolist(),
            "min": self.vmin.tolist(), "max": self.vmax.tolist(),
            "static_names": self.static_names,
            "static_mean": self.static_mean.tolist(),
            "static_min": self.static_min.tolist(), "static_max": self.static_max.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScalerStats":
        arr = lambda k: np.asarray(d[k], dtype=np.float64)  # noqa: E731
        return cls(arr("lower"), arr("upper"), arr("min"), arr("max"), list(d["static_names"]),
                   arr("static_mean"), arr("static_min"), arr("static_max"))


def fit_scaler(admissions: Sequence[AdmissionRecord], vocabulary: Vocabulary,
               schema: CohortSchema = CohortSchema()) -> ScalerStats:
    """Fit on the development split only.

    Bounds are the 1st/99th percentiles (linear interpolation between order
    statistics); min/max come from the values that survive the bounds.
    """
    v = len(vocabulary)
    per_var: list[list[float]] = [[] for _ in range(v)]
    for adm in admissions:
        for ev in adm.events:
            code = vocabulary.codes.get(ev.variable)
            if code is not None:
                per_var[code].append(ev.value)
    lower, upper = np.zeros(v), np.zeros(v)
    vmin, vmax = np.zeros(v), np.zeros(v)
    for code, vals in enumerate(per_var):
        if not vals:
            continue
        arr = np.asarray(vals)
        lower[code], upper[code] = np.percentile(arr, [1, 99])
        keep = arr[(arr >= lower[code]) & (arr <= upper[code])]
        if keep.size == 0:
            keep = arr
        vmin[code], vmax[code] = keep.min(), keep.max()
        if np.unique(keep).size < 2:
            log.warning("variable %s has a degenerate range; it scales to 0", vocabulary.names[code])

    raw = np.array([raw_static_vector(a, schema) for a in admissions])
    names = _static_features(schema)
    mean = np.zeros(len(names))
    smin, smax = np.zeros(len(names)), np.zeros(len(names))
    for j in range(len(names)):
        col = raw[:, j][~np.isnan(raw[:, j])] if raw.size else np.array([])
        if col.size:
            mean[j], smin[j], smax[j] = col.mean(), col.min(), col.max()
    return ScalerStats(lower, upper, vmin, vmax, names, mean, smin, smax)


# ---------------------------------------------------------------------------
# per-admission preparation and windowing


@dataclass
class PreparedAdmission:
    patient_id: str
    admission_id: str
    los_h: float
    times: np.ndarray
    codes: np.ndarray
    values: np.ndarray
    static_vec: np.ndarray


def preprocess_admission(adm: AdmissionRecord, vocabulary: Vocabulary, scaler: ScalerStats,
                         schema: CohortSchema = CohortSchema()) -> PreparedAdmission:
    """Drop unknown variables and outliers; min-max scale values and statics.

    Event times stay in hours since admission.
    """
    times, codes, values = [], [], []
    for ev in adm.events:
        code = vocabulary.codes.get(ev.variable)
        if code is None:
            continue
        if ev.value < scaler.lower[code] or ev.value > scaler.upper[code]:
            continue
        times.append(ev.time_h)
        codes.append(code)
        values.append(ev.value)
    codes_arr = np.asarray(codes, dtype=np.int64)
    scaled = scaler.scale_values(codes_arr, np.asarray(values, dtype=np.float64))
    return PreparedAdmission(
        patient_id=adm.patient_id,
        admission_id=adm.admission_id,
        los_h=adm.los_h,
        times=np.asarray(times, dtype=np.float64),
        codes=codes_arr,
        values=scaled,
        static_vec=scaler.scale_static(raw_static_vector(adm, schema)),
    )


@dataclass
class WindowSample:
    patient_id: str
    admission_id: str
    window_index: int
    times: np.ndarray
    codes: np.ndarray
    values: np.ndarray
    static_vec: np.ndarray
    targets: np.ndarray
    current_state: AcuityState

    def __len__(self) -> int:
        return len(self.codes)


def window_events(prepared: PreparedAdmission, states: Sequence[AcuityState], labels: np.ndarray,
                  window_h: float = 4.0) -> list[WindowSample]:
    """One sample per observation window t whose successor t+1 is labeled.

    Events fall in window floor(time / window_h); their model time is the
    offset within the window, (time - window_h * t) / window_h.
    """
    widx = np.floor(prepared.times / window_h).astype(np.int64)
    out = []
    for t in range(len(labels)):
        sel = widx == t
        out.append(WindowSample(
            patient_id=prepared.patient_id,
            admission_id=prepared.admission_id,
            window_index=t,
            times=(prepared.times[sel] - window_h * t) / window_h,
            codes=prepared.codes[sel],
            values=prepared.values[sel],
            static_vec=prepared.static_vec,
            targets=np.asarray(labels[t]),
            current_state=AcuityState(states[t]),
        ))
    return out


def build_samples(admissions: Sequence[AdmissionRecord], vocabulary: Vocabulary, scaler: ScalerStats,
                  schema: CohortSchema = CohortSchema(), window_h: float = 4.0) -> list[WindowSample]:
    """Label, preprocess and window every admission, in input order."""
    from .phenotype import label_admission

    out = []
    for adm in admissions:
        states, labels = label_admission(adm, window_h)
        out += window_events(preprocess_admission(adm, vocabulary, scaler, schema), states, labels, window_h)
    return out


def save_windows(path, samples: Sequence[WindowSample]) -> None:
    """Window cache as one ``.npz`` of concatenated event arrays plus offsets."""
    lengths = np.array([len(s.codes) for s in samples], dtype=np.int64)
    np.savez(
        path,
        patient_id=np.array([s.patient_id for s in samples], dtype=str),
        admission_id=np.array([s.admission_id for s in samples], dtype=str),
        window_index=np.array([s.window_index for s in samples], dtype=np.int64),
        offsets=np.r_[0, np.cumsum(lengths)],
        times=np.concatenate([s.times for s in samples]) if samples else np.zeros(0),
        codes=np.concatenate([s.codes for s in samples]) if samples else np.zeros(0, dtype=np.int64),
        values=np.concatenate([s.values for s in samples]) if samples else np.zeros(0),
        static=np.stack([s.static_vec for s in samples]) if samples else np.zeros((0, 0)),
        targets=np.stack([s.targets for s in samples]) if samples else np.zeros((0, 0), dtype=np.int8),
        state=np.array([int(s.current_state) for s in samples], dtype=np.int64),
    )


def load_windows(path) -> list[WindowSample]:
    with np.load(path) as z:
        d = {k: z[k] for k in z.files}
    off = d["offsets"]
    return [WindowSample(
        patient_id=str(d["patient_id"][i]), admission_id=str(d["admission_id"][i]),
        window_index=int(d["window_index"][i]),
        times=d["times"][off[i]:off[i + 1]], codes=d["codes"][off[i]:off[i + 1]].astype(np.int64),
        values=d["values"][off[i]:off[i + 1]], static_vec=d["static"][i], targets=d["targets"][i],
        current_state=AcuityState(int(d["state"][i])),
    ) for i in range(len(d["window_index"]))]
