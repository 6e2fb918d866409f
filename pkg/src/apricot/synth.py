"""Seeded synthetic ICU cohort with a latent severity process.

Each admission follows an hourly mean-reverting severity walk with random
insults. Measurements are noisy affine readouts of severity, therapies open
and close on severity thresholds (with hysteresis), transfusions cluster at
very high severity, death hazard grows with severity and discharge happens
after a stretch of low severity. Lactate is the planted driver: it tracks
severity with much less noise than the vitals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .cohort import CohortSchema, ROUTINE_VITALS
from .records import (AcuityState, AdmissionRecord, ClinicalEvent, Disposition, StaticProfile,
                      THERAPIES, n_windows)

COMORBIDITIES = ("CHF", "COPD", "Diabetes", "CKD", "Liver", "Cancer", "Stroke", "MI")
CCI_WEIGHTS = (1, 1, 1, 2, 3, 2, 1, 1)

# time grid for therapy, transfusion and end-of-stay timestamps (hours)
TIME_QUANTUM = 0.25


@dataclass(frozen=True)
class Measurement:
    """``value = base + slope * severity + noise * N(0, 1)``, clipped."""

    name: str
    period_h: float
    base: float
    slope: float
    noise: float
    lo: float = -math.inf
    hi: float = math.inf
    during: str | None = None  # only measured while this therapy runs
    admission_prob: float = 1.0  # fraction of admissions that ever record it


DEFAULT_MENU = (
    Measurement("HR", 1.0, 82.0, 6.0, 10.0, 30, 200),
    Measurement("RR", 1.0, 17.0, 1.5, 3.5, 4, 50),
    Measurement("SBP", 1.0, 122.0, -6.0, 14.0, 50, 220),
    Measurement("DBP", 1.0, 68.0, -3.0, 9.0, 25, 130),
    Measurement("Temp", 1.0, 37.0, 0.15, 0.5, 33, 42),
    Measurement("SpO2", 1.0, 97.0, -1.0, 1.8, 60, 100),
    Measurement("Lactate", 1.5, 1.6, 1.4, 0.25, 0.3, 20),
    Measurement("GCS", 4.0, 14.0, -1.2, 1.2, 3, 15),
    Measurement("FiO2", 2.0, 0.3, 0.06, 0.06, 0.21, 1.0),
    Measurement("Creatinine", 8.0, 1.1, 0.25, 0.35, 0.2, 12),
    Measurement("WBC", 8.0, 9.5, 1.0, 3.0, 0.5, 60),
    Measurement("Hemoglobin", 8.0, 10.8, -0.3, 1.4, 4, 18),
    Measurement("Potassium", 8.0, 4.1, 0.05, 0.4, 2, 7),
    Measurement("Sodium", 8.0, 139.0, 0.0, 3.5, 115, 165),
    Measurement("Platelets", 8.0, 220.0, -15.0, 60.0, 5, 800),
    Measurement("Glucose", 6.0, 135.0, 6.0, 30.0, 40, 500),
    Measurement("Bilirubin", 12.0, 0.9, 0.15, 0.5, 0.1, 30),
    Measurement("Norepinephrine", 2.0, 0.08, 0.02, 0.04, 0.01, 1.0, during="VP"),
    Measurement("PEEP", 4.0, 6.0, 0.5, 1.5, 0, 20, during="MV"),
    Measurement("Effluent", 4.0, 25.0, 0.0, 4.0, 5, 60, during="CRRT"),
    Measurement("Ammonia", 12.0, 40.0, 5.0, 15.0, 5, 300, admission_prob=0.03),
)


@dataclass(frozen=True)
class SynthConfig:
    n_patients: int = 500
    seed: int = 7
    mean_stay_h: float = 72.0
    readmission_prob: float = 0.1
    # latent severity
    baseline: float = -0.7
    age_effect: float = 0.012
    comorbidity_effect: float = 0.15
    patient_spread: float = 0.35
    reversion_per_h: float = 0.03
    noise_per_sqrt_h: float = 0.18
    insult_rate_per_h: float = 0.009
    insult_size: tuple[float, float] = (2.5, 3.5)
    measurement_noise: float = 1.0
    menu: tuple[Measurement, ...] = DEFAULT_MENU
    driver_variable: str = "Lactate"
    # therapies: (start threshold, stop threshold)
    therapy_thresholds: dict = field(default_factory=lambda: {
        "MV": (1.3, 0.9), "VP": (1.8, 1.3), "CRRT": (2.6, 1.8)})
    transfusion_threshold: float = 2.0
    transfusion_prob_per_h: float = 0.35
    transfusion_units: tuple[int, int] = (1, 3)
    # outcomes
    mortality_hazard_scale: float = 0.0025
    mortality_severity_gain: float = 1.6
    mortality_reference: float = 2.0
    discharge_threshold: float = 0.6
    discharge_stable_h: float = 8.0
    min_stay_h: float = 12.0
    max_stay_h: float = 720.0
    missing_cci_prob: float = 0.05
    expected_unstable_prevalence: float = 0.2

    def __post_init__(self):
        for name in ("readmission_prob", "transfusion_prob_per_h", "missing_cci_prob",
                     "expected_unstable_prevalence"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be a probability, got {v}")
        if self.n_patients < 1:
            raise ValueError("n_patients must be positive")
        if not self.min_stay_h < self.max_stay_h:
            raise ValueError("min_stay_h must be below max_stay_h")

    def quiet(self) -> "SynthConfig":
        """Noise-free, hazard-free variant: everyone stays stable and goes home."""
        return replace(self, noise_per_sqrt_h=0.0, insult_rate_per_h=0.0, patient_spread=0.0,
                       measurement_noise=0.0, mortality_hazard_scale=0.0)


def schema_for(config: SynthConfig | None = None) -> CohortSchema:
    return CohortSchema(routine_vitals=ROUTINE_VITALS, comorbidities=COMORBIDITIES)


def _quantize(t: float) -> float:
    return round(math.ceil(t / TIME_QUANTUM - 1e-9) * TIME_QUANTUM, 4)


def _static(rng: np.random.Generator, cfg: SynthConfig) -> StaticProfile:
    age = float(np.clip(rng.normal(62, 16), 18, 95))
    comorb = tuple(int(rng.random() < 0.05 + 0.12 * max(age - 30, 0) / 60) for _ in COMORBIDITIES)
    cci = float(sum(w * c for w, c in zip(CCI_WEIGHTS, comorb)) + (age >= 50) + (age >= 70))
    return StaticProfile(
        age_years=round(age, 1),
        bmi=round(float(np.clip(rng.normal(28, 6), 15, 60)), 1),
        sex="M" if rng.random() < 0.55 else "F",
        race=str(rng.choice(["White", "Black", "Other"], p=[0.65, 0.2, 0.15])),
        comorbidities=comorb,
        cci=None if rng.random() < cfg.missing_cci_prob else cci,
    )


def _admission(rng: np.random.Generator, cfg: SynthConfig, patient_id: str, admission_id: str,
               static: StaticProfile) -> AdmissionRecord:
    mu = (cfg.baseline + cfg.age_effect * (static.age_years - 60)
          + cfg.comorbidity_effect * sum(static.comorbidities)
          + cfg.patient_spread * rng.standard_normal())
    theta = cfg.reversion_per_h
    discharge_rate = 1.0 / max(cfg.mean_stay_h - cfg.min_stay_h, 1.0)
    max_hours = int(cfg.max_stay_h)

    s = mu + cfg.noise_per_sqrt_h / math.sqrt(2 * theta) * rng.standard_normal() if theta > 0 else mu
    severity: list[float] = []
    on = {t: False for t in THERAPIES}
    open_since: dict[str, float] = {}
    intervals = {t: [] for t in THERAPIES}
    transfusions: list[tuple[float, float]] = []
    calm_hours = 0.0
    disposition = Disposition.DISCHARGED_ALIVE
    los = None

    for k in range(max_hours):
        if k > 0:
            s = s + theta * (mu - s) + cfg.noise_per_sqrt_h * rng.standard_normal()
            if rng.random() < cfg.insult_rate_per_h:
                s += rng.uniform(*cfg.insult_size)
        severity.append(s)

        for therapy in THERAPIES:
            start_thr, stop_thr = cfg.therapy_thresholds[therapy]
            if not on[therapy] and s > start_thr:
                on[therapy] = True
                open_since[therapy] = _quantize(k + rng.random())
            elif on[therapy] and s < stop_thr:
                on[therapy] = False
                end = _quantize(k + rng.random())
                if end > open_since[therapy]:
                    intervals[therapy].append((open_since[therapy], end))
                else:
                    on[therapy] = True
        if s > cfg.transfusion_threshold and rng.random() < cfg.transfusion_prob_per_h:
            units = int(rng.integers(cfg.transfusion_units[0], cfg.transfusion_units[1] + 1))
            transfusions.append((_quantize(k + rng.random() * 0.99), float(units)))

        calm_hours = calm_hours + 1 if (s < cfg.discharge_threshold and not any(on.values())) else 0
        if k + 1 < cfg.min_stay_h:
            continue
        hazard = cfg.mortality_hazard_scale * math.exp(
            cfg.mortality_severity_gain * (s - cfg.mortality_reference))
        if rng.random() < 1.0 - math.exp(-hazard):
            disposition = Disposition.DECEASED
            los = _quantize(k + 1 + rng.random())
            break
        if calm_hours >= cfg.discharge_stable_h and rng.random() < discharge_rate:
            los = _quantize(k + 1 + rng.random())
            break
    if los is None:
        los = float(cfg.max_stay_h)
    los = min(los, cfg.max_stay_h)

    for therapy in THERAPIES:
        if on[therapy] and open_since[therapy] < los:
            intervals[therapy].append((open_since[therapy], los))
        intervals[therapy] = [(a, min(b, los)) for a, b in intervals[therapy] if a < los]
    transfusions = [(t, u) for t, u in transfusions if t < los]

    events = _measure(rng, cfg, severity, intervals, los)
    record = AdmissionRecord(patient_id, admission_id, los, events, static,
                             intervals, transfusions, disposition)
    return record, np.asarray(severity[:int(math.ceil(los))])


def _active(intervals, t: float) -> bool:
    return any(a <= t < b for a, b in intervals)


def _measure(rng: np.random.Generator, cfg: SynthConfig, severity, intervals, los: float):
    events: list[ClinicalEvent] = []
    noise = cfg.measurement_noise
    hours = int(math.ceil(los))
    for m in cfg.menu:
        if m.admission_prob < 1.0 and rng.random() >= m.admission_prob:
            continue
        if m.period_h <= 1.0:
            times = np.arange(hours) + rng.random(hours)
        else:
            n = rng.poisson(los / m.period_h) + 1
            times = np.sort(rng.uniform(0, los, size=n))
        for t in times:
            t = round(float(t), 3)
            if t >= los:
                continue
            if m.during is not None and not _active(intervals[m.during], t):
                continue
            s = severity[min(int(t), len(severity) - 1)]
            v = m.base + m.slope * s + noise * m.noise * rng.standard_normal()
            events.append(ClinicalEvent(t, m.name, round(float(np.clip(v, m.lo, m.hi)), 3)))
    events.sort(key=lambda e: e.time_h)
    return events


def generate_with_severity(config: SynthConfig = SynthConfig()):
    """Like :func:`generate` but also returns each admission's hourly severity."""
    children = np.random.SeedSequence(config.seed).spawn(config.n_patients)
    out, severity = [], {}
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        pid = f"P{i:05d}"
        static = _static(rng, config)
        n_adm = 2 if rng.random() < config.readmission_prob else 1
        for j in range(n_adm):
            record, sev = _admission(rng, config, pid, f"{pid}-A{j}", static)
            out.append(record)
            severity[record.admission_id] = sev
    return out, severity


def generate(config: SynthConfig = SynthConfig()) -> list[AdmissionRecord]:
    """Admissions for ``config.n_patients`` patients, reproducible from the seed."""
    return generate_with_severity(config)[0]


# ---------------------------------------------------------------------------
# independent labeling from the generator's own records

GRID_H = 0.01


def _covered(intervals, points: np.ndarray) -> np.ndarray:
    hit = np.zeros(points.shape, dtype=bool)
    for a, b in intervals:
        hit |= (points >= a) & (points < b)
    return hit


def _bt_active(transfusions, points: np.ndarray) -> np.ndarray:
    total = np.zeros(points.shape)
    for t, u in transfusions:
        total += np.where((points >= t) & (points < t + 24.0), u, 0.0)
    return total >= 10.0


def oracle_labels(cohort: list[AdmissionRecord], window_h: float = 4.0) -> dict[str, dict]:
    """Per-admission ground truth computed by sampling a 0.01 h grid.

    Returns ``{admission_id: {"states": [...], "activity": {therapy: bool[]},
    "transitions": [(from, to), ...]}}``.
    """
    out = {}
    for adm in cohort:
        n = n_windows(adm.los_h, window_h)
        activity = {t: np.zeros(n, dtype=bool) for t in (*THERAPIES, "BT")}
        for w in range(n):
            lo, hi = w * window_h, min((w + 1) * window_h, adm.los_h)
            pts = np.arange(lo + GRID_H / 2, hi, GRID_H)
            for t in THERAPIES:
                activity[t][w] = _covered(adm.therapy_intervals[t], pts).any()
            activity["BT"][w] = _bt_active(adm.transfusion_events, pts).any()
        states = []
        for w in range(n):
            if w == n - 1:
                states.append(AcuityState.DECEASED if adm.disposition == Disposition.DECEASED
                              else AcuityState.DISCHARGE)
            elif any(activity[t][w] for t in activity):
                states.append(AcuityState.UNSTABLE)
            else:
                states.append(AcuityState.STABLE)
        out[adm.admission_id] = {
            "states": states,
            "activity": activity,
            "transitions": list(zip(states[:-1], states[1:])),
        }
    return out
