"""Record types shared across the pipeline stages."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import NamedTuple

THERAPIES = ("MV", "VP", "CRRT")

# Output head order used everywhere (model outputs, label vectors, reports).
HEADS = (
    "discharge",
    "stable",
    "unstable",
    "deceased",
    "unstable_to_stable",
    "stable_to_unstable",
    "mv",
    "vp",
    "crrt",
)
PRIMARY_HEADS = HEADS[:4]
HEAD_INDEX = {name: i for i, name in enumerate(HEADS)}


class AcuityState(enum.IntEnum):
    """Acuity levels ordered from least to most severe."""

    DISCHARGE = 0
    STABLE = 1
    UNSTABLE = 2
    DECEASED = 3

    @property
    def label(self) -> str:
        return self.name.capitalize()

    @classmethod
    def parse(cls, text: str) -> "AcuityState":
        return cls[text.strip().upper()]


class Disposition(str, enum.Enum):
    DISCHARGED_ALIVE = "DischargedAlive"
    DECEASED = "Deceased"


class ClinicalEvent(NamedTuple):
    time_h: float
    variable: str
    value: float


@dataclass
class StaticProfile:
    age_years: float | None
    bmi: float | None
    sex: str | None
    race: str | None
    comorbidities: tuple[int, ...] = ()
    cci: float | None = None


@dataclass
class AdmissionRecord:
    patient_id: str
    admission_id: str
    los_h: float
    events: list[ClinicalEvent]
    static: StaticProfile
    therapy_intervals: dict[str, list[tuple[float, float]]] = field(
        default_factory=lambda: {t: [] for t in THERAPIES})
    transfusion_events: list[tuple[float, float]] = field(default_factory=list)
    disposition: Disposition | None = None

    def __post_init__(self):
        # stable sort keeps same-time events in their source order
        self.events = sorted(self.events, key=lambda e: e.time_h)
        for t in THERAPIES:
            self.therapy_intervals.setdefault(t, [])

    @property
    def n_windows(self) -> int:
        return n_windows(self.los_h)


def n_windows(los_h: float, window_h: float = 4.0) -> int:
    """Number of windows including a partial terminal one."""
    return max(1, math.ceil(los_h / window_h - 1e-12))
