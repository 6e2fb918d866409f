import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

from apricot.records import AdmissionRecord, ClinicalEvent, Disposition, StaticProfile  # noqa: E402

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def random_admission(rng: np.random.Generator, idx: int = 0, quantum: float = 0.25) -> AdmissionRecord:
    """Admission with random therapy intervals and transfusions on a time grid."""
    los = float(rng.integers(1, 160)) * quantum + 2.0
    q = lambda x: round(x / quantum) * quantum  # noqa: E731
    therapies = {}
    for name in ("MV", "VP", "CRRT"):
        ivs = []
        for _ in range(rng.integers(0, 3)):
            a = q(rng.uniform(0, los))
            b = q(min(los, a + rng.uniform(quantum, 30)))
            if b > a:
                ivs.append((a, b))
        therapies[name] = ivs
    transfusions = []
    if rng.random() < 0.5:
        for _ in range(rng.integers(1, 12)):
            transfusions.append((q(rng.uniform(0, los)), float(rng.integers(1, 5))))
    events = [ClinicalEvent(q(rng.uniform(0, los)), v, 1.0) for v in ("HR", "RR", "SBP", "DBP", "Temp", "SpO2")]
    return AdmissionRecord(
        patient_id=f"p{idx}", admission_id=f"a{idx}", los_h=los, events=events,
        static=StaticProfile(age_years=50.0, bmi=25.0, sex="F", race="White", comorbidities=(), cci=1.0),
        therapy_intervals=therapies, transfusion_events=sorted(transfusions),
        disposition=Disposition.DECEASED if rng.random() < 0.3 else Disposition.DISCHARGED_ALIVE,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
