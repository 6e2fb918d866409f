"""Cohort file formats.

A cohort directory holds five files; every hour field is decimal hours since
ICU admission:

* ``events.jsonl``: one ``{"patient_id", "admission_id", "time_h", "variable", "value"}`` per line
* ``static.csv``: ``patient_id, admission_id, age, bmi, sex, race, cci, <comorbidity flags>``
* ``therapy.csv``: ``admission_id, therapy, start_h, end_h`` with therapy in MV/VP/CRRT
* ``transfusions.csv``: ``admission_id, time_h, units``
* ``dispositions.csv``: ``admission_id, disposition, end_h``
"""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from pathlib import Path
from typing import Sequence

from .records import THERAPIES, AdmissionRecord, ClinicalEvent, Disposition, StaticProfile

EVENTS = "events.jsonl"
STATIC = "static.csv"
THERAPY = "therapy.csv"
TRANSFUSIONS = "transfusions.csv"
DISPOSITIONS = "dispositions.csv"
COHORT_FILES = (EVENTS, STATIC, THERAPY, TRANSFUSIONS, DISPOSITIONS)


class MissingInputError(FileNotFoundError):
    pass


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_cohort(directory, admissions: Sequence[AdmissionRecord], comorbidities: Sequence[str]) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / EVENTS, "w") as fh:
        for adm in admissions:
            for ev in adm.events:
                fh.write(json.dumps({"patient_id": adm.patient_id, "admission_id": adm.admission_id,
                                     "time_h": ev.time_h, "variable": ev.variable,
                                     "value": ev.value}) + "\n")
    with open(d / STATIC, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["patient_id", "admission_id", "age", "bmi", "sex", "race", "cci", *comorbidities])
        for adm in admissions:
            s = adm.static
            w.writerow([adm.patient_id, adm.admission_id, _fmt(s.age_years), _fmt(s.bmi),
                        _fmt(s.sex), _fmt(s.race), _fmt(s.cci), *[int(c) for c in s.comorbidities]])
    with open(d / THERAPY, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["admission_id", "therapy", "start_h", "end_h"])
        for adm in admissions:
            for therapy in THERAPIES:
                for a, b in adm.therapy_intervals.get(therapy, []):
                    w.writerow([adm.admission_id, therapy, _fmt(float(a)), _fmt(float(b))])
    with open(d / TRANSFUSIONS, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["admission_id", "time_h", "units"])
        for adm in admissions:
            for t, u in adm.transfusion_events:
                w.writerow([adm.admission_id, _fmt(float(t)), _fmt(float(u))])
    with open(d / DISPOSITIONS, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["admission_id", "disposition", "end_h"])
        for adm in admissions:
            disp = adm.disposition.value if adm.disposition is not None else ""
            w.writerow([adm.admission_id, disp, _fmt(float(adm.los_h))])


def _opt_float(text: str):
    text = text.strip()
    return None if text == "" else float(text)


def read_cohort(directory) -> tuple[list[AdmissionRecord], list[str]]:
    """Load admissions (in static-file order) and the comorbidity column names."""
    d = Path(directory)
    for name in COHORT_FILES:
        if not (d / name).exists():
            raise MissingInputError(f"missing cohort file: {d / name}")

    events = defaultdict(list)
    with open(d / EVENTS) as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                events[row["admission_id"]].append(
                    ClinicalEvent(float(row["time_h"]), str(row["variable"]), float(row["value"])))

    therapies = defaultdict(lambda: {t: [] for t in THERAPIES})
    with open(d / THERAPY, newline="") as fh:
        for row in csv.DictReader(fh):
            therapies[row["admission_id"]][row["therapy"]].append(
                (float(row["start_h"]), float(row["end_h"])))

    transfusions = defaultdict(list)
    with open(d / TRANSFUSIONS, newline="") as fh:
        for row in csv.DictReader(fh):
            transfusions[row["admission_id"]].append((float(row["time_h"]), float(row["units"])))

    disp = {}
    with open(d / DISPOSITIONS, newline="") as fh:
        for row in csv.DictReader(fh):
            value = row["disposition"].strip()
            disp[row["admission_id"]] = (Disposition(value) if value else None, float(row["end_h"]))

    admissions = []
    with open(d / STATIC, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        comorbidities = header[7:]
        for row in reader:
            pid, aid = row[0], row[1]
            static = StaticProfile(
                age_years=_opt_float(row[2]), bmi=_opt_float(row[3]),
                sex=row[4] or None, race=row[5] or None,
                comorbidities=tuple(int(float(x)) for x in row[7:] if x.strip() != ""),
                cci=_opt_float(row[6]),
            )
            disposition, end_h = disp.get(aid, (None, float("nan")))
            admissions.append(AdmissionRecord(
                patient_id=pid, admission_id=aid, los_h=end_h, events=events.get(aid, []),
                static=static, therapy_intervals=therapies[aid],
                transfusion_events=transfusions.get(aid, []), disposition=disposition))
    return admissions, comorbidities
