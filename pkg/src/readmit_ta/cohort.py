"""Unplanned-readmission cohort: inclusion rules, labels, patient-level folds.

Rules (all evaluated, none short-circuited):

    R1  age >= 18
    R2  1 day <= length of stay <= 30 days
    R3  >= min_samples raw samples of every KB concept (1 per lab, 5 per chart)
    R4  no death during the stay or within 30 days of discharge
    R5  first ICU stay of the patient in its calendar year
        (``year_window="rolling"``: no other ICU stay started in the prior 365 days)

A stay is labelled positive iff another ICU stay of the same patient starts
in ``(icu_out, icu_out + 30 days]``.
"""
from __future__ import annotations

import bisect
import csv
import io
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .encoding import AGE_BUCKETS, GENDERS
from .errors import DataError, TooFewPatients
from .kb import KnowledgeBase
from .series import StayRecord, id_sort_key

DAY = 86400
READMISSION_WINDOW = 30 * DAY
DEATH_WINDOW = 30 * DAY
MIN_LOS = 1 * DAY
MAX_LOS = 30 * DAY
YEAR = 365 * DAY
CALENDAR = "calendar"
ROLLING = "rolling"

RULES = ("R1", "R2", "R3", "R4", "R5")

# published cohort (MIMIC-III): (positives, negatives) per (gender, age bucket)
MIMIC_REFERENCE_TABLE = {
    ("male", "18-65"): (485, 4268),
    ("male", ">65"): (531, 3569),
    ("female", "18-65"): (303, 2659),
    ("female", ">65"): (433, 3176),
}
MIMIC_REFERENCE_TOTALS = {"stays": 15424, "patients": 14837, "positives": 1752}


@dataclass
class CohortDecision:
    stay_id: str
    included: bool
    failed_rules: list[str] = field(default_factory=list)
    label: Optional[bool] = None


def calendar_year(t: int) -> int:
    return datetime.fromtimestamp(t, tz=timezone.utc).year


def _by_patient(stays: Iterable[StayRecord]) -> dict[str, list[StayRecord]]:
    groups: dict[str, list[StayRecord]] = defaultdict(list)
    for s in stays:
        groups[s.patient_id].append(s)
    for g in groups.values():
        g.sort(key=lambda s: (s.icu_in, id_sort_key(s.stay_id)))
    return groups


def _not_first_of_year(stays: Sequence[StayRecord], year_window: str) -> set[str]:
    """Stay ids of one patient failing R5."""
    failing = set()
    if year_window == CALENDAR:
        seen_years = set()
        for s in stays:  # sorted by icu_in
            y = calendar_year(s.icu_in)
            if y in seen_years:
                failing.add(s.stay_id)
            seen_years.add(y)
    elif year_window == ROLLING:
        for i, s in enumerate(stays):
            if any(s.icu_in - prev.icu_in < YEAR for prev in stays[:i]):
                failing.add(s.stay_id)
    else:
        raise ValueError(f"year_window must be 'calendar' or 'rolling', got {year_window!r}")
    return failing


def failed_rules(stay: StayRecord, kb: KnowledgeBase, not_first: bool) -> list[str]:
    failed = []
    if stay.age_years < 18:
        failed.append("R1")
    if not MIN_LOS <= stay.los_seconds <= MAX_LOS:
        failed.append("R2")
    counts = Counter(s.concept_id for s in stay.samples)
    if any(counts.get(c.concept_id, 0) < c.min_samples for c in kb):
        failed.append("R3")
    if stay.death_time is not None and stay.death_time <= stay.icu_out + DEATH_WINDOW:
        failed.append("R4")
    if not_first:
        failed.append("R5")
    return failed


def label_readmission(included: Iterable[StayRecord], all_stays: Iterable[StayRecord]) -> dict[str, bool]:
    """Readmission label per included stay, looking up admissions in the full history."""
    intimes: dict[str, list[int]] = defaultdict(list)
    for s in all_stays:
        intimes[s.patient_id].append(s.icu_in)
    for v in intimes.values():
        v.sort()
    labels = {}
    for s in included:
        times = intimes.get(s.patient_id, [])
        i = bisect.bisect_right(times, s.icu_out)
        labels[s.stay_id] = i < len(times) and times[i] <= s.icu_out + READMISSION_WINDOW
    return labels


def apply_rules(stays: Sequence[StayRecord], kb: KnowledgeBase, year_window: str = CALENDAR) -> list[CohortDecision]:
    """Evaluate R1-R5 on every (normalized) stay and label the included ones.

    Decisions come back in the input order.
    """
    not_first: set[str] = set()
    for group in _by_patient(stays).values():
        not_first |= _not_first_of_year(group, year_window)
    decisions = []
    for s in stays:
        failed = failed_rules(s, kb, s.stay_id in not_first)
        decisions.append(CohortDecision(s.stay_id, not failed, failed))
    included = [s for s, d in zip(stays, decisions) if d.included]
    labels = label_readmission(included, stays)
    for d in decisions:
        if d.included:
            d.label = labels[d.stay_id]
    return decisions


# --- folds --------------------------------------------------------------------

@dataclass
class FoldAssignment:
    k: int
    seed: int
    folds: dict[str, int]  # patient_id -> fold index

    def fold_of(self, patient_id: str) -> int:
        return self.folds[patient_id]

    def patients_in(self, fold: int) -> list[str]:
        return sorted((p for p, f in self.folds.items() if f == fold), key=id_sort_key)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["patient_id", "fold"])
        for p in sorted(self.folds, key=id_sort_key):
            w.writerow([p, self.folds[p]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, seed: int = -1) -> "FoldAssignment":
        rows = list(csv.DictReader(io.StringIO(text)))
        if rows and not {"patient_id", "fold"} <= set(rows[0]):
            raise DataError("folds file needs patient_id,fold columns")
        folds = {r["patient_id"]: int(r["fold"]) for r in rows}
        return cls(max(folds.values(), default=-1) + 1, seed, folds)


def patient_labels(pairs: Iterable[tuple[str, bool]]) -> dict[str, bool]:
    """Patient is positive iff any of its included stays is."""
    out: dict[str, bool] = {}
    for pid, label in pairs:
        out[pid] = out.get(pid, False) or bool(label)
    return out


def stratified_folds(pairs: Iterable[tuple[str, bool]], k: int = 5, seed: int = 0) -> FoldAssignment:
    """Patient-level stratified k-fold assignment from (patient_id, stay label) pairs.

    Patients of each class are shuffled with ``seed`` and dealt round-robin,
    negatives continuing where positives stopped so fold sizes differ by at
    most one.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    labels = patient_labels(pairs)
    if len(labels) < k:
        raise TooFewPatients(f"{len(labels)} patients for {k} folds")
    rng = np.random.default_rng(seed)
    order = []
    for cls_label in (True, False):
        members = sorted((p for p, lab in labels.items() if lab == cls_label), key=id_sort_key)
        order.extend(members[i] for i in rng.permutation(len(members)))
    return FoldAssignment(k, seed, {p: i % k for i, p in enumerate(order)})


def split_roles(fold: int, k: int) -> dict[int, str]:
    """Fold roles for one round: ``fold`` is test, the next fold validation, the rest train."""
    roles = {f: "train" for f in range(k)}
    roles[fold] = "test"
    roles[(fold + 1) % k] = "val"
    return roles


# --- report -------------------------------------------------------------------

@dataclass
class CohortReport:
    cells: dict[tuple[str, str], list[int]]  # (gender, age bucket) -> [positives, negatives]
    stays: int
    patients: int
    positives: int

    @property
    def rate(self) -> float:
        return self.positives / self.stays if self.stays else 0.0

    def to_text(self) -> str:
        rows = [["Gender", *(f"Ages {b}" for b in AGE_BUCKETS)]]
        for g in GENDERS:
            rows.append([g.capitalize(), *(f"{self.cells[(g, b)][0]}/{self.cells[(g, b)][1]}" for b in AGE_BUCKETS)])
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
        lines.append("(cells: positive/negative)")
        lines.append(f"stays={self.stays} patients={self.patients} positives={self.positives} "
                     f"rate={100 * self.rate:.1f}%")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["gender", "age_bucket", "positive", "negative"])
        for g in GENDERS:
            for b in AGE_BUCKETS:
                w.writerow([g, b, *self.cells[(g, b)]])
        w.writerow(["total", "", self.positives, self.stays - self.positives])
        w.writerow(["patients", "", self.patients, ""])
        return buf.getvalue()


def cohort_report(decisions: Iterable[CohortDecision], stays: Mapping[str, StayRecord]) -> CohortReport:
    cells = {(g, b): [0, 0] for g in GENDERS for b in AGE_BUCKETS}
    patients = set()
    n = pos = 0
    for d in decisions:
        if not d.included:
            continue
        s = stays[d.stay_id]
        bucket = AGE_BUCKETS[0] if s.age_years <= 65 else AGE_BUCKETS[1]
        cells[(s.gender, bucket)][0 if d.label else 1] += 1
        patients.add(s.patient_id)
        n += 1
        pos += bool(d.label)
    return CohortReport(cells, n, len(patients), pos)


# --- decisions file -------------------------------------------------------------

def decisions_to_csv(decisions: Iterable[CohortDecision]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["stay_id", "included", "failed_rules", "label"])
    for d in decisions:
        label = "" if d.label is None else int(d.label)
        w.writerow([d.stay_id, int(d.included), ";".join(d.failed_rules), label])
    return buf.getvalue()


def decisions_from_csv(text: str) -> list[CohortDecision]:
    out = []
    for r in csv.DictReader(io.StringIO(text)):
        failed = [x for x in r["failed_rules"].split(";") if x]
        label = None if r["label"] == "" else r["label"] == "1"
        out.append(CohortDecision(r["stay_id"], r["included"] == "1", failed, label))
    return out
