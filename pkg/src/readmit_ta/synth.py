"""Deterministic synthetic ICU cohort with a tunable readmission signal.

Half of the index stays carry injected trend instability (drifting, noisy
series that cross state cutoffs); the rest hover inside their baseline with
measurement-resolution noise. With ``theta`` = 0 readmission is independent of
instability; at ``theta`` = 1 it is concentrated on unstable stays while the
overall positive rate stays at ``positive_rate``.

A readmission is materialised as a second ICU stay of the same patient 1-29
days after discharge, so labels are recovered by the cohort rules rather than
copied from the sidecar.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kb import CHART, LAB, KnowledgeBase, builtin_readmission_kb

DAY = 86400
HOUR = 3600
EPOCH_2001 = 978307200  # 2001-01-01T00:00:00Z

# measurement resolution per concept (decimals written to CSV)
RESOLUTION = {
    "chloride": 0, "creatinine": 1, "glucose": 0, "hemoglobin": 1, "pco2": 0, "ph": 2,
    "phosphate": 1, "plt": 0, "po2": 0, "urea": 0, "sodium": 0, "wbc": 1,
    "body_temp": 1, "gcs": 0, "mean_pressure": 0, "heart_rate": 0, "resp_rate": 0,
}
VALUE_RANGE = {"gcs": (3, 15), "ph": (6.8, 7.8), "body_temp": (32.0, 42.0)}

INSURANCE = ("Medicare", "Private", "Medicaid", "Government", "Self Pay")
INSURANCE_P = (0.45, 0.33, 0.12, 0.07, 0.03)

ICD9_CODES = (
    ("428.0", "Congestive heart failure, unspecified"),
    ("584.9", "Acute kidney failure, unspecified"),
    ("038.9", "Unspecified septicemia"),
    ("518.81", "Acute respiratory failure"),
    ("427.31", "Atrial fibrillation"),
    ("401.9", "Unspecified essential hypertension"),
    ("250.00", "Diabetes mellitus without mention of complication"),
    ("272.4", "Other and unspecified hyperlipidemia"),
    ("414.01", "Coronary atherosclerosis of native coronary artery"),
    ("599.0", "Urinary tract infection, site not specified"),
    ("486", "Pneumonia, organism unspecified"),
    ("285.9", "Anemia, unspecified"),
    ("276.2", "Acidosis"),
    ("996.74", "Other complications due to other vascular device"),
    ("39.61", "Extracorporeal circulation auxiliary to open heart surgery"),
    ("96.71", "Continuous invasive mechanical ventilation for less than 96 consecutive hours"),
)


@dataclass(frozen=True)
class SynthConfig:
    n_patients: int = 2000
    positive_rate: float = 0.2
    theta: float = 1.0
    seed: int = 0
    unstable_fraction: float = 0.5
    exclusion_rate: float = 0.05  # index stays deliberately violating one cohort rule

    def __post_init__(self):
        if self.n_patients < 10:
            raise ValueError("n_patients must be >= 10")
        if not 0 < self.positive_rate < 1:
            raise ValueError("positive_rate must be in (0, 1)")
        if not 0 <= self.theta <= 1:
            raise ValueError("theta must be in [0, 1]")
        if not 0 < self.unstable_fraction < 1:
            raise ValueError("unstable_fraction must be in (0, 1)")


@dataclass
class SynthTables:
    stays: list[list]
    events: list[list]
    icd9: list[list]
    labels: list[list]


def _readmission_probability(cfg: SynthConfig, unstable: bool) -> float:
    # keeps the marginal rate at positive_rate; the gap between groups grows linearly with theta
    q, p = cfg.unstable_fraction, cfg.positive_rate
    spread = min((1 - p) / (1 - q), p / q)
    if unstable:
        return p + cfg.theta * spread * (1 - q)
    return p - cfg.theta * spread * q


def _series(rng, lo, hi, n, frac_time, unstable, decimals, bounds):
    width = hi - lo
    base = rng.uniform(lo + 0.15 * width, hi - 0.15 * width)
    if rng.random() < 0.15:  # off-normal baseline unrelated to outcome
        base += rng.choice((-1, 1)) * rng.uniform(0.6, 1.0) * width
    if unstable:
        drift = rng.choice((-1, 1)) * rng.uniform(0.8, 1.6) * width
        sd = 0.12 * width
    else:
        drift = 0.0
        sd = 0.5 * 10.0 ** -decimals
    noise = np.empty(n)
    prev = 0.0
    eps = rng.normal(0.0, sd, n)
    for i in range(n):
        prev = 0.7 * prev + eps[i]
        noise[i] = prev
    values = base + drift * frac_time + noise
    lo_b, hi_b = bounds
    return np.clip(np.round(values, decimals), lo_b, hi_b)


def generate(cfg: SynthConfig, kb: KnowledgeBase | None = None) -> SynthTables:
    kb = kb or builtin_readmission_kb()
    rng = np.random.default_rng(cfg.seed)
    labs = kb.of_kind(LAB)
    charts = kb.of_kind(CHART)
    stays, events, icd9, labels = [], [], [], []
    next_stay = 200000
    exclusions = ("age", "los", "death")

    for i in range(cfg.n_patients):
        pid = str(10000 + i)
        age = int(rng.integers(18, 91))
        gender = "M" if rng.random() < 0.55 else "F"
        insurance = INSURANCE[int(rng.choice(len(INSURANCE), p=INSURANCE_P))]
        year_start = EPOCH_2001 + int(rng.integers(0, 11)) * 365 * DAY
        icu_in = year_start + int(rng.integers(5, 290)) * DAY + int(rng.integers(0, DAY))
        los = int(rng.uniform(1.2, 4.5) * DAY)
        death = ""
        excluded_by = ""
        if rng.random() < cfg.exclusion_rate:
            excluded_by = exclusions[int(rng.integers(0, len(exclusions)))]
            if excluded_by == "age":
                age = int(rng.integers(15, 18))
            elif excluded_by == "los":
                los = int(rng.uniform(0.3, 0.9) * DAY)
            else:
                death = str(icu_in + los + int(rng.integers(1, 20)) * DAY)
        icu_out = icu_in + los
        unstable = bool(rng.random() < cfg.unstable_fraction)
        positive = bool(rng.random() < _readmission_probability(cfg, unstable)) and not death

        sid = str(next_stay)
        next_stay += 1
        stays.append([sid, pid, icu_in, icu_out, age, gender, insurance, death])
        labels.append([sid, int(positive), int(unstable), int(not excluded_by)])

        # charts: shared hourly grid, each concept present at ~95% of hours
        hours = icu_in + int(rng.integers(0, HOUR)) + HOUR * np.arange(max(1, los // HOUR))
        hours = hours[hours <= icu_out]
        frac = (hours - icu_in) / los
        for c in charts:
            lo, hi = c.state_cutoffs[0].bound, c.state_cutoffs[1].bound
            dec = RESOLUTION.get(c.concept_id, 1)
            vals = _series(rng, lo, hi, len(hours), frac, unstable, dec, VALUE_RANGE.get(c.concept_id, (0, math.inf)))
            keep = rng.random(len(hours)) < 0.95
            keep[: c.min_samples] = True
            for t, v in zip(hours[keep].tolist(), vals[keep].tolist()):
                events.append([sid, pid, c.concept_id, t, f"{v:.{dec}f}"])

        # labs: one panel per started day
        n_days = max(1, math.ceil(los / DAY))
        draws = np.array([icu_in + d * DAY + int(rng.integers(0, min(DAY, icu_out - icu_in - d * DAY)))
                          for d in range(n_days) if icu_in + d * DAY < icu_out])
        frac = (draws - icu_in) / los
        for c in labs:
            lo, hi = c.state_cutoffs[0].bound, c.state_cutoffs[1].bound
            dec = RESOLUTION.get(c.concept_id, 1)
            vals = _series(rng, lo, hi, len(draws), frac, unstable, dec, VALUE_RANGE.get(c.concept_id, (0, math.inf)))
            for t, v in zip(draws.tolist(), vals.tolist()):
                events.append([sid, pid, c.concept_id, t, f"{v:.{dec}f}"])

        n_codes = int(rng.integers(1, 7))
        for seq, j in enumerate(rng.choice(len(ICD9_CODES), size=n_codes, replace=False).tolist(), start=1):
            icd9.append([sid, seq, *ICD9_CODES[j]])

        # later ICU stays: a readmission inside 30 days, or a distant same-year revisit
        later = None
        if positive:
            later = icu_out + int(rng.integers(1, 30)) * DAY - int(rng.integers(0, DAY // 2))
        elif not death and rng.random() < 0.1:
            later = icu_out + int(rng.integers(35, 60)) * DAY
        if later is not None:
            rid = str(next_stay)
            next_stay += 1
            stays.append([rid, pid, later, later + int(rng.uniform(1.0, 3.0) * DAY), age, gender, insurance, ""])

    return SynthTables(stays, events, icd9, labels)


def write(tables: SynthTables, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = {
        "stays": (["stay_id", "patient_id", "intime", "outtime", "age", "gender", "insurance", "death_time"], tables.stays),
        "events": (["stay_id", "patient_id", "concept_id", "timestamp", "value"], tables.events),
        "icd9": (["stay_id", "seq", "code", "description"], tables.icd9),
        "labels": (["stay_id", "label", "unstable", "expected_included"], tables.labels),
    }
    paths = {}
    for name, (header, rows) in spec.items():
        path = out / f"{name}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
        paths[name] = path
    return paths


def synth_generate(cfg: SynthConfig, out_dir) -> dict[str, Path]:
    return write(generate(cfg), out_dir)
