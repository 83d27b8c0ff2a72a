"""Raw event ingestion and per-stay normalisation.

Input tables (UTF-8 CSV with header)::

    events.csv  stay_id,patient_id,concept_id,timestamp,value
    stays.csv   stay_id,patient_id,intime,outtime,age,gender,insurance,death_time
    icd9.csv    stay_id,seq,code,description

Timestamps are integer seconds (epoch or offset, uniform per dataset); ISO-8601
datetimes are also accepted and converted to UTC epoch seconds. Fractional
seconds are truncated.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, NamedTuple, Optional

from .errors import SchemaError

log = logging.getLogger(__name__)

EVENT_COLUMNS = ("stay_id", "patient_id", "concept_id", "timestamp", "value")
STAY_COLUMNS = ("stay_id", "patient_id", "intime", "outtime", "age", "gender", "insurance", "death_time")
ICD9_COLUMNS = ("stay_id", "seq", "code", "description")

WINDOW_MARGIN = 3600  # samples kept within [icu_in - margin, icu_out + margin]

_GENDERS = {"m": "male", "male": "male", "f": "female", "female": "female"}


class Sample(NamedTuple):
    concept_id: str
    t: int
    value: float


@dataclass
class StayRecord:
    stay_id: str
    patient_id: str
    icu_in: int
    icu_out: int
    age_years: int
    gender: str
    insurance: Optional[str] = None
    death_time: Optional[int] = None
    samples: list[Sample] = field(default_factory=list)
    icd9: list[tuple[str, str]] = field(default_factory=list)
    note_chunk_probs: Optional[list[float]] = None

    @property
    def los_seconds(self) -> int:
        return self.icu_out - self.icu_in

    def to_json(self) -> dict:
        return {
            "stay_id": self.stay_id,
            "patient_id": self.patient_id,
            "icu_in": self.icu_in,
            "icu_out": self.icu_out,
            "age_years": self.age_years,
            "gender": self.gender,
            "insurance": self.insurance,
            "death_time": self.death_time,
            "samples": [[s.concept_id, s.t, s.value] for s in self.samples],
            "icd9": [[c, d] for c, d in self.icd9],
            "note_chunk_probs": self.note_chunk_probs,
        }

    @classmethod
    def from_json(cls, d: dict) -> "StayRecord":
        return cls(
            stay_id=d["stay_id"],
            patient_id=d["patient_id"],
            icu_in=d["icu_in"],
            icu_out=d["icu_out"],
            age_years=d["age_years"],
            gender=d["gender"],
            insurance=d.get("insurance"),
            death_time=d.get("death_time"),
            samples=[Sample(c, int(t), float(v)) for c, t, v in d.get("samples", [])],
            icd9=[(c, desc) for c, desc in d.get("icd9", [])],
            note_chunk_probs=d.get("note_chunk_probs"),
        )


@dataclass(frozen=True)
class Reject:
    source: str
    line: int
    reason: str

    def __str__(self) -> str:
        return f"{self.source}:{self.line}: {self.reason}"


@dataclass
class IngestResult:
    stays: list[StayRecord]
    rejects: list[Reject]
    rows_read: dict[str, int]


def id_sort_key(x: str):
    """Numeric ids sort numerically, anything else lexicographically after them."""
    return (0, int(x), "") if x.isdigit() else (1, 0, x)


def parse_timestamp(raw: str) -> int:
    raw = raw.strip()
    try:
        value = float(raw)
    except ValueError:
        dt = datetime.fromisoformat(raw)
        if dt.tzinfo is None:
            dt = dt.replace(tzinfo=timezone.utc)
        return math.floor(dt.timestamp())
    if not math.isfinite(value):
        raise ValueError(f"non-finite timestamp {raw!r}")
    return math.floor(value)


def parse_gender(raw: str) -> str:
    try:
        return _GENDERS[raw.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown gender {raw!r}") from None


def _reader(path: Path, required: tuple[str, ...]):
    fh = open(path, newline="", encoding="utf-8")
    reader = csv.DictReader(fh)
    header = reader.fieldnames or []
    missing = [c for c in required if c not in header]
    if missing:
        fh.close()
        raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
    return fh, reader


def _parse_stay(row: dict) -> StayRecord:
    icu_in = parse_timestamp(row["intime"])
    icu_out = parse_timestamp(row["outtime"])
    if not icu_in < icu_out:
        raise ValueError("intime must precede outtime")
    age = int(float(row["age"]))
    if age < 0:
        raise ValueError(f"negative age {age}")
    death = (row.get("death_time") or "").strip()
    return StayRecord(
        stay_id=row["stay_id"].strip(),
        patient_id=row["patient_id"].strip(),
        icu_in=icu_in,
        icu_out=icu_out,
        age_years=age,
        gender=parse_gender(row["gender"]),
        insurance=(row.get("insurance") or "").strip() or None,
        death_time=parse_timestamp(death) if death else None,
    )


def ingest(events_path, stays_path, icd9_path=None) -> IngestResult:
    """Read the three CSV tables into one :class:`StayRecord` per stays row.

    Malformed rows and events referencing unknown stays are collected in
    ``rejects`` rather than raised; a missing column raises :class:`SchemaError`.
    """
    rejects: list[Reject] = []
    counts = {"stays": 0, "events": 0, "icd9": 0}
    stays: dict[str, StayRecord] = {}

    fh, reader = _reader(Path(stays_path), ("stay_id", "patient_id", "intime", "outtime", "age", "gender"))
    with fh:
        for row in reader:
            counts["stays"] += 1
            try:
                stay = _parse_stay(row)
            except (ValueError, TypeError, AttributeError) as exc:
                rejects.append(Reject("stays", reader.line_num, str(exc)))
                continue
            if stay.stay_id in stays:
                rejects.append(Reject("stays", reader.line_num, f"duplicate stay_id {stay.stay_id}"))
                continue
            stays[stay.stay_id] = stay

    fh, reader = _reader(Path(events_path), EVENT_COLUMNS)
    with fh:
        for row in reader:
            counts["events"] += 1
            stay = stays.get(row["stay_id"].strip())
            if stay is None:
                rejects.append(Reject("events", reader.line_num, f"orphan event: unknown stay_id {row['stay_id']!r}"))
                continue
            if row["patient_id"].strip() != stay.patient_id:
                rejects.append(Reject("events", reader.line_num, "patient_id disagrees with stays table"))
                continue
            try:
                sample = Sample(row["concept_id"].strip(), parse_timestamp(row["timestamp"]), float(row["value"]))
            except (ValueError, TypeError, AttributeError) as exc:
                rejects.append(Reject("events", reader.line_num, str(exc)))
                continue
            stay.samples.append(sample)

    if icd9_path is not None:
        coded: dict[str, list[tuple[int, str, str]]] = defaultdict(list)
        fh, reader = _reader(Path(icd9_path), ICD9_COLUMNS)
        with fh:
            for row in reader:
                counts["icd9"] += 1
                sid = row["stay_id"].strip()
                if sid not in stays:
                    rejects.append(Reject("icd9", reader.line_num, f"orphan diagnosis: unknown stay_id {sid!r}"))
                    continue
                try:
                    coded[sid].append((int(row["seq"]), row["code"].strip(), row["description"].strip()))
                except (ValueError, TypeError, AttributeError) as exc:
                    rejects.append(Reject("icd9", reader.line_num, str(exc)))
        for sid, entries in coded.items():
            entries.sort()
            stays[sid].icd9 = [(code, desc) for _, code, desc in entries]

    ordered = [stays[k] for k in sorted(stays, key=id_sort_key)]
    if rejects:
        log.warning("ingest: %d rejected row(s); first: %s", len(rejects), rejects[0])
    return IngestResult(ordered, rejects, counts)


@dataclass(frozen=True)
class NormalizeStats:
    non_finite: int = 0
    out_of_window: int = 0
    collapsed: int = 0


def normalize_with_stats(stay: StayRecord, margin: int | None = WINDOW_MARGIN) -> tuple[StayRecord, NormalizeStats]:
    """Sort samples by (concept_id, t), mean-collapse duplicate timestamps,
    and drop non-finite or out-of-window values."""
    lo = hi = None
    if margin is not None:
        lo, hi = stay.icu_in - margin, stay.icu_out + margin
    non_finite = out_of_window = 0
    groups: dict[tuple[str, int], list[float]] = defaultdict(list)
    for s in stay.samples:
        if not math.isfinite(s.value):
            non_finite += 1
            continue
        if lo is not None and not lo <= s.t <= hi:
            out_of_window += 1
            continue
        groups[(s.concept_id, int(s.t))].append(float(s.value))
    samples = []
    collapsed = 0
    for (cid, t), vals in sorted(groups.items()):
        if len(vals) > 1:
            collapsed += len(vals) - 1
            # sorted summation keeps the mean independent of input order
            value = math.fsum(sorted(vals)) / len(vals)
        else:
            value = vals[0]
        samples.append(Sample(cid, t, value))
    return replace(stay, samples=samples), NormalizeStats(non_finite, out_of_window, collapsed)


def normalize(stay: StayRecord, margin: int | None = WINDOW_MARGIN) -> StayRecord:
    return normalize_with_stats(stay, margin)[0]


def samples_by_concept(stay: StayRecord) -> dict[str, list[Sample]]:
    out: dict[str, list[Sample]] = defaultdict(list)
    for s in stay.samples:
        out[s.concept_id].append(s)
    return dict(out)


def write_stays_jsonl(stays: Iterable[StayRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in stays:
            fh.write(json.dumps(s.to_json(), sort_keys=True) + "\n")


def read_stays_jsonl(path) -> list[StayRecord]:
    with open(path, encoding="utf-8") as fh:
        return [StayRecord.from_json(json.loads(line)) for line in fh if line.strip()]
