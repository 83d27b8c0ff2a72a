"""Abstraction knowledge base: per-concept state cutoffs and trend parameters.

A KB document is JSON::

    {"version": "...",
     "concepts": [{"id": "heart_rate", "name": "Heart-Rate", "kind": "chart",
                   "unit": "bpm",
                   "cutoffs": [[60, "Low", "open"], [80, "Normal"], [null, "High"]],
                   "sig_delta": 10, "t_stable_seconds": 3600, "min_samples": 5}]}

Each cutoff is ``[upper_bound, label]`` with an optional third element
``"open"`` (value strictly below the bound) or ``"closed"`` (value at or below
the bound, the default). The last cutoff must have a ``null`` bound.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Iterator, Mapping

import numpy as np

from .errors import DuplicateConcept, EmptyKB, InvalidCutoffs, KBError, NonPositiveParam, UnknownConcept

LAB = "lab"
CHART = "chart"
KINDS = (LAB, CHART)
DEFAULT_MIN_SAMPLES = {LAB: 1, CHART: 5}
HOUR = 3600


@dataclass(frozen=True)
class Cutoff:
    bound: float  # math.inf for the final, unbounded entry
    label: str
    closed: bool = True

    def admits(self, value: float) -> bool:
        return value <= self.bound if self.closed else value < self.bound


@dataclass(frozen=True)
class ConceptDef:
    concept_id: str
    name: str
    kind: str
    unit: str
    state_cutoffs: tuple[Cutoff, ...]
    sig_delta: float
    t_stable: int  # seconds
    min_samples: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise KBError(f"{self.concept_id}: kind must be one of {KINDS}, got {self.kind!r}")
        cuts = self.state_cutoffs
        if not cuts:
            raise InvalidCutoffs(f"{self.concept_id}: no cutoffs")
        bounds = [c.bound for c in cuts]
        if any(math.isnan(b) for b in bounds):
            raise InvalidCutoffs(f"{self.concept_id}: NaN cutoff bound")
        if not math.isinf(bounds[-1]) or bounds[-1] < 0:
            raise InvalidCutoffs(f"{self.concept_id}: final cutoff must be unbounded")
        if any(b >= nb for b, nb in zip(bounds, bounds[1:])):
            raise InvalidCutoffs(f"{self.concept_id}: cutoff bounds not strictly increasing: {bounds}")
        labels = [c.label for c in cuts]
        if len(set(labels)) != len(labels):
            raise InvalidCutoffs(f"{self.concept_id}: duplicate state labels {labels}")
        if not self.sig_delta > 0:
            raise NonPositiveParam(f"{self.concept_id}: sig_delta must be > 0, got {self.sig_delta}")
        if not self.t_stable > 0:
            raise NonPositiveParam(f"{self.concept_id}: t_stable must be > 0, got {self.t_stable}")
        if self.min_samples < 1:
            raise NonPositiveParam(f"{self.concept_id}: min_samples must be >= 1")

    @property
    def state_labels(self) -> tuple[str, ...]:
        return tuple(c.label for c in self.state_cutoffs)

    @property
    def n_states(self) -> int:
        return len(self.state_cutoffs)

    def state_index(self, value: float) -> int:
        """Ordinal of the state whose cutoff interval contains ``value``."""
        for i, cut in enumerate(self.state_cutoffs):
            if cut.admits(value):
                return i
        return len(self.state_cutoffs) - 1  # unreachable for finite values

    def state_indices(self, values: np.ndarray) -> np.ndarray:
        """Vectorised :meth:`state_index`; an index is the number of cutoffs exceeded."""
        values = np.asarray(values, dtype=float)
        idx = np.zeros(values.shape, dtype=np.int64)
        for cut in self.state_cutoffs[:-1]:
            idx += (values > cut.bound) if cut.closed else (values >= cut.bound)
        return idx

    def to_doc(self) -> dict:
        cutoffs = []
        for c in self.state_cutoffs:
            bound = None if math.isinf(c.bound) else _plain_number(c.bound)
            cutoffs.append([bound, c.label] if c.closed else [bound, c.label, "open"])
        return {
            "id": self.concept_id,
            "name": self.name,
            "kind": self.kind,
            "unit": self.unit,
            "cutoffs": cutoffs,
            "sig_delta": _plain_number(self.sig_delta),
            "t_stable_seconds": self.t_stable,
            "min_samples": self.min_samples,
        }


def _plain_number(x: float):
    return int(x) if float(x).is_integer() else x


class KnowledgeBase:
    """Immutable, ordered collection of :class:`ConceptDef`."""

    def __init__(self, concepts, version: str = "unversioned"):
        concepts = tuple(concepts)
        if not concepts:
            raise EmptyKB("knowledge base has no concepts")
        by_id: dict[str, ConceptDef] = {}
        for c in concepts:
            if c.concept_id in by_id:
                raise DuplicateConcept(c.concept_id)
            by_id[c.concept_id] = c
        self._concepts = concepts
        self._by_id = MappingProxyType(by_id)
        self._by_name = MappingProxyType({c.name.lower(): c for c in concepts})
        self.version = version

    @property
    def concepts(self) -> Mapping[str, ConceptDef]:
        return self._by_id

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(c.concept_id for c in self._concepts)

    def __iter__(self) -> Iterator[ConceptDef]:
        return iter(self._concepts)

    def __len__(self) -> int:
        return len(self._concepts)

    def __contains__(self, concept_id) -> bool:
        return concept_id in self._by_id

    def __getitem__(self, concept_id: str) -> ConceptDef:
        try:
            return self._by_id[concept_id]
        except KeyError:
            raise UnknownConcept(concept_id) from None

    def __eq__(self, other) -> bool:
        if not isinstance(other, KnowledgeBase):
            return NotImplemented
        return self.version == other.version and self._concepts == other._concepts

    def __reduce__(self):
        return (KnowledgeBase, (self._concepts, self.version))

    def __repr__(self) -> str:
        return f"KnowledgeBase(version={self.version!r}, n={len(self)})"

    def lookup(self, key: str) -> ConceptDef:
        """Find a concept by id or by (case-insensitive) display name."""
        if key in self._by_id:
            return self._by_id[key]
        try:
            return self._by_name[key.lower()]
        except KeyError:
            raise UnknownConcept(key) from None

    def of_kind(self, kind: str) -> list[ConceptDef]:
        return [c for c in self._concepts if c.kind == kind]

    def to_doc(self) -> dict:
        return {"version": self.version, "concepts": [c.to_doc() for c in self._concepts]}


def _parse_cutoffs(concept_id: str, raw) -> tuple[Cutoff, ...]:
    cuts = []
    try:
        for entry in raw:
            bound, label = entry[0], str(entry[1])
            closed = True
            if len(entry) > 2:
                if entry[2] not in ("open", "closed"):
                    raise InvalidCutoffs(f"{concept_id}: cutoff flag must be 'open' or 'closed'")
                closed = entry[2] == "closed"
            cuts.append(Cutoff(math.inf if bound is None else float(bound), label, closed))
    except (TypeError, IndexError, ValueError) as exc:
        raise InvalidCutoffs(f"{concept_id}: malformed cutoffs {raw!r}") from exc
    return tuple(cuts)


def load_kb(doc: dict | str | Path) -> KnowledgeBase:
    """Validate a KB document (dict, JSON text, or path) and build the KB.

    Raises:
        EmptyKB, InvalidCutoffs, NonPositiveParam, DuplicateConcept, KBError
    """
    if isinstance(doc, Path):
        doc = json.loads(doc.read_text(encoding="utf-8"))
    elif isinstance(doc, str):
        doc = json.loads(doc)
    if not isinstance(doc, dict) or "concepts" not in doc:
        raise KBError("KB document must be an object with a 'concepts' list")
    concepts = []
    for i, raw in enumerate(doc["concepts"]):
        try:
            cid = str(raw["id"])
            kind = raw["kind"]
            concepts.append(
                ConceptDef(
                    concept_id=cid,
                    name=str(raw.get("name", cid)),
                    kind=kind,
                    unit=str(raw.get("unit", "")),
                    state_cutoffs=_parse_cutoffs(cid, raw["cutoffs"]),
                    sig_delta=float(raw["sig_delta"]),
                    t_stable=int(raw["t_stable_seconds"]),
                    min_samples=int(raw.get("min_samples", DEFAULT_MIN_SAMPLES.get(kind, 1))),
                )
            )
        except KeyError as exc:
            raise KBError(f"concept #{i}: missing field {exc}") from None
    return KnowledgeBase(concepts, version=str(doc.get("version", "unversioned")))


def dump_kb(kb: KnowledgeBase) -> str:
    return json.dumps(kb.to_doc(), indent=2) + "\n"


# (id, name, kind, unit, normal_low, normal_high, sig_delta, t_stable_hours)
_READMISSION_TABLE = [
    ("chloride", "Chloride", LAB, "mEq/L", 96, 106, 5, 36),
    ("creatinine", "Creatinine", LAB, "mg/dL", 0.6, 1.3, 0.2, 36),
    ("glucose", "Glucose", LAB, "mg/dL", 70, 100, 10, 36),
    ("hemoglobin", "Hemoglobin", LAB, "g/dL", 11, 18, 2, 36),
    ("pco2", "PCO2", LAB, "mm Hg", 38, 42, 2, 36),
    ("ph", "PH", LAB, "pH", 7.34, 7.45, 0.05, 36),
    ("phosphate", "Phosphate", LAB, "mg/dL", 2.4, 4.1, 0.5, 36),
    ("plt", "PLT", LAB, "x10^9/L", 150, 400, 50, 36),
    ("po2", "PO2", LAB, "torr", 75, 100, 10, 36),
    ("urea", "Urea", LAB, "mg/dL", 10, 20, 5, 36),
    ("sodium", "Sodium", LAB, "mEq/L", 135, 145, 5, 36),
    ("wbc", "WBC", LAB, "x10^9/L", 4.5, 10, 1, 36),
    ("body_temp", "Body Temp", CHART, "degC", 36.2, 37.2, 0.5, 2),
    ("gcs", "Glasgow CS", CHART, "points", 8, 12, 2, 2),
    ("mean_pressure", "Mean Pressure", CHART, "mmHg", 65, 80, 5, 1),
    ("heart_rate", "Heart-Rate", CHART, "bpm", 60, 80, 10, 1),
    ("resp_rate", "Respiratory-Rate", CHART, "breath/min", 7, 14, 3, 1),
]

# three states per concept: below / inside (inclusive) / above the published range
_STATE_NAMES = {
    "body_temp": ("Hypothermia", "Normal", "Fever"),
    "gcs": ("severe", "moderate", "mild"),
}


def _readmission_doc() -> dict:
    concepts = []
    for cid, name, kind, unit, lo, hi, delta, hours in _READMISSION_TABLE:
        low, normal, high = _STATE_NAMES.get(cid, ("Low", "Normal", "High"))
        concepts.append({
            "id": cid,
            "name": name,
            "kind": kind,
            "unit": unit,
            "cutoffs": [[lo, low, "open"], [hi, normal], [None, high]],
            "sig_delta": delta,
            "t_stable_seconds": hours * HOUR,
            "min_samples": DEFAULT_MIN_SAMPLES[kind],
        })
    return {"version": "readmission-1", "concepts": concepts}


READMISSION_KB_DOC = _readmission_doc()


def builtin_readmission_kb() -> KnowledgeBase:
    """The 17-concept readmission knowledge base (12 labs, 5 charts)."""
    return load_kb(READMISSION_KB_DOC)
