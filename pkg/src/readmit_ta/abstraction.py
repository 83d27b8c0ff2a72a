"""State and gradient temporal abstraction of per-stay series.

Pipeline per stay: optional grid fill (linear interpolation between known
neighbours, edge extension outside a concept's observed span), state
discretisation against the KB cutoffs, gradient labelling of consecutive
values, and merging of same-label runs into intervals.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DegenerateSpan, OutOfSpan
from .kb import ConceptDef, KnowledgeBase
from .series import StayRecord, samples_by_concept

STATE = "state"
GRADIENT = "gradient"
INCREASING = "Increasing"
DECREASING = "Decreasing"
STABLE = "Stable"
GRADIENT_LABELS = (DECREASING, STABLE, INCREASING)  # ordinal order

SIMPLE = "simple"
THRESHOLDED = "thresholded"

_KIND_ORDER = {STATE: 0, GRADIENT: 1}


class SymbolPoint(NamedTuple):
    concept_id: str
    t: int
    kind: str
    label: str


class SymbolInterval(NamedTuple):
    concept_id: str
    kind: str
    label: str
    start: int
    end: int
    n_points: int


@dataclass
class GridSeries:
    concept_ids: tuple[str, ...]
    times: np.ndarray  # (T,) int64, strictly increasing
    values: np.ndarray  # (T, D) float, NaN = missing

    def column(self, concept_id: str) -> np.ndarray:
        return self.values[:, self.concept_ids.index(concept_id)]


@dataclass(frozen=True)
class AbstractionOptions:
    gradient_mode: str = SIMPLE
    use_t_stable_as_max_gap: bool = False
    interpolate: bool = False
    printed_weights: bool = False  # swap the interpolation weights (literal typeset variant)

    def __post_init__(self):
        if self.gradient_mode not in (SIMPLE, THRESHOLDED):
            raise ValueError(f"gradient_mode must be 'simple' or 'thresholded', got {self.gradient_mode!r}")


@dataclass
class AbstractionSet:
    stay_id: str
    points: list[SymbolPoint]
    intervals: list[SymbolInterval]
    options: AbstractionOptions = field(default_factory=AbstractionOptions)

    def to_json(self) -> dict:
        return {
            "stay_id": self.stay_id,
            "points": [list(p) for p in self.points],
            "intervals": [list(i) for i in self.intervals],
            "options": asdict(self.options),
        }

    @classmethod
    def from_json(cls, d: dict) -> "AbstractionSet":
        return cls(
            stay_id=d["stay_id"],
            points=[SymbolPoint(c, int(t), k, lab) for c, t, k, lab in d["points"]],
            intervals=[SymbolInterval(c, k, lab, int(s), int(e), int(n)) for c, k, lab, s, e, n in d["intervals"]],
            options=AbstractionOptions(**d.get("options", {})),
        )


def interpolate_at(prev: tuple[float, float], next: tuple[float, float], t_query: float,
                   printed_weights: bool = False) -> float:
    """Linear interpolation of ``t_query`` strictly between two known samples.

    ``printed_weights=True`` swaps the two weights, which makes the result tend
    to the *far* endpoint; kept only for literal comparisons.
    """
    (t0, v0), (t1, v1) = prev, next
    if t0 == t1:
        raise DegenerateSpan(f"prev and next share timestamp {t0}")
    if not t0 < t_query < t1:
        raise OutOfSpan(f"t_query={t_query} outside ({t0}, {t1})")
    span = t1 - t0
    w_prev, w_next = (t1 - t_query) / span, (t_query - t0) / span
    if printed_weights:
        w_prev, w_next = w_next, w_prev
    return v0 * w_prev + v1 * w_next


def _fill_column(obs_t: np.ndarray, obs_v: np.ndarray, times: np.ndarray, printed_weights: bool) -> np.ndarray:
    pos = np.searchsorted(obs_t, times)  # first obs index with obs_t >= time
    out = np.empty(times.shape, dtype=float)
    n = len(obs_t)
    before = pos == 0
    after = pos == n
    clipped = np.minimum(pos, n - 1)
    exact = ~after & (obs_t[clipped] == times)
    out[before] = obs_v[0]
    out[after] = obs_v[-1]
    out[exact] = obs_v[pos[exact]]
    interior = ~before & ~after & ~exact
    if interior.any():
        i1 = pos[interior]
        t0, t1 = obs_t[i1 - 1].astype(float), obs_t[i1].astype(float)
        v0, v1 = obs_v[i1 - 1], obs_v[i1]
        tq = times[interior].astype(float)
        w_prev, w_next = (t1 - tq) / (t1 - t0), (tq - t0) / (t1 - t0)
        if printed_weights:
            w_prev, w_next = w_next, w_prev
        out[interior] = v0 * w_prev + v1 * w_next
    return out


def fill_grid(stay: StayRecord, kb: KnowledgeBase, printed_weights: bool = False) -> GridSeries:
    """Multivariate grid over the union of sample times, one column per KB concept.

    ``stay`` must be normalized. Concepts with no samples stay all-NaN.
    """
    by_concept = samples_by_concept(stay)
    for cid in by_concept:
        kb[cid]  # raises UnknownConcept
    all_t = sorted({s.t for s in stay.samples})
    times = np.asarray(all_t, dtype=np.int64)
    values = np.full((len(times), len(kb)), np.nan)
    for j, cid in enumerate(kb.ids):
        samples = by_concept.get(cid)
        if not samples:
            continue
        obs_t = np.fromiter((s.t for s in samples), dtype=np.int64, count=len(samples))
        obs_v = np.fromiter((s.value for s in samples), dtype=float, count=len(samples))
        values[:, j] = _fill_column(obs_t, obs_v, times, printed_weights)
    return GridSeries(kb.ids, times, values)


def state_of(concept: ConceptDef, value: float) -> str:
    return concept.state_cutoffs[concept.state_index(value)].label


def _gradient_codes(values: np.ndarray, mode: str, sig_delta: float) -> np.ndarray:
    """-1/0/+1 per consecutive pair."""
    diff = np.diff(np.asarray(values, dtype=float))
    codes = np.sign(diff).astype(np.int64)
    if mode == THRESHOLDED:
        codes[np.abs(diff) <= sig_delta] = 0
    elif mode != SIMPLE:
        raise ValueError(f"unknown gradient mode {mode!r}")
    return codes


def gradient_labels(series: Sequence[tuple[float, float]], mode: str = SIMPLE, sig_delta: float = 0.0,
                    concept_id: str = "") -> list[SymbolPoint]:
    """Direction of change between consecutive ``(t, value)`` pairs, stamped at the later time.

    ``simple`` compares strictly; ``thresholded`` calls any change of at most
    ``sig_delta`` Stable.
    """
    if len(series) < 2:
        return []
    ts = [p[-2] for p in series]
    codes = _gradient_codes([p[-1] for p in series], mode, sig_delta)
    return [SymbolPoint(concept_id, int(t), GRADIENT, GRADIENT_LABELS[c + 1]) for t, c in zip(ts[1:], codes)]


def merge_intervals(points: Sequence[SymbolPoint], max_gap: float = math.inf) -> list[SymbolInterval]:
    """Collapse maximal same-label runs of time-ordered points into intervals.

    A run breaks on a label change or when consecutive points are more than
    ``max_gap`` apart.
    """
    intervals: list[SymbolInterval] = []
    if not points:
        return intervals
    first = last = points[0]
    n = 1
    for p in points[1:]:
        if p.label == last.label and p.t - last.t <= max_gap:
            last = p
            n += 1
            continue
        intervals.append(SymbolInterval(first.concept_id, first.kind, first.label, first.t, last.t, n))
        first = last = p
        n = 1
    intervals.append(SymbolInterval(first.concept_id, first.kind, first.label, first.t, last.t, n))
    return intervals


def _concept_series(stay: StayRecord, kb: KnowledgeBase, options: AbstractionOptions):
    """Yield (concept, times, values) per concept with at least one sample, in KB order."""
    if options.interpolate:
        grid = fill_grid(stay, kb, options.printed_weights)
        for j, cid in enumerate(kb.ids):
            col = grid.values[:, j]
            if len(col) and not np.isnan(col[0]):
                yield kb[cid], grid.times, col
        return
    by_concept = samples_by_concept(stay)
    for cid in by_concept:
        kb[cid]
    for cid in kb.ids:
        samples = by_concept.get(cid)
        if samples:
            yield (kb[cid],
                   np.fromiter((s.t for s in samples), dtype=np.int64, count=len(samples)),
                   np.fromiter((s.value for s in samples), dtype=float, count=len(samples)))


def abstract_stay(stay: StayRecord, kb: KnowledgeBase, options: AbstractionOptions | None = None) -> AbstractionSet:
    """State and gradient points plus merged intervals for one normalized stay."""
    options = options or AbstractionOptions()
    points: list[SymbolPoint] = []
    intervals: list[SymbolInterval] = []
    for concept, times, values in _concept_series(stay, kb, options):
        cid = concept.concept_id
        labels = concept.state_labels
        t_list = times.tolist()
        states = [SymbolPoint(cid, t, STATE, labels[i]) for t, i in zip(t_list, concept.state_indices(values).tolist())]
        codes = _gradient_codes(values, options.gradient_mode, concept.sig_delta).tolist()
        grads = [SymbolPoint(cid, t, GRADIENT, GRADIENT_LABELS[c + 1]) for t, c in zip(t_list[1:], codes)]
        max_gap = concept.t_stable if options.use_t_stable_as_max_gap else math.inf
        intervals.extend(merge_intervals(states, max_gap))
        intervals.extend(merge_intervals(grads, max_gap))
        points.extend(states)
        points.extend(grads)
    points.sort(key=lambda p: (p.t, p.concept_id, _KIND_ORDER[p.kind]))
    return AbstractionSet(stay.stay_id, points, intervals, options)
