import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from readmit_ta import evaluation as ev
from readmit_ta.errors import DataError, EmptyChunks, NoPositives, SingleClass

from oracles import exhaustive_best_threshold, note_score, pairwise_auroc, rank_scan_ap


def report(**kw):
    base = dict(auroc=0.5, auprc=0.5, f1=0.5, precision=0.5, recall=0.5, threshold=0.5)
    base.update(kw)
    return ev.MetricsReport(**base)


def test_auroc_examples():
    assert ev.auroc([0.2, 0.8], [0, 1]) == 1.0
    assert ev.auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert ev.auroc([0.3] * 5, [0, 1, 0, 1, 1]) == 0.5


def test_auroc_single_class():
    with pytest.raises(SingleClass):
        ev.auroc([0.1, 0.2], [1, 1])


def test_auprc_examples():
    assert ev.auprc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    assert ev.auprc([0.9, 0.8, 0.7], [1, 0, 1]) == pytest.approx(5 / 6, abs=1e-12)
    for n in (1, 2, 7):
        scores = list(range(n, 0, -1))
        assert ev.auprc(scores, [0] * (n - 1) + [1]) == pytest.approx(1 / n, abs=1e-12)
    with pytest.raises(NoPositives):
        ev.auprc([0.1, 0.2], [0, 0])


def test_bad_shapes():
    with pytest.raises(DataError):
        ev.auroc([0.1, 0.2], [1])
    with pytest.raises(DataError):
        ev.auprc([], [])


def test_prf_examples():
    assert ev.prf_at([0.1, 0.9, 0.4], [1, 0, 1], 0.0)[1] == 1.0
    assert ev.prf_at([0.6, 0.4], [1, 0], 0.5) == (1.0, 1.0, 1.0)
    assert ev.prf_at([0.6, 0.4], [1, 0], 0.7) == (0.0, 0.0, 0.0)


def test_best_threshold_examples():
    assert ev.best_threshold([0.9, 0.8, 0.7], [1, 0, 1]) == 0.7
    assert ev.best_threshold([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 0.8
    assert ev.best_threshold([0.4, 0.4, 0.4], [0, 1, 0]) == 0.4


score_sets = st.integers(2, 12).flatmap(lambda n: st.tuples(
    st.lists(st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.6, 0.9, 1.0]), min_size=n, max_size=n),
    st.lists(st.booleans(), min_size=n, max_size=n).filter(lambda y: 0 < sum(y) < len(y)),
))


@given(score_sets)
def test_metrics_match_oracles(data):
    scores, labels = data
    assert abs(ev.auroc(scores, labels) - pairwise_auroc(scores, labels)) < 1e-12
    assert abs(ev.auprc(scores, labels) - rank_scan_ap(scores, labels)) < 1e-12
    assert ev.best_threshold(scores, labels) == exhaustive_best_threshold(scores, labels)


@given(score_sets)
def test_metric_ranges(data):
    scores, labels = data
    assert 0 <= ev.auroc(scores, labels) <= 1
    assert 0 < ev.auprc(scores, labels) <= 1
    p, r, f = ev.prf_at(scores, labels, ev.best_threshold(scores, labels))
    assert 0 <= p <= 1 and 0 <= r <= 1 and 0 <= f <= 1


@given(score_sets)
def test_auroc_invariant_to_monotone_transform(data):
    scores, labels = data
    squashed = [math.exp(3 * s) for s in scores]
    assert ev.auroc(squashed, labels) == pytest.approx(ev.auroc(scores, labels), abs=1e-12)


def test_compare_examples():
    a = report(auroc=0.8, f1=0.6, auprc=0.4, precision=0.3, recall=0.3)
    b = report(auroc=0.7, f1=0.5, auprc=0.3, precision=0.4, recall=0.4)
    assert ev.conclusively_better(a, b) == "A"
    assert ev.conclusively_better(b, a) == "B"
    assert ev.conclusively_better(a, a) == "inconclusive"
    c = report(auroc=0.8, f1=0.6, auprc=0.5, precision=0.3, recall=0.3)
    d = report(auroc=0.7, f1=0.5, auprc=0.5, precision=0.4, recall=0.4)
    assert ev.conclusively_better(c, d) == "inconclusive"


@given(st.lists(st.floats(0, 1), min_size=5, max_size=5), st.lists(st.floats(0, 1), min_size=5, max_size=5))
def test_compare_antisymmetric(xs, ys):
    a = ev.MetricsReport(*xs, 0.5)
    b = ev.MetricsReport(*ys, 0.5)
    flip = {"A": "B", "B": "A", "inconclusive": "inconclusive"}
    assert ev.conclusively_better(b, a) == flip[ev.conclusively_better(a, b)]


def test_aggregate_examples():
    agg = ev.aggregate_folds([report(auroc=0.6)] * 5)
    assert agg.mean["auroc"] == pytest.approx(0.6) and agg.std["auroc"] == 0.0
    agg = ev.aggregate_folds([report(auroc=0.5), report(auroc=0.7)])
    assert agg.mean["auroc"] == pytest.approx(0.6) and agg.std["auroc"] == pytest.approx(0.1)
    one = ev.aggregate_folds([report(auroc=0.42)])
    assert one.mean["auroc"] == 0.42 and one.std["auroc"] == 0.0
    assert "0.6000 ± 0.1000" in ev.aggregate_folds([report(auroc=0.5), report(auroc=0.7)]).to_text()
    with pytest.raises(DataError):
        ev.aggregate_folds([])


def test_compare_accepts_aggregates():
    hi = ev.aggregate_folds([report(auroc=0.9, f1=0.9, auprc=0.9)])
    lo = ev.aggregate_folds([report()])
    assert ev.conclusively_better(hi, lo) == "A"


def test_note_score_examples():
    assert ev.aggregate_note_scores([0.3]) == pytest.approx(0.3, abs=1e-15)
    assert ev.aggregate_note_scores([0.8, 0.4]) == pytest.approx(0.7)
    assert ev.aggregate_note_scores([1.0, 1.0, 1.0]) == 1.0
    with pytest.raises(EmptyChunks):
        ev.aggregate_note_scores([])
    with pytest.raises(DataError):
        ev.aggregate_note_scores([1.2])


@given(st.lists(st.floats(0, 1), min_size=1, max_size=30))
def test_note_score_between_mean_and_max(ps):
    out = ev.aggregate_note_scores(ps)
    assert out == pytest.approx(note_score(ps), abs=1e-12)
    assert np.mean(ps) - 1e-12 <= out <= max(ps) + 1e-12


def test_scores_csv_round_trip():
    text = ev.scores_to_csv(["a", "b"], [0.25, 0.75], [False, True])
    ids, s, y = ev.read_scores_csv(text)
    assert ids == ["a", "b"] and s.tolist() == [0.25, 0.75] and y.tolist() == [False, True]


def test_report_json_round_trip():
    r = ev.evaluate([0.2, 0.9, 0.6], [0, 1, 0], 0.5)
    assert ev.MetricsReport.from_json(r.to_json()) == r
    agg = ev.aggregate_folds([r, r])
    assert ev.FoldAggregate.from_json(agg.to_json()) == agg
