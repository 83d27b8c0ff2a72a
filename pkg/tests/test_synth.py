import csv

import pytest

from readmit_ta.cohort import apply_rules
from readmit_ta.series import ingest, normalize
from readmit_ta.synth import SynthConfig, _readmission_probability, generate, synth_generate

from helpers import KB


@pytest.fixture(scope="module")
def small(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    paths = synth_generate(SynthConfig(n_patients=150, seed=4), out)
    return paths


def test_same_seed_byte_identical(tmp_path, small):
    again = synth_generate(SynthConfig(n_patients=150, seed=4), tmp_path)
    for name, path in small.items():
        assert again[name].read_bytes() == path.read_bytes()


def test_different_seed_differs():
    a = generate(SynthConfig(n_patients=20, seed=1))
    b = generate(SynthConfig(n_patients=20, seed=2))
    assert a.events != b.events


@pytest.mark.parametrize("theta", [0.0, 0.5, 1.0])
@pytest.mark.parametrize("rate", [0.1, 0.2, 0.7])
def test_marginal_rate_preserved(theta, rate):
    cfg = SynthConfig(positive_rate=rate, theta=theta)
    p_u = _readmission_probability(cfg, True)
    p_s = _readmission_probability(cfg, False)
    assert 0 <= p_s <= p_u <= 1
    q = cfg.unstable_fraction
    assert q * p_u + (1 - q) * p_s == pytest.approx(rate)
    if theta == 0:
        assert p_u == p_s


def test_cohort_rules_recover_generated_labels(small):
    res = ingest(small["events"], small["stays"], small["icd9"])
    assert res.rejects == []
    stays = [normalize(s) for s in res.stays]
    decisions = {d.stay_id: d for d in apply_rules(stays, KB)}
    with open(small["labels"], newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        d = decisions[r["stay_id"]]
        assert d.included == (r["expected_included"] == "1"), (r, d)
        if d.included:
            assert d.label == (r["label"] == "1")


def test_bad_config():
    with pytest.raises(ValueError):
        SynthConfig(theta=2)
    with pytest.raises(ValueError):
        SynthConfig(positive_rate=0)
