import json

import pytest

from readmit_ta.cli import main
from readmit_ta.evaluation import MetricsReport


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out-dir", str(d), "--n-patients", "80", "--seed", "5"]) == 0
    return d


def inputs(d):
    return ["--events", str(d / "events.csv"), "--stays", str(d / "stays.csv"), "--icd9", str(d / "icd9.csv")]


def test_synth_deterministic(tmp_path, data):
    assert main(["synth", "--out-dir", str(tmp_path), "--n-patients", "80", "--seed", "5"]) == 0
    for name in ("stays", "events", "icd9", "labels"):
        assert (tmp_path / f"{name}.csv").read_bytes() == (data / f"{name}.csv").read_bytes()


def test_unknown_subcommand(capsys):
    assert main(["bogus"]) == 1
    assert "usage" in capsys.readouterr().err


def test_no_subcommand(capsys):
    assert main([]) == 1


def test_missing_input_is_data_error(tmp_path, capsys):
    code = main(["cohort", "--events", "nope.csv", "--stays", "nope.csv", "--out", str(tmp_path / "d.csv")])
    assert code == 2
    assert "not found" in capsys.readouterr().err


def test_kb_validate(tmp_path, capsys):
    assert main(["kb-validate", "--out", str(tmp_path / "kb.json")]) == 0
    assert "17 concepts" in capsys.readouterr().out
    assert main(["kb-validate", "--kb", str(tmp_path / "kb.json")]) == 0
    (tmp_path / "bad.json").write_text('{"concepts": []}')
    assert main(["kb-validate", "--kb", str(tmp_path / "bad.json")]) == 2


def test_full_chain(tmp_path, data, capsys):
    dec = tmp_path / "decisions.csv"
    assert main(["cohort", *inputs(data), "--out", str(dec), "--report", str(tmp_path / "report.txt")]) == 0
    assert dec.read_text().startswith("stay_id,included,failed_rules,label\n")
    assert (tmp_path / "report.csv").exists()
    manifest = json.loads((tmp_path / "decisions.csv.manifest.json").read_text())
    assert manifest["command"] == "cohort" and "sha256" in manifest["inputs"]["events"]

    folds = tmp_path / "folds.csv"
    assert main(["split", "--stays", str(data / "stays.csv"), "--decisions", str(dec), "--out", str(folds)]) == 0

    assert main(["abstract", *inputs(data), "--decisions", str(dec), "--out", str(tmp_path / "abs.jsonl")]) == 0

    encoded = []
    for variant in ("charts_1hot_gradients", "demographics_1hot"):
        out = tmp_path / f"{variant}.jsonl"
        assert main(["encode", *inputs(data), "--decisions", str(dec), "--folds", str(folds), "--fold", "0",
                     "--variant", variant, "--out", str(out)]) == 0
        encoded += ["--encoded", str(out)]
    assert (tmp_path / "charts_1hot_gradients.jsonl.vocab.json").exists()

    model = tmp_path / "model.json"
    assert main(["train", *encoded, "--decisions", str(dec), "--out", str(model), "--eval-every", "20"]) == 0
    assert (tmp_path / "model.log.csv").read_text().startswith("step,lr,val_auprc,checkpointed\n")

    rep = tmp_path / "rep.json"
    assert main(["evaluate", "--scores", str(tmp_path / "model.test_scores.csv"),
                 "--val-scores", str(tmp_path / "model.val_scores.csv"), "--out", str(rep)]) == 0
    MetricsReport.from_json(json.loads(rep.read_text()))
    capsys.readouterr()
    assert main(["compare", str(rep), str(rep)]) == 0
    assert capsys.readouterr().out.strip() == "inconclusive"

    agg = tmp_path / "agg.json"
    assert main(["evaluate", "--aggregate", str(rep), str(rep), "--out", str(agg)]) == 0
    assert "±" in capsys.readouterr().out
    assert main(["evaluate", "--aggregate", str(agg)]) == 2
    assert main(["evaluate"]) == 1


def test_compare_output(tmp_path, capsys):
    a = {"auroc": 0.8, "f1": 0.6, "auprc": 0.4, "precision": 0.3, "recall": 0.3, "threshold": 0.5}
    b = {"auroc": 0.7, "f1": 0.5, "auprc": 0.3, "precision": 0.4, "recall": 0.4, "threshold": 0.5}
    (tmp_path / "a.json").write_text(json.dumps(a))
    (tmp_path / "b.json").write_text(json.dumps(b))
    assert main(["compare", str(tmp_path / "a.json"), str(tmp_path / "b.json")]) == 0
    assert main(["compare", str(tmp_path / "b.json"), str(tmp_path / "a.json")]) == 0
    assert capsys.readouterr().out.split() == ["A", "B"]


def test_cohort_rerun_is_byte_identical(tmp_path, data):
    for name in ("one", "two"):
        assert main(["cohort", *inputs(data), "--out", str(tmp_path / name / "d.csv")]) == 0
    assert (tmp_path / "one" / "d.csv").read_bytes() == (tmp_path / "two" / "d.csv").read_bytes()


def test_cohort_ignores_row_order(tmp_path, data):
    lines = (data / "events.csv").read_text().splitlines(keepends=True)
    (tmp_path / "events.csv").write_text(lines[0] + "".join(reversed(lines[1:])))
    shuffled = ["--events", str(tmp_path / "events.csv"), "--stays", str(data / "stays.csv")]
    assert main(["cohort", *shuffled, "--out", str(tmp_path / "a.csv")]) == 0
    assert main(["cohort", *inputs(data), "--out", str(tmp_path / "b.csv")]) == 0
    assert (tmp_path / "a.csv").read_text() == (tmp_path / "b.csv").read_text()


def test_config_file_and_flag_precedence(tmp_path, data):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"year_window": "rolling", "seed": 3}))
    out = tmp_path / "d.csv"
    assert main(["cohort", *inputs(data), "--out", str(out), "--config", str(cfg)]) == 0
    manifest = json.loads((tmp_path / "d.csv.manifest.json").read_text())
    assert manifest["options"]["year_window"] == "rolling" and manifest["seed"] == 3
    assert main(["cohort", *inputs(data), "--out", str(out), "--config", str(cfg), "--seed", "9"]) == 0
    assert json.loads((tmp_path / "d.csv.manifest.json").read_text())["seed"] == 9
    cfg.write_text("[1, 2]")
    assert main(["cohort", *inputs(data), "--out", str(out), "--config", str(cfg)]) == 2


def test_aggregate_notes(tmp_path, capsys):
    src = tmp_path / "notes.jsonl"
    src.write_text('{"stay_id": "1", "chunk_probs": [0.8, 0.4], "label": 1}\n{"stay_id": "2", "chunk_probs": [0.3]}\n')
    out = tmp_path / "scores.csv"
    assert main(["aggregate-notes", "--input", str(src), "--out", str(out)]) == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "stay_id,score,label"
    assert rows[1].startswith("1,0.7") and rows[2].startswith("2,0.3")
    src.write_text('{"stay_id": "1", "chunk_probs": []}\n')
    assert main(["aggregate-notes", "--input", str(src), "--out", str(out)]) == 2


def test_pipeline_command(tmp_path, data, capsys):
    out = tmp_path / "run"
    assert main(["pipeline", *inputs(data), "--out-dir", str(out), "--k", "3", "--eval-every", "20",
                 "--max-steps", "200"]) == 0
    for name in ("decisions.csv", "folds.csv", "aggregate.json", "aggregate.txt", "fold_0/model.json",
                 "fold_2/report.json", "aggregate.json.manifest.json"):
        assert (out / name).exists(), name
    assert json.loads((out / "aggregate.json").read_text())["k"] == 3
