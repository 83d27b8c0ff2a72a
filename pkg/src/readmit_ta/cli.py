"""``readmit-ta`` command line.

Exit codes: 0 success, 1 usage error, 2 data error. Every output file gets a
``<output>.manifest.json`` alongside it recording the command, resolved
options and input checksums.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import encoding as enc
from .abstraction import SIMPLE, THRESHOLDED, AbstractionOptions, abstract_stay
from .baseline import TrainConfig, log_to_csv, predict, train
from .cohort import (CALENDAR, ROLLING, FoldAssignment, apply_rules, cohort_report, decisions_from_csv,
                     decisions_to_csv, split_roles, stratified_folds)
from .errors import DataError
from .evaluation import (FoldAggregate, aggregate_folds, aggregate_note_scores, conclusively_better, evaluate,
                         best_threshold, load_report, read_scores_csv, scores_to_csv)
from .kb import builtin_readmission_kb, dump_kb, load_kb
from .pipeline import PipelineConfig, VariantEncoder, parallel_map, run_pipeline
from .series import ingest, normalize, write_stays_jsonl
from .synth import SynthConfig, synth_generate

log = logging.getLogger("readmit_ta")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- helpers --------------------------------------------------------------------

def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def _write_json(path, obj) -> Path:
    return _write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _manifest(args, outputs: list[Path], extra: dict | None = None) -> None:
    inputs = {}
    for key in ("events", "stays", "icd9", "kb", "decisions", "folds", "scores", "val_scores", "input", "model"):
        val = getattr(args, key, None)
        if val:
            inputs[key] = {"path": str(val), "sha256": _sha256(Path(val))}
    for i, p in enumerate(getattr(args, "encoded", None) or []):
        inputs[f"encoded[{i}]"] = {"path": str(p), "sha256": _sha256(Path(p))}
    options = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config") and _jsonable(v)}
    doc = {
        "command": args.command,
        "version": __version__,
        "seed": args.seed,
        "options": options,
        "inputs": inputs,
        "outputs": [str(p) for p in outputs],
    }
    if extra:
        doc.update(extra)
    for p in outputs:
        _write_json(Path(f"{p}.manifest.json"), doc)


def _jsonable(v) -> bool:
    try:
        json.dumps(v)
        return True
    except TypeError:
        return False


def _require(*paths) -> None:
    for p in paths:
        if p is not None and not Path(p).exists():
            raise DataError(f"input file not found: {p}")


def _kb(args):
    if getattr(args, "kb", None):
        _require(args.kb)
        return load_kb(Path(args.kb))
    return builtin_readmission_kb()


def _load_stays(args):
    _require(args.events, args.stays, getattr(args, "icd9", None))
    result = ingest(args.events, args.stays, getattr(args, "icd9", None))
    if result.rejects:
        print(f"warning: {len(result.rejects)} rejected row(s); first at {result.rejects[0]}", file=sys.stderr)
    return parallel_map(normalize, result.stays, args.threads), result


def _abstraction_options(args) -> AbstractionOptions:
    return AbstractionOptions(
        gradient_mode=args.gradient_mode,
        use_t_stable_as_max_gap=args.t_stable_gap,
        interpolate=args.interpolate,
        printed_weights=args.printed_weights,
    )


def _train_config(args) -> TrainConfig:
    return TrainConfig(batch_size=args.batch_size, lr=args.lr, lr_decay=args.lr_decay, eval_every=args.eval_every,
                       patience=args.patience, seed=args.seed, class_weighting=not args.no_class_weighting,
                       optimizer=args.optimizer, max_steps=args.max_steps)


def _read(path) -> str:
    _require(path)
    return Path(path).read_text(encoding="utf-8")


def _cohort_stays(stays, decisions):
    by_id = {s.stay_id: s for s in stays}
    missing = [d.stay_id for d in decisions if d.included and d.stay_id not in by_id]
    if missing:
        raise DataError(f"decisions reference unknown stay {missing[0]}")
    return [(by_id[d.stay_id], d.label) for d in decisions if d.included]


# --- subcommands ----------------------------------------------------------------

def cmd_kb_validate(args) -> int:
    kb = _kb(args)
    labs, charts = len(kb.of_kind("lab")), len(kb.of_kind("chart"))
    print(f"ok: {len(kb)} concepts ({labs} lab, {charts} chart), version {kb.version}")
    if args.out:
        out = _write_text(args.out, dump_kb(kb))
        _manifest(args, [out])
    return EXIT_OK


def cmd_ingest(args) -> int:
    stays, result = _load_stays(args)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_stays_jsonl(stays, out)
    outputs = [out]
    if args.rejects:
        lines = ["source,line,reason"] + [f'{r.source},{r.line},"{r.reason}"' for r in result.rejects]
        outputs.append(_write_text(args.rejects, "\n".join(lines) + "\n"))
    _manifest(args, outputs, {"rows_read": result.rows_read, "rejects": len(result.rejects)})
    print(f"{len(stays)} stays, {sum(len(s.samples) for s in stays)} samples, {len(result.rejects)} rejects")
    return EXIT_OK


def cmd_cohort(args) -> int:
    kb = _kb(args)
    stays, _ = _load_stays(args)
    decisions = apply_rules(stays, kb, args.year_window)
    outputs = [_write_text(args.out, decisions_to_csv(decisions))]
    report = cohort_report(decisions, {s.stay_id: s for s in stays})
    if args.report:
        outputs.append(_write_text(args.report, report.to_text()))
        outputs.append(_write_text(Path(args.report).with_suffix(".csv"), report.to_csv()))
    _manifest(args, outputs)
    print(report.to_text(), end="")
    return EXIT_OK


def cmd_split(args) -> int:
    _require(args.stays)
    decisions = decisions_from_csv(_read(args.decisions))
    with open(args.stays, newline="", encoding="utf-8") as fh:
        patient = {r["stay_id"].strip(): r["patient_id"].strip() for r in csv.DictReader(fh)}
    pairs = []
    for d in decisions:
        if d.included:
            if d.stay_id not in patient:
                raise DataError(f"decisions reference unknown stay {d.stay_id}")
            pairs.append((patient[d.stay_id], d.label))
    folds = stratified_folds(pairs, args.k, args.seed)
    out = _write_text(args.out, folds.to_csv())
    _manifest(args, [out])
    return EXIT_OK


def cmd_abstract(args) -> int:
    kb = _kb(args)
    stays, _ = _load_stays(args)
    if args.decisions:
        keep = {d.stay_id for d in decisions_from_csv(_read(args.decisions)) if d.included}
        stays = [s for s in stays if s.stay_id in keep]
    options = _abstraction_options(args)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        for s in stays:
            fh.write(json.dumps(abstract_stay(s, kb, options).to_json(), sort_keys=True) + "\n")
    _manifest(args, [out])
    return EXIT_OK


def cmd_encode(args) -> int:
    kb = _kb(args)
    stays, _ = _load_stays(args)
    decisions = decisions_from_csv(_read(args.decisions))
    folds = FoldAssignment.from_csv(_read(args.folds))
    roles = split_roles(args.fold, folds.k)
    cohort = _cohort_stays(stays, decisions)
    role_of = {s.stay_id: roles[folds.fold_of(s.patient_id)] for s, _ in cohort}
    encoder = VariantEncoder(args.variant, kb, _abstraction_options(args), args.max_len)
    encoder.fit([s for s, _ in cohort if role_of[s.stay_id] == "train"])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        for s, _ in cohort:
            rec = encoder.encode(s).to_json()
            rec["split"] = role_of[s.stay_id]
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    outputs = [out, _write_json(f"{out}.features.json", encoder.featurizer().to_json())]
    if encoder.vocab is not None:
        outputs.append(_write_text(args.vocab_out or f"{out}.vocab.json", encoder.vocab.dumps()))
    _manifest(args, outputs, {"L": encoder.L})
    return EXIT_OK


def _design(encoded_paths):
    """Stack feature blocks from encoded files, aligned by stay id."""
    blocks, specs, ids, split = [], [], None, None
    for path in encoded_paths:
        _require(path, f"{path}.features.json")
        records = [json.loads(line) for line in _read(path).splitlines() if line.strip()]
        spec = json.loads(_read(f"{path}.features.json"))
        spec.pop("width", None)
        feat = enc.Featurizer(**spec)
        these = [r["stay_id"] for r in records]
        if ids is None:
            ids, split = these, [r.get("split", "") for r in records]
        elif these != ids:
            raise DataError(f"{path}: stays differ from {encoded_paths[0]}")
        blocks.append(feat.matrix([enc.EncodedFeatures.from_json(r) for r in records]))
        specs.append(feat.to_json())
    return ids, np.array(split), np.hstack(blocks), specs


def cmd_train(args) -> int:
    ids, split, X, specs = _design(args.encoded)
    label_of = {d.stay_id: d.label for d in decisions_from_csv(_read(args.decisions)) if d.included}
    missing = [i for i in ids if i not in label_of]
    if missing:
        raise DataError(f"no label for stay {missing[0]} in {args.decisions}")
    y = np.array([label_of[i] for i in ids], dtype=bool)
    tr, va, te = (np.flatnonzero(split == r) for r in ("train", "val", "test"))
    model, history = train(X[tr], y[tr], X[va], y[va], _train_config(args), feature_spec={"blocks": specs})
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    stem = out.with_suffix("")
    outputs = [out, _write_text(args.log or f"{stem}.log.csv", log_to_csv(history))]
    for name, idx in (("val", va), ("test", te)):
        scores = predict(model, X[idx])
        outputs.append(_write_text(f"{stem}.{name}_scores.csv", scores_to_csv([ids[i] for i in idx], scores, y[idx])))
    _manifest(args, outputs)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if args.aggregate:
        reports = []
        for p in args.aggregate:
            _require(p)
            r = load_report(p)
            if isinstance(r, FoldAggregate):
                raise DataError(f"{p} is already an aggregate")
            reports.append(r)
        agg = aggregate_folds(reports)
        outputs = [_write_json(args.out, agg.to_json())] if args.out else []
        print(agg.to_text(args.name), end="")
        if outputs:
            _manifest(args, outputs)
        return EXIT_OK
    if not args.scores:
        raise UsageError("evaluate needs --scores (with --val-scores or --threshold) or --aggregate")
    _, s, y = read_scores_csv(_read(args.scores))
    if args.threshold is not None:
        threshold = args.threshold
    elif args.val_scores:
        _, vs, vy = read_scores_csv(_read(args.val_scores))
        threshold = best_threshold(vs, vy)
    else:
        raise UsageError("evaluate needs --val-scores or --threshold to fix the decision threshold")
    report = evaluate(s, y, threshold)
    print(json.dumps(report.to_json(), indent=2, sort_keys=True))
    if args.out:
        _manifest(args, [_write_json(args.out, report.to_json())])
    return EXIT_OK


def cmd_compare(args) -> int:
    _require(args.report_a, args.report_b)
    print(conclusively_better(load_report(args.report_a), load_report(args.report_b)))
    return EXIT_OK


def cmd_aggregate_notes(args) -> int:
    rows = []
    for n, line in enumerate(_read(args.input).splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            score = aggregate_note_scores(rec["chunk_probs"])
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DataError(f"{args.input}:{n}: {exc}") from None
        except DataError as exc:
            raise DataError(f"{args.input}:{n}: {exc}") from None
        label = rec.get("label")
        rows.append((str(rec["stay_id"]), score, "" if label is None else int(bool(label))))
    lines = ["stay_id,score,label"] + [f"{i},{s!r},{lab}" for i, s, lab in rows]
    out = _write_text(args.out, "\n".join(lines) + "\n")
    _manifest(args, [out])
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = SynthConfig(n_patients=args.n_patients, positive_rate=args.positive_rate, theta=args.theta, seed=args.seed)
    paths = synth_generate(cfg, args.out_dir)
    _manifest(args, list(paths.values()))
    print(f"wrote {', '.join(str(p) for p in paths.values())}")
    return EXIT_OK


def cmd_pipeline(args) -> int:
    kb = _kb(args)
    stays, _ = _load_stays(args)
    cfg = PipelineConfig(variant=args.variant, abstraction=_abstraction_options(args), train=_train_config(args),
                         k=args.k, seed=args.seed, year_window=args.year_window,
                         with_demographics=not args.no_demographics, max_len_cap=args.max_len, threads=args.threads)
    result = run_pipeline(stays, kb, cfg)
    out = Path(args.out_dir)
    outputs = [_write_text(out / "decisions.csv", decisions_to_csv(result.decisions)),
               _write_text(out / "folds.csv", result.folds.to_csv())]
    report = cohort_report(result.decisions, {s.stay_id: s for s in stays})
    outputs.append(_write_text(out / "cohort_report.txt", report.to_text()))
    outputs.append(_write_text(out / "cohort_report.csv", report.to_csv()))
    for fr in result.fold_results:
        d = out / f"fold_{fr.fold}"
        d.mkdir(parents=True, exist_ok=True)
        fr.model.save(d / "model.json")
        outputs.append(d / "model.json")
        outputs.append(_write_text(d / "log.csv", log_to_csv(fr.log)))
        outputs.append(_write_text(d / "val_scores.csv", scores_to_csv(fr.val_ids, fr.val_scores, fr.val_labels)))
        outputs.append(_write_text(d / "test_scores.csv", scores_to_csv(fr.test_ids, fr.test_scores, fr.test_labels)))
        outputs.append(_write_json(d / "report.json", fr.report.to_json()))
    outputs.append(_write_json(out / "aggregate.json", result.aggregate.to_json()))
    text = result.aggregate.to_text(args.variant)
    outputs.append(_write_text(out / "aggregate.txt", text))
    _manifest(args, outputs)
    print(report.to_text() + "\n" + text, end="")
    return EXIT_OK


# --- parser ---------------------------------------------------------------------

def _add_stay_inputs(p, icd9=True):
    p.add_argument("--events", required=True, help="events.csv")
    p.add_argument("--stays", required=True, help="stays.csv")
    if icd9:
        p.add_argument("--icd9", help="icd9.csv")


def _add_abstraction_flags(p):
    p.add_argument("--gradient-mode", choices=(SIMPLE, THRESHOLDED), default=SIMPLE)
    p.add_argument("--interpolate", action="store_true", help="fill a multivariate grid before abstraction")
    p.add_argument("--t-stable-gap", action="store_true", help="use each concept's tStable as the interval max gap")
    p.add_argument("--printed-weights", action="store_true", help="swap the interpolation weights")


def _add_train_flags(p):
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lr-decay", type=float, default=0.97)
    p.add_argument("--eval-every", type=int, default=200)
    p.add_argument("--patience", type=int, default=7)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--max-steps", type=int, default=200_000)
    p.add_argument("--no-class-weighting", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global")
    g.add_argument("--seed", type=int, default=0, help="seed for every stochastic step")
    g.add_argument("--config", help="JSON file of option defaults (flags win)")
    g.add_argument("--threads", type=int, default=1, help="worker processes for per-stay work")
    g.add_argument("--verbose", "-v", action="count", default=0)

    parser = _Parser(prog="readmit-ta", description="Temporal abstraction and readmission evaluation pipeline.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("kb-validate", parents=[common], help="validate a knowledge base file")
    p.add_argument("--kb", help="KB JSON (default: built-in readmission KB)")
    p.add_argument("--out", help="write the validated KB here")
    p.set_defaults(func=cmd_kb_validate)

    p = sub.add_parser("ingest", parents=[common], help="CSV tables -> normalized stays JSONL")
    _add_stay_inputs(p)
    p.add_argument("--out", required=True)
    p.add_argument("--rejects", help="CSV report of rejected rows")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("cohort", parents=[common], help="apply cohort rules and label readmissions")
    _add_stay_inputs(p)
    p.add_argument("--kb")
    p.add_argument("--out", required=True, help="decisions CSV")
    p.add_argument("--report", help="cohort table (text; a .csv twin is written too)")
    p.add_argument("--year-window", choices=(CALENDAR, ROLLING), default=CALENDAR)
    p.set_defaults(func=cmd_cohort)

    p = sub.add_parser("split", parents=[common], help="stratified patient-level folds")
    p.add_argument("--stays", required=True)
    p.add_argument("--decisions", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("abstract", parents=[common], help="state/gradient abstractions as JSONL")
    _add_stay_inputs(p)
    p.add_argument("--kb")
    p.add_argument("--decisions", help="restrict to included stays")
    p.add_argument("--out", required=True)
    _add_abstraction_flags(p)
    p.set_defaults(func=cmd_abstract)

    p = sub.add_parser("encode", parents=[common], help="encode cohort stays for one fold")
    _add_stay_inputs(p)
    p.add_argument("--kb")
    p.add_argument("--decisions", required=True)
    p.add_argument("--folds", required=True)
    p.add_argument("--fold", type=int, required=True, help="test fold; the next fold validates")
    p.add_argument("--variant", choices=enc.VARIANTS, required=True)
    p.add_argument("--max-len", type=int, default=enc.DEFAULT_MAX_LENGTH)
    p.add_argument("--out", required=True)
    p.add_argument("--vocab-out")
    _add_abstraction_flags(p)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("train", parents=[common], help="train the logistic baseline")
    p.add_argument("--encoded", action="append", required=True, help="encoded JSONL (repeat to concatenate)")
    p.add_argument("--decisions", required=True)
    p.add_argument("--out", required=True, help="model JSON")
    p.add_argument("--log", help="training log CSV")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="metrics from scores, or aggregate fold reports")
    p.add_argument("--scores", help="test scores CSV (stay_id,score,label)")
    p.add_argument("--val-scores", help="validation scores used to pick the threshold")
    p.add_argument("--threshold", type=float)
    p.add_argument("--aggregate", nargs="+", metavar="REPORT", help="fold report JSONs to aggregate")
    p.add_argument("--name", default="model")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", parents=[common], help="3-of-5 metric comparison of two reports")
    p.add_argument("report_a")
    p.add_argument("report_b")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("aggregate-notes", parents=[common], help="combine note-chunk probabilities")
    p.add_argument("--input", required=True, help='JSONL {"stay_id", "chunk_probs": [...]}')
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_aggregate_notes)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic cohort")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-patients", type=int, default=2000)
    p.add_argument("--positive-rate", type=float, default=0.2)
    p.add_argument("--theta", type=float, default=1.0, help="signal strength in [0, 1]")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pipeline", parents=[common], help="cohort -> folds -> encode -> train -> evaluate")
    _add_stay_inputs(p)
    p.add_argument("--kb")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--variant", choices=enc.VARIANTS, default=enc.CHARTS_1HOT_GRADIENTS)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--year-window", choices=(CALENDAR, ROLLING), default=CALENDAR)
    p.add_argument("--max-len", type=int, default=enc.DEFAULT_MAX_LENGTH)
    p.add_argument("--no-demographics", action="store_true")
    _add_abstraction_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_pipeline)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    _require(args.config)
    with open(args.config, encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise DataError(f"{args.config}: config must be a JSON object")
    defaults = {k.replace("-", "_"): v for k, v in cfg.items()}
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    subparsers.choices[args.command].set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    if not args.command:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ValueError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
