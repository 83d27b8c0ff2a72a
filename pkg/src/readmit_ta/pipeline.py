"""End-to-end composition: cohort -> folds -> abstraction/encoding -> baseline -> metrics."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Iterable, Sequence

import numpy as np

from . import encoding as enc
from .abstraction import AbstractionOptions, abstract_stay, fill_grid
from .baseline import LinearModel, LogEntry, TrainConfig, predict, train
from .cohort import CALENDAR, CohortDecision, FoldAssignment, apply_rules, split_roles, stratified_folds
from .evaluation import FoldAggregate, MetricsReport, aggregate_folds, evaluate_with_validation
from .kb import KnowledgeBase
from .series import StayRecord, id_sort_key, normalize

log = logging.getLogger(__name__)


def parallel_map(fn: Callable, items: Sequence, threads: int = 1) -> list:
    """Order-preserving map; ``threads`` > 1 fans out over worker processes."""
    if threads <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * threads))))


def _raw_representation(stay: StayRecord, kb: KnowledgeBase, variant: str, options: AbstractionOptions):
    if variant in (enc.CHARTS_1HOT, enc.CHARTS_1HOT_GRADIENTS):
        abs_set = abstract_stay(stay, kb, options)
        return enc.chart_tokens(abs_set, gradients=variant == enc.CHARTS_1HOT_GRADIENTS)
    if variant in enc.GRID_VARIANTS:
        grid = fill_grid(stay, kb, options.printed_weights)
        m = enc.encode_multivariate(grid, kb)
        if variant == enc.CHARTS_INTERPOLATED_GRADIENTS:
            m = np.hstack([m, enc.gradient_matrix(grid, kb, options.gradient_mode)])
        return m.tolist()
    if variant == enc.ICD9_1HOT:
        return [code for code, _ in stay.icd9]
    if variant == enc.ICD9_TEXT:
        return enc.icd9_text(stay.icd9, stay.age_years, stay.gender)
    if variant == enc.DEMOGRAPHICS_1HOT:
        return None
    raise ValueError(f"unknown variant {variant!r}")


class VariantEncoder:
    """Fold-scoped encoder for one variant: ``fit`` on training stays, then ``encode`` any stay."""

    def __init__(self, variant: str, kb: KnowledgeBase, options: AbstractionOptions | None = None,
                 max_len_cap: int | None = enc.DEFAULT_MAX_LENGTH):
        if variant not in enc.VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; choose from {', '.join(enc.VARIANTS)}")
        self.variant = variant
        self.kb = kb
        self.options = options or AbstractionOptions()
        self.max_len_cap = max_len_cap
        self.vocab: enc.Vocabulary | None = None
        self.L: int | None = None
        self.insurance: list[str] = []

    def raw(self, stay: StayRecord):
        return _raw_representation(stay, self.kb, self.variant, self.options)

    def fit(self, stays: Sequence[StayRecord], raws: Sequence | None = None) -> "VariantEncoder":
        if self.variant in enc.SEQUENCE_VARIANTS:
            raws = raws if raws is not None else [self.raw(s) for s in stays]
            self.vocab = enc.Vocabulary.build(raws)
            self.L = enc.max_length((len(r) for r in raws), self.max_len_cap)
        elif self.variant == enc.DEMOGRAPHICS_1HOT:
            self.insurance = enc.insurance_categories(stays)
        return self

    def encode(self, stay: StayRecord, raw=None) -> enc.EncodedFeatures:
        if raw is None and self.variant != enc.DEMOGRAPHICS_1HOT:
            raw = self.raw(stay)
        v = self.variant
        if v in enc.SEQUENCE_VARIANTS:
            if self.vocab is None:
                raise RuntimeError("encoder not fitted")
            return enc.EncodedFeatures(stay.stay_id, v, enc.pad(self.vocab.ids(raw), self.L), len(raw))
        if v in enc.GRID_VARIANTS:
            return enc.EncodedFeatures(stay.stay_id, v, raw, len(raw))
        if v == enc.ICD9_TEXT:
            return enc.EncodedFeatures(stay.stay_id, v, raw, len(raw))
        bits = enc.demographics_one_hot(stay, self.insurance)
        return enc.EncodedFeatures(stay.stay_id, v, bits, len(bits))

    def featurizer(self) -> enc.Featurizer:
        v = self.variant
        if v in enc.SEQUENCE_VARIANTS:
            return enc.Featurizer(v, n_tokens=len(self.vocab))
        if v in enc.GRID_VARIANTS:
            return enc.grid_featurizer(v, self.kb)
        if v == enc.DEMOGRAPHICS_1HOT:
            return enc.Featurizer(v, n_bits=len(enc.AGE_BUCKETS) + len(enc.GENDERS) + len(self.insurance) + 1)
        return enc.Featurizer(v)


@dataclass
class FoldResult:
    fold: int
    report: MetricsReport
    model: LinearModel
    log: list[LogEntry]
    test_ids: list[str]
    test_scores: np.ndarray
    test_labels: np.ndarray
    val_ids: list[str] = field(default_factory=list)
    val_scores: np.ndarray = field(default_factory=lambda: np.zeros(0))
    val_labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))


@dataclass
class PipelineResult:
    decisions: list[CohortDecision]
    folds: FoldAssignment
    fold_results: list[FoldResult]
    aggregate: FoldAggregate


@dataclass(frozen=True)
class PipelineConfig:
    variant: str = enc.CHARTS_1HOT_GRADIENTS
    abstraction: AbstractionOptions = field(default_factory=AbstractionOptions)
    train: TrainConfig = field(default_factory=TrainConfig)
    k: int = 5
    seed: int = 0
    year_window: str = CALENDAR
    with_demographics: bool = True
    max_len_cap: int | None = enc.DEFAULT_MAX_LENGTH
    threads: int = 1


def build_design(stays: Sequence[StayRecord], raws: Sequence, train_idx: Sequence[int], kb: KnowledgeBase,
                 cfg: PipelineConfig) -> tuple[np.ndarray, dict]:
    """Fit encoders on the training rows and return the full feature matrix plus its spec."""
    encoder = VariantEncoder(cfg.variant, kb, cfg.abstraction, cfg.max_len_cap)
    encoder.fit([stays[i] for i in train_idx], [raws[i] for i in train_idx] if raws is not None else None)
    feat = encoder.featurizer()
    raws = raws if raws is not None else [None] * len(stays)
    blocks = [feat.matrix([encoder.encode(s, r) for s, r in zip(stays, raws)])]
    spec = {"variant": cfg.variant, "blocks": [feat.to_json()], "L": encoder.L}
    if cfg.with_demographics and cfg.variant != enc.DEMOGRAPHICS_1HOT:
        demo = VariantEncoder(enc.DEMOGRAPHICS_1HOT, kb).fit([stays[i] for i in train_idx])
        dfeat = demo.featurizer()
        blocks.append(dfeat.matrix([demo.encode(s) for s in stays]))
        spec["blocks"].append(dfeat.to_json())
        spec["insurance"] = demo.insurance
    return np.hstack(blocks), spec


def run_pipeline(raw_stays: Iterable[StayRecord], kb: KnowledgeBase, cfg: PipelineConfig | None = None) -> PipelineResult:
    cfg = cfg or PipelineConfig()
    # fixed row order keeps mini-batches independent of input order
    stays = sorted(parallel_map(normalize, list(raw_stays), cfg.threads), key=lambda s: id_sort_key(s.stay_id))
    decisions = apply_rules(stays, kb, cfg.year_window)
    by_id = {s.stay_id: s for s in stays}
    cohort = [by_id[d.stay_id] for d in decisions if d.included]
    labels = np.array([d.label for d in decisions if d.included], dtype=bool)
    folds = stratified_folds(((s.patient_id, y) for s, y in zip(cohort, labels)), cfg.k, cfg.seed)
    stay_fold = np.array([folds.fold_of(s.patient_id) for s in cohort])
    log.info("cohort: %d stays, %d positive, %d patients", len(cohort), int(labels.sum()), len(folds.folds))

    raws = None
    if cfg.variant != enc.DEMOGRAPHICS_1HOT:
        raws = parallel_map(partial(_raw_representation, kb=kb, variant=cfg.variant, options=cfg.abstraction), cohort, cfg.threads)

    results = []
    for f in range(cfg.k):
        roles = split_roles(f, cfg.k)
        role = np.array([roles[x] for x in stay_fold])
        tr, va, te = (np.flatnonzero(role == r) for r in ("train", "val", "test"))
        X, spec = build_design(cohort, raws, tr, kb, cfg)
        train_cfg = TrainConfig(**{**cfg.train.__dict__, "seed": cfg.seed + f})
        model, history = train(X[tr], labels[tr], X[va], labels[va], train_cfg, feature_spec=spec)
        val_scores, test_scores = predict(model, X[va]), predict(model, X[te])
        report = evaluate_with_validation(test_scores, labels[te], val_scores, labels[va])
        log.info("fold %d: auroc %.4f auprc %.4f f1 %.4f", f, report.auroc, report.auprc, report.f1)
        results.append(FoldResult(
            f, report, model, history,
            [cohort[i].stay_id for i in te], test_scores, labels[te],
            [cohort[i].stay_id for i in va], val_scores, labels[va],
        ))
    return PipelineResult(decisions, folds, results, aggregate_folds([r.report for r in results]))
