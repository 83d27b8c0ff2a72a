"""Model-ready encodings of abstractions, diagnoses and demographics.

Variants:

* ``charts_1hot`` / ``charts_1hot_gradients``: abstraction points flattened
  into one time-ordered token-id sequence, right-padded to ``L``.
* ``charts_interpolated`` / ``charts_interpolated_gradients``: the filled grid
  as a T x D matrix of state ordinals (plus a T x D gradient-ordinal block).
* ``icd9_1hot``: diagnosis code ids padded to ``L``.
* ``icd9_text``: demographic sentence + diagnosis descriptions.
* ``demographics_1hot``: age bucket, gender and insurance one-hot groups.
"""
from __future__ import annotations

import json
import re
import zlib
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .abstraction import GRADIENT_LABELS, STATE, AbstractionSet, GridSeries, _gradient_codes
from .errors import AgeBelowAdult, DataError
from .kb import KnowledgeBase
from .series import StayRecord

CHARTS_1HOT = "charts_1hot"
CHARTS_INTERPOLATED = "charts_interpolated"
CHARTS_1HOT_GRADIENTS = "charts_1hot_gradients"
CHARTS_INTERPOLATED_GRADIENTS = "charts_interpolated_gradients"
ICD9_1HOT = "icd9_1hot"
ICD9_TEXT = "icd9_text"
DEMOGRAPHICS_1HOT = "demographics_1hot"
VARIANTS = (CHARTS_1HOT, CHARTS_INTERPOLATED, CHARTS_1HOT_GRADIENTS, CHARTS_INTERPOLATED_GRADIENTS,
            ICD9_1HOT, ICD9_TEXT, DEMOGRAPHICS_1HOT)
SEQUENCE_VARIANTS = (CHARTS_1HOT, CHARTS_1HOT_GRADIENTS, ICD9_1HOT)
GRID_VARIANTS = (CHARTS_INTERPOLATED, CHARTS_INTERPOLATED_GRADIENTS)

PAD = "<pad>"
UNK = "<unk>"
PAD_ID = 0
UNK_ID = 1
MISSING = -1

ICD9_PREFIX = "Procedures patient went through and doctor's diagnoses:"
AGE_BUCKETS = ("18-65", ">65")
GENDERS = ("male", "female")
OTHER_INSURANCE = "<other>"

DEFAULT_MAX_LENGTH = 4096


class Vocabulary:
    """Token <-> id mapping with ``<pad>`` at 0 and ``<unk>`` at 1."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tokens[:2] != [PAD, UNK]:
            raise DataError("vocabulary must start with <pad>, <unk>")
        if len(set(tokens)) != len(tokens):
            raise DataError("vocabulary tokens must be unique")
        self.tokens = tokens
        self.index = {tok: i for i, tok in enumerate(tokens)}

    @classmethod
    def build(cls, sequences: Iterable[Iterable[str]]) -> "Vocabulary":
        """Vocabulary of every token seen; sorted so the result ignores input order."""
        seen = set()
        for seq in sequences:
            seen.update(seq)
        seen -= {PAD, UNK}
        return cls([PAD, UNK, *sorted(seen)])

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def id(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def ids(self, tokens: Iterable[str]) -> list[int]:
        return [self.index.get(t, UNK_ID) for t in tokens]

    def dumps(self) -> str:
        return json.dumps(self.tokens, ensure_ascii=False) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Vocabulary":
        return cls(json.loads(text))


@dataclass
class EncodedFeatures:
    stay_id: str
    variant: str
    payload: object  # list[int] | list[list[int]] | str
    length: int  # unpadded length (sequence variants) or number of time rows

    def to_json(self) -> dict:
        return {"stay_id": self.stay_id, "variant": self.variant, "payload": self.payload, "length": self.length}

    @classmethod
    def from_json(cls, d: dict) -> "EncodedFeatures":
        return cls(d["stay_id"], d["variant"], d["payload"], d["length"])


def point_token(p) -> str:
    if p.kind == STATE:
        return f"{p.concept_id}:{p.label}"
    return f"{p.concept_id}:trend:{p.label}"


def chart_tokens(abs_set: AbstractionSet, gradients: bool = False) -> list[str]:
    """Tokens in (t, concept_id) order; a state precedes its same-time gradient."""
    pts = [p for p in abs_set.points if gradients or p.kind == STATE]
    pts.sort(key=lambda p: (p.t, p.concept_id, p.kind != STATE))
    return [point_token(p) for p in pts]


def kb_chart_tokens(kb: KnowledgeBase, gradients: bool = False) -> list[str]:
    toks = [f"{c.concept_id}:{lab}" for c in kb for lab in c.state_labels]
    if gradients:
        toks += [f"{c.concept_id}:trend:{lab}" for c in kb for lab in GRADIENT_LABELS]
    return toks


def pad(ids: Sequence[int], length: int) -> list[int]:
    ids = list(ids[:length])
    return ids + [PAD_ID] * (length - len(ids))


def max_length(lengths: Iterable[int], cap: int | None = DEFAULT_MAX_LENGTH) -> int:
    """Longest training length, optionally capped; at least 1."""
    L = max(lengths, default=1)
    if cap is not None:
        L = min(L, cap)
    return max(L, 1)


def flatten_one_hot(abs_set: AbstractionSet, vocab: Vocabulary, L: int, gradients: bool = False) -> list[int]:
    return pad(vocab.ids(chart_tokens(abs_set, gradients)), L)


def encode_multivariate(grid: GridSeries, kb: KnowledgeBase) -> np.ndarray:
    """T x D matrix of state ordinals; NaN cells become :data:`MISSING`."""
    out = np.full(grid.values.shape, MISSING, dtype=np.int64)
    for j, cid in enumerate(grid.concept_ids):
        col = grid.values[:, j]
        known = ~np.isnan(col)
        if known.any():
            out[known, j] = kb[cid].state_indices(col[known])
    return out


def gradient_matrix(grid: GridSeries, kb: KnowledgeBase, mode: str = "simple") -> np.ndarray:
    """T x D gradient ordinals (Decreasing=0, Stable=1, Increasing=2); first row and empty columns MISSING."""
    out = np.full(grid.values.shape, MISSING, dtype=np.int64)
    for j, cid in enumerate(grid.concept_ids):
        col = grid.values[:, j]
        if len(col) > 1 and not np.isnan(col).any():
            out[1:, j] = _gradient_codes(col, mode, kb[cid].sig_delta) + 1
    return out


def age_bucket(age_years: int) -> str:
    if age_years < 18:
        raise AgeBelowAdult(f"age {age_years} < 18")
    return AGE_BUCKETS[0] if age_years <= 65 else AGE_BUCKETS[1]


def insurance_categories(stays: Iterable[StayRecord]) -> list[str]:
    return sorted({s.insurance for s in stays if s.insurance})


def demographics_one_hot(stay: StayRecord, insurance_vocab: Sequence[str] = ()) -> list[int]:
    """Concatenated one-hot groups: age bucket | gender | insurance (+ other/unknown slot)."""
    age = [int(age_bucket(stay.age_years) == b) for b in AGE_BUCKETS]
    gender = [int(stay.gender == g) for g in GENDERS]
    ins = [int(stay.insurance == c) for c in insurance_vocab]
    ins.append(int(not any(ins)))
    return age + gender + ins


def icd9_one_hot(codes: Sequence[str], vocab: Vocabulary, L: int) -> list[int]:
    return pad(vocab.ids(codes), L)


def demographic_sentence(age_years: int, gender: str) -> str:
    return f"Patient is a {age_years}-year-old {gender}."


def icd9_text(entries: Sequence[tuple[str, str]], age_years: int, gender: str) -> str:
    text = f"{demographic_sentence(age_years, gender)} {ICD9_PREFIX}"
    descriptions = [desc for _, desc in entries]
    if descriptions:
        text += " " + ", ".join(descriptions)
    return text


# --- fixed-width numeric views for linear models -----------------------------

TEXT_BUCKETS = 512
_WORD = re.compile(r"[a-z0-9]+")


@dataclass(frozen=True)
class Featurizer:
    """Maps :class:`EncodedFeatures` of one variant to fixed-width float rows.

    Token sequences become normalised token histograms (multi-hot for ICD-9),
    ordinal grids become per-column level frequencies plus a missing flag, and
    text becomes a hashed bag of words.
    """
    variant: str
    n_tokens: int = 0  # vocabulary size for sequence variants
    n_columns: int = 0  # grid columns
    n_levels: int = 0  # max ordinal + 1 for grid variants
    n_bits: int = 0  # demographics width

    @property
    def width(self) -> int:
        if self.variant in SEQUENCE_VARIANTS:
            return self.n_tokens
        if self.variant in GRID_VARIANTS:
            return self.n_columns * (self.n_levels + 1)
        if self.variant == ICD9_TEXT:
            return TEXT_BUCKETS
        return self.n_bits

    def row(self, enc: EncodedFeatures) -> np.ndarray:
        if enc.variant != self.variant:
            raise DataError(f"featurizer for {self.variant} got {enc.variant}")
        out = np.zeros(self.width)
        if self.variant in SEQUENCE_VARIANTS:
            ids = np.asarray(enc.payload, dtype=np.int64)
            ids = ids[ids != PAD_ID]
            if self.variant == ICD9_1HOT:
                out[np.unique(ids)] = 1.0
            elif len(ids):
                out += np.bincount(ids, minlength=self.width)[: self.width] / len(ids)
        elif self.variant in GRID_VARIANTS:
            m = np.asarray(enc.payload, dtype=np.int64).reshape(-1, self.n_columns)
            if len(m):
                block = self.n_levels + 1
                for j in range(self.n_columns):
                    col = m[:, j]
                    counts = np.bincount(np.where(col == MISSING, self.n_levels, col), minlength=block)
                    out[j * block:(j + 1) * block] = counts / len(col)
        elif self.variant == ICD9_TEXT:
            for word in _WORD.findall(str(enc.payload).lower()):
                out[zlib.crc32(word.encode()) % TEXT_BUCKETS] = 1.0
        else:
            out[:] = np.asarray(enc.payload, dtype=float)
        return out

    def matrix(self, encoded: Sequence[EncodedFeatures]) -> np.ndarray:
        if not encoded:
            return np.zeros((0, self.width))
        return np.vstack([self.row(e) for e in encoded])

    def to_json(self) -> dict:
        return {"variant": self.variant, "n_tokens": self.n_tokens, "n_columns": self.n_columns,
                "n_levels": self.n_levels, "n_bits": self.n_bits, "width": self.width}


def grid_featurizer(variant: str, kb: KnowledgeBase) -> Featurizer:
    n_levels = max(max(c.n_states for c in kb), len(GRADIENT_LABELS))
    cols = len(kb) * (2 if variant == CHARTS_INTERPOLATED_GRADIENTS else 1)
    return Featurizer(variant, n_columns=cols, n_levels=n_levels)


def write_jsonl(records: Iterable, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")


def read_encoded_jsonl(path) -> list[EncodedFeatures]:
    with open(path, encoding="utf-8") as fh:
        return [EncodedFeatures.from_json(json.loads(line)) for line in fh if line.strip()]
