"""Instance tables: CSV ingestion, label cleaning, splitting, z-scoring, loss weights.

Labels are tri-state and stored as int8: 1 positive, 0 negative, -1 missing.

CSV contract: the header lists feature names, then phone-placement labels
prefixed ``pp:``, then activity labels prefixed ``act:``, then ``user_id``.
Label cells are ``""``, ``"0"`` or ``"1"``; feature cells are finite decimals.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
import yaml

from .errors import ParseError, SchemaMismatch, TooFewRows

log = logging.getLogger(__name__)

POS, NEG, MISSING = 1, 0, -1
PP_PREFIX = "pp:"
ACT_PREFIX = "act:"
USER_COLUMN = "user_id"


@dataclass(frozen=True)
class Schema:
    feature_names: tuple[str, ...]
    pp_names: tuple[str, ...]
    act_names: tuple[str, ...]

    def __post_init__(self):
        labels = self.pp_names + self.act_names
        if len(set(labels)) != len(labels):
            raise SchemaMismatch("label names must be unique across phone placement and activity")
        if len(set(self.feature_names)) != len(self.feature_names):
            raise SchemaMismatch("duplicate feature names")

    @property
    def label_names(self) -> tuple[str, ...]:
        return self.pp_names + self.act_names

    def header(self) -> list[str]:
        return (
            list(self.feature_names)
            + [PP_PREFIX + n for n in self.pp_names]
            + [ACT_PREFIX + n for n in self.act_names]
            + [USER_COLUMN]
        )

    @classmethod
    def from_header(cls, header: Sequence[str]) -> "Schema":
        if not header or header[-1] != USER_COLUMN:
            raise SchemaMismatch(f"last column must be {USER_COLUMN!r}")
        feats, pps, acts = [], [], []
        stage = 0
        for name in header[:-1]:
            if name.startswith(PP_PREFIX):
                if stage > 1:
                    raise SchemaMismatch(f"{name!r} appears after activity columns")
                stage = 1
                pps.append(name[len(PP_PREFIX):])
            elif name.startswith(ACT_PREFIX):
                stage = 2
                acts.append(name[len(ACT_PREFIX):])
            else:
                if stage > 0:
                    raise SchemaMismatch(f"feature column {name!r} appears after label columns")
                feats.append(name)
        return cls(tuple(feats), tuple(pps), tuple(acts))


@dataclass(frozen=True)
class LabeledInstance:
    user_id: str
    features: np.ndarray
    pp_labels: np.ndarray
    act_labels: np.ndarray


@dataclass(frozen=True, eq=False)
class InstanceTable:
    """Column-oriented table; ``labels`` holds PP columns then ACT columns."""

    schema: Schema
    features: np.ndarray  # (n, d_x) float64
    labels: np.ndarray  # (n, |PP| + |ACT|) int8
    user_ids: tuple[str, ...]

    def __post_init__(self):
        n = len(self.user_ids)
        if self.features.shape != (n, len(self.schema.feature_names)):
            raise SchemaMismatch(f"features shape {self.features.shape} does not match schema")
        if self.labels.shape != (n, len(self.schema.label_names)):
            raise SchemaMismatch(f"labels shape {self.labels.shape} does not match schema")

    def __len__(self) -> int:
        return len(self.user_ids)

    @property
    def num_pp(self) -> int:
        return len(self.schema.pp_names)

    @property
    def pp_labels(self) -> np.ndarray:
        return self.labels[:, : self.num_pp]

    @property
    def act_labels(self) -> np.ndarray:
        return self.labels[:, self.num_pp:]

    def rows(self) -> Iterator[LabeledInstance]:
        for i in range(len(self)):
            yield LabeledInstance(
                self.user_ids[i], self.features[i], self.pp_labels[i], self.act_labels[i]
            )

    def take(self, idx) -> "InstanceTable":
        idx = np.asarray(idx, dtype=np.int64)
        return InstanceTable(
            self.schema,
            self.features[idx],
            self.labels[idx],
            tuple(self.user_ids[i] for i in idx),
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, InstanceTable):
            return NotImplemented
        return (
            self.schema == other.schema
            and self.user_ids == other.user_ids
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )


# -- CSV I/O ------------------------------------------------------------------


def _parse_label(cell: str, line: int, column: str) -> int:
    if cell == "":
        return MISSING
    if cell == "1":
        return POS
    if cell == "0":
        return NEG
    raise ParseError(line, column, f"label must be '', '0' or '1', got {cell!r}")


def _parse_feature(cell: str, line: int, column: str) -> float:
    try:
        x = float(cell)
    except ValueError:
        raise ParseError(line, column, f"not a decimal number: {cell!r}") from None
    if not math.isfinite(x):
        raise ParseError(line, column, f"non-finite value {cell!r}")
    return x


def load_instances(path, schema: Optional[Schema] = None) -> InstanceTable:
    """Read an instance CSV; if ``schema`` is given the header must match it."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(1, "header", "empty file") from None
        found = Schema.from_header(header)
        if schema is not None and found != schema:
            raise SchemaMismatch(f"{path}: header does not match expected schema")
        d = len(found.feature_names)
        n_lab = len(found.label_names)
        feats, labels, users = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(lineno, "*", f"expected {len(header)} cells, got {len(row)}")
            feats.append([_parse_feature(row[j], lineno, header[j]) for j in range(d)])
            labels.append(
                [_parse_label(row[d + j], lineno, header[d + j]) for j in range(n_lab)]
            )
            user = row[-1]
            if user == "":
                raise ParseError(lineno, USER_COLUMN, "empty user id")
            users.append(user)
    return InstanceTable(
        found,
        np.array(feats, dtype=np.float64).reshape(len(users), d),
        np.array(labels, dtype=np.int8).reshape(len(users), n_lab),
        tuple(users),
    )


def dumps_instances(t: InstanceTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(t.schema.header())
    cell = {POS: "1", NEG: "0", MISSING: ""}
    for i in range(len(t)):
        w.writerow(
            [repr(float(x)) for x in t.features[i]]
            + [cell[int(y)] for y in t.labels[i]]
            + [t.user_ids[i]]
        )
    return buf.getvalue()


def save_instances(t: InstanceTable, path) -> None:
    Path(path).write_text(dumps_instances(t), encoding="utf-8")


# -- label cleaning -------------------------------------------------------------


@dataclass(frozen=True)
class CleaningRules:
    mutually_exclusive_groups: tuple[tuple[str, ...], ...] = ()
    forbidden_cooccurrence: tuple[tuple[str, str], ...] = ()

    def validate(self, schema: Schema) -> None:
        known = set(schema.label_names)
        for group in self.mutually_exclusive_groups:
            for name in group:
                if name not in known:
                    raise SchemaMismatch(f"cleaning rule references unknown label {name!r}")
        for pair in self.forbidden_cooccurrence:
            if len(pair) != 2:
                raise SchemaMismatch(f"forbidden pair must have two labels: {pair!r}")
            for name in pair:
                if name not in known:
                    raise SchemaMismatch(f"cleaning rule references unknown label {name!r}")

    @classmethod
    def phone_placement_exclusive(cls, schema: Schema) -> "CleaningRules":
        """A phone is in one place at a time: all PP labels form one group."""
        return cls(mutually_exclusive_groups=(tuple(schema.pp_names),))

    @classmethod
    def from_dict(cls, d: dict) -> "CleaningRules":
        return cls(
            tuple(tuple(g) for g in d.get("mutually_exclusive_groups") or ()),
            tuple(tuple(p) for p in d.get("forbidden_cooccurrence") or ()),
        )

    @classmethod
    def load(cls, path) -> "CleaningRules":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(yaml.safe_load(fh) or {})


@dataclass
class CleaningReport:
    exclusivity_corrections: dict[str, int] = field(default_factory=dict)
    cooccurrence_corrections: dict[str, int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.exclusivity_corrections.values()) + sum(
            self.cooccurrence_corrections.values()
        )

    def to_dict(self) -> dict:
        return {
            "exclusivity_corrections": dict(self.exclusivity_corrections),
            "cooccurrence_corrections": dict(self.cooccurrence_corrections),
            "total": self.total,
        }


def clean_labels(t: InstanceTable, rules: CleaningRules) -> tuple[InstanceTable, CleaningReport]:
    """Erase unresolvable label conflicts to missing.

    A row with two or more positives inside an exclusive group loses every
    label of that group; a row positive on both members of a forbidden pair
    loses both. Only positives/negatives ever become missing.
    """
    rules.validate(t.schema)
    col = {name: j for j, name in enumerate(t.schema.label_names)}
    labels = t.labels.copy()
    report = CleaningReport()
    for group in rules.mutually_exclusive_groups:
        idx = [col[n] for n in group]
        hit = (labels[:, idx] == POS).sum(axis=1) >= 2
        key = "|".join(group)
        report.exclusivity_corrections[key] = int(hit.sum())
        labels[np.ix_(hit, idx)] = MISSING
    for a, b in rules.forbidden_cooccurrence:
        ia, ib = col[a], col[b]
        hit = (labels[:, ia] == POS) & (labels[:, ib] == POS)
        report.cooccurrence_corrections[f"{a}+{b}"] = int(hit.sum())
        labels[hit, ia] = MISSING
        labels[hit, ib] = MISSING
    return replace(t, labels=labels), report


# -- split --------------------------------------------------------------------


def split_sizes(n: int, ratios: Sequence[float] = (0.6, 0.2, 0.2)) -> tuple[int, int, int]:
    # the small epsilon keeps e.g. 0.6 * 35 from flooring to 20
    n_train = math.floor(ratios[0] * n + 1e-9)
    n_val = math.floor(ratios[1] * n + 1e-9)
    return n_train, n_val, n - n_train - n_val


def split(
    t: InstanceTable, ratios: Sequence[float] = (0.6, 0.2, 0.2), seed: int = 0
) -> tuple[InstanceTable, InstanceTable, InstanceTable]:
    """Seeded shuffle, then contiguous train / validation / test cuts."""
    if len(ratios) != 3 or min(ratios) <= 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three positive numbers summing to 1, got {ratios}")
    n = len(t)
    if n < 3:
        raise TooFewRows(f"need at least 3 rows to split, got {n}")
    n_train, n_val, _ = split_sizes(n, ratios)
    perm = np.random.default_rng(seed).permutation(n)
    return (
        t.take(perm[:n_train]),
        t.take(perm[n_train : n_train + n_val]),
        t.take(perm[n_train + n_val :]),
    )


# -- normalization --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    dropped: tuple[int, ...]
    feature_names: tuple[str, ...]

    @property
    def kept(self) -> np.ndarray:
        return np.setdiff1d(np.arange(len(self.mean)), np.array(self.dropped, dtype=np.int64))

    def to_dict(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "mean": [float(x) for x in self.mean],
            "std": [float(x) for x in self.std],
            "dropped": list(self.dropped),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(
            np.array(d["mean"], dtype=np.float64),
            np.array(d["std"], dtype=np.float64),
            tuple(d["dropped"]),
            tuple(d["feature_names"]),
        )


def fit_normalizer(train: InstanceTable) -> NormStats:
    if len(train) == 0:
        raise ValueError("cannot fit a normalizer on an empty table")
    mean = train.features.mean(axis=0)
    std = train.features.std(axis=0)
    # constant columns can leave round-off residue instead of an exact zero
    scale = np.maximum(1.0, np.abs(mean))
    dropped = tuple(int(j) for j in np.flatnonzero(std <= 1e-12 * scale))
    return NormStats(mean, std, dropped, train.schema.feature_names)


def apply_normalizer(t: InstanceTable, stats: NormStats) -> InstanceTable:
    if t.schema.feature_names != stats.feature_names:
        raise SchemaMismatch("table features differ from the normalizer's")
    kept = stats.kept
    z = (t.features[:, kept] - stats.mean[kept]) / stats.std[kept]
    schema = replace(t.schema, feature_names=tuple(t.schema.feature_names[j] for j in kept))
    return InstanceTable(schema, z, t.labels.copy(), t.user_ids)


# -- loss weights ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LossWeights:
    """Per-class weights so positives and negatives contribute equal mass."""

    pos_weight: np.ndarray
    neg_weight: np.ndarray
    label_names: tuple[str, ...] = ()

    @property
    def active(self) -> np.ndarray:
        """Classes with both positives and negatives in train."""
        return (self.pos_weight > 0) & (self.neg_weight > 0)

    def instance_weights(self, targets: np.ndarray) -> np.ndarray:
        """Expand to the (n, C) matrix: pos/neg weight by target, 0 when missing."""
        return np.where(
            targets == POS, self.pos_weight, np.where(targets == NEG, self.neg_weight, 0.0)
        )

    def to_dict(self) -> dict:
        return {
            "label_names": list(self.label_names),
            "pos_weight": [float(x) for x in self.pos_weight],
            "neg_weight": [float(x) for x in self.neg_weight],
            "active": [bool(x) for x in self.active],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LossWeights":
        return cls(
            np.array(d["pos_weight"], dtype=np.float64),
            np.array(d["neg_weight"], dtype=np.float64),
            tuple(d["label_names"]),
        )


def compute_loss_weights(train: InstanceTable) -> LossWeights:
    """pos = N_c / (2 N_c+), neg = N_c / (2 N_c-) over non-missing entries.

    Classes lacking positives or negatives get both weights 0 and are
    reported as inactive.
    """
    if len(train) == 0:
        raise ValueError("cannot compute loss weights on an empty table")
    n_pos = (train.labels == POS).sum(axis=0).astype(np.float64)
    n_neg = (train.labels == NEG).sum(axis=0).astype(np.float64)
    n = n_pos + n_neg
    ok = (n_pos > 0) & (n_neg > 0)
    pos = np.zeros(len(n))
    neg = np.zeros(len(n))
    pos[ok] = n[ok] / (2.0 * n_pos[ok])
    neg[ok] = n[ok] / (2.0 * n_neg[ok])
    for j in np.flatnonzero(~ok):
        log.warning(
            "label %r has no %s in train; zero-weighted and excluded from metrics",
            train.schema.label_names[j],
            "positives" if n_pos[j] == 0 else "negatives",
        )
    return LossWeights(pos, neg, train.schema.label_names)
