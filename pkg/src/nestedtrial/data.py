"""Nested-trial cohort data with a two-stage (sub-sampling) measurement design.

Each row is a trial-eligible individual. ``s`` marks randomization, ``d``
marks second-stage measurement of the expensive covariates ``x2``. The
design forces a monotone missingness pattern which is validated on
construction:

* ``s = 1`` implies ``d = 1``;
* ``d = 0`` implies every ``x2`` entry is missing, ``d = 1`` implies none is;
* ``a`` and ``y`` are observed exactly when ``s = 1``;
* ``x1`` is never missing.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    ColumnTypeError,
    ConfigError,
    InfeasibleDesign,
    MissingColumn,
    PatternViolation,
    PreconditionError,
)

MISSING_TOKENS = ("", "NA")


@dataclass(frozen=True)
class ColumnSpec:
    """Mapping from CSV column names to dataset roles."""

    s: str
    d: str
    a: str
    y: str
    x1: tuple[str, ...]
    x2: tuple[str, ...] = ()
    id: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "x1", tuple(self.x1))
        object.__setattr__(self, "x2", tuple(self.x2))
        if not self.x1:
            raise ConfigError("column spec needs at least one x1 column")
        names = self.all_columns()
        dupes = {n for n in names if names.count(n) > 1}
        if dupes:
            raise ConfigError(f"columns mapped to more than one role: {sorted(dupes)}")

    def all_columns(self) -> list[str]:
        cols = [self.s, self.d, self.a, self.y, *self.x1, *self.x2]
        if self.id is not None:
            cols.insert(0, self.id)
        return cols

    @classmethod
    def from_dict(cls, obj: Mapping) -> "ColumnSpec":
        try:
            return cls(
                s=obj["s"], d=obj["d"], a=obj["a"], y=obj["y"],
                x1=tuple(obj["x1"]), x2=tuple(obj.get("x2", ())), id=obj.get("id"),
            )
        except KeyError as exc:
            raise ConfigError(f"column spec is missing role {exc.args[0]!r}") from None

    @classmethod
    def from_json(cls, path) -> "ColumnSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        out = {"s": self.s, "d": self.d, "a": self.a, "y": self.y,
               "x1": list(self.x1), "x2": list(self.x2)}
        if self.id is not None:
            out["id"] = self.id
        return out


def _readonly(arr):
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class CohortDataset:
    """Immutable unit-level data for a nested trial with sub-sampling.

    Missing entries are ``nan``. Arrays are made read-only on construction so
    a dataset can be shared between readers without copying.
    """

    s: np.ndarray
    d: np.ndarray
    a: np.ndarray
    y: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    x1_names: tuple[str, ...]
    x2_names: tuple[str, ...] = ()
    ids: np.ndarray | None = None
    _columns: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.s)
        for name in ("s", "d"):
            raw = np.asarray(getattr(self, name), dtype=float)
            bad = (raw != 0) & (raw != 1)
            if bad.any():
                row = _first(bad)
                raise PatternViolation(f"row {row}: {name} must be 0 or 1", row=row,
                                       rule=f"{name} binary")
        x1 = np.asarray(self.x1, dtype=float).reshape(n, -1)
        x2 = np.asarray(self.x2, dtype=float).reshape(n, len(self.x2_names))
        object.__setattr__(self, "s", _readonly(np.asarray(self.s, dtype=np.int8)))
        object.__setattr__(self, "d", _readonly(np.asarray(self.d, dtype=np.int8)))
        object.__setattr__(self, "a", _readonly(np.asarray(self.a, dtype=float)))
        object.__setattr__(self, "y", _readonly(np.asarray(self.y, dtype=float)))
        object.__setattr__(self, "x1", _readonly(x1))
        object.__setattr__(self, "x2", _readonly(x2))
        object.__setattr__(self, "x1_names", tuple(self.x1_names))
        object.__setattr__(self, "x2_names", tuple(self.x2_names))
        if self.ids is not None:
            object.__setattr__(self, "ids", _readonly(np.asarray(self.ids)))
        validate(self)

    @property
    def n_units(self) -> int:
        return len(self.s)

    @property
    def is_census(self) -> bool:
        return bool(np.all(self.d == 1))

    @property
    def columns(self) -> dict[str, np.ndarray]:
        """Name-to-array view used to build design matrices."""
        if self._columns is None:
            cols = {"s": self.s.astype(float), "d": self.d.astype(float), "a": self.a, "y": self.y}
            for j, name in enumerate(self.x1_names):
                cols[name] = self.x1[:, j]
            for j, name in enumerate(self.x2_names):
                cols[name] = self.x2[:, j]
            object.__setattr__(self, "_columns", cols)
        return self._columns

    def take(self, index) -> "CohortDataset":
        """Rows at ``index`` (integer positions, repeats allowed)."""
        index = np.asarray(index)
        return CohortDataset(
            s=self.s[index], d=self.d[index], a=self.a[index], y=self.y[index],
            x1=self.x1[index], x2=self.x2[index], x1_names=self.x1_names,
            x2_names=self.x2_names, ids=None if self.ids is None else self.ids[index],
        )

    def with_d(self, d) -> "CohortDataset":
        """Copy with a new measurement indicator; ``x2`` is blanked where ``d = 0``."""
        d = np.asarray(d, dtype=np.int8)
        x2 = np.array(self.x2, copy=True)
        x2[d == 0] = np.nan
        return CohortDataset(
            s=self.s, d=d, a=self.a, y=self.y, x1=self.x1, x2=x2,
            x1_names=self.x1_names, x2_names=self.x2_names, ids=self.ids,
        )

    def equals(self, other: "CohortDataset") -> bool:
        def same(u, v):
            return u.shape == v.shape and np.array_equal(u, v, equal_nan=True)

        return (
            self.x1_names == other.x1_names
            and self.x2_names == other.x2_names
            and all(same(getattr(self, k), getattr(other, k)) for k in ("s", "d", "a", "y", "x1", "x2"))
        )


def _first(mask):
    return int(np.flatnonzero(mask)[0])


def validate(data: CohortDataset) -> None:
    """Raise :class:`PatternViolation` on the first breach of the design pattern."""
    n = len(data.s)
    for name in ("d", "a", "y", "x1", "x2"):
        if len(getattr(data, name)) != n:
            raise PatternViolation(f"{name} has {len(getattr(data, name))} rows, expected {n}")
    if data.x1.shape[1] != len(data.x1_names) or not data.x1_names:
        raise PatternViolation("x1 needs at least one named column")
    s, d = data.s, data.d
    for name, v in (("s", s), ("d", d)):
        bad = (v != 0) & (v != 1)
        if bad.any():
            raise PatternViolation(f"{name} must be 0/1", row=_first(bad), rule=f"{name}_binary")
    miss_a, miss_y = np.isnan(data.a), np.isnan(data.y)
    miss_x2 = np.isnan(data.x2)
    rules = [
        ("s=1 => d=1", (s == 1) & (d == 0)),
        ("d=0 => x2 missing", (d == 0) & ~miss_x2.all(axis=1)),
        ("d=1 => x2 observed", (d == 1) & miss_x2.any(axis=1)),
        ("s=0 => a, y missing", (s == 0) & ~(miss_a & miss_y)),
        ("s=1 => a, y observed", (s == 1) & (miss_a | miss_y)),
        ("x1 never missing", np.isnan(data.x1).any(axis=1)),
    ]
    for rule, bad in rules:
        if bad.any():
            row = _first(bad)
            raise PatternViolation(f"row {row} violates {rule}", row=row, rule=rule)
    trial_a = data.a[s == 1]
    if np.any(trial_a != np.round(trial_a)):
        row = _first((s == 1) & (data.a != np.round(data.a)))
        raise PatternViolation(f"row {row}: treatment labels must be integers", row=row,
                               rule="a integer")


def _parse(value: str, column: str, row: int) -> float:
    if value in MISSING_TOKENS:
        return math.nan
    try:
        return float(value)
    except ValueError:
        raise ColumnTypeError(f"non-numeric value {value!r} in column {column!r} (row {row})",
                              column=column, row=row) from None


def load_csv(path, spec: ColumnSpec) -> CohortDataset:
    """Read a CSV file into a validated :class:`CohortDataset`.

    Empty cells and the literal ``NA`` are treated as missing.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MissingColumn(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    pos = {name: j for j, name in enumerate(header)}
    for name in spec.all_columns():
        if name not in pos:
            raise MissingColumn(f"column {name!r} not found in {path}", column=name)

    def column(name):
        j = pos[name]
        return np.array([_parse(r[j] if j < len(r) else "", name, i) for i, r in enumerate(rows)],
                        dtype=float)

    def matrix(names):
        if not names:
            return np.empty((len(rows), 0))
        return np.column_stack([column(n) for n in names])

    ids = None
    if spec.id is not None:
        ids = np.array([r[pos[spec.id]] for r in rows], dtype=object)
    s, d = column(spec.s), column(spec.d)
    for name, v in ((spec.s, s), (spec.d, d)):
        if np.isnan(v).any():
            row = _first(np.isnan(v))
            raise PatternViolation(f"row {row}: indicator {name!r} is missing", row=row,
                                   rule="indicators observed")
    return CohortDataset(
        s=s, d=d, a=column(spec.a), y=column(spec.y),
        x1=matrix(spec.x1), x2=matrix(spec.x2),
        x1_names=spec.x1, x2_names=spec.x2, ids=ids,
    )


def read_columns(path, names: Sequence[str]) -> dict[str, np.ndarray]:
    """Numeric columns from a CSV file, outside any role mapping."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    pos = {name: j for j, name in enumerate(header)}
    out = {}
    for name in names:
        if name not in pos:
            raise MissingColumn(f"column {name!r} not found in {path}", column=name)
        j = pos[name]
        out[name] = np.array([_parse(r[j] if j < len(r) else "", name, i)
                              for i, r in enumerate(rows)])
    return out


def _fmt(v: float, integer: bool = False) -> str:
    if math.isnan(v):
        return "NA"
    if integer:
        return str(int(v))
    return repr(float(v))


def save_csv(data: CohortDataset, path, spec: ColumnSpec | None = None) -> ColumnSpec:
    """Write ``data`` in canonical form: shortest round-trip floats, ``NA`` for missing."""
    if spec is None:
        spec = ColumnSpec(s="s", d="d", a="a", y="y", x1=data.x1_names, x2=data.x2_names,
                          id="id" if data.ids is not None else None)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(spec.all_columns())
        for i in range(data.n_units):
            row = [str(data.ids[i])] if spec.id is not None else []
            row += [str(int(data.s[i])), str(int(data.d[i])), _fmt(data.a[i], integer=True),
                    _fmt(data.y[i])]
            row += [_fmt(v) for v in data.x1[i]]
            row += [_fmt(v) for v in data.x2[i]]
            w.writerow(row)
    return spec


@dataclass(frozen=True)
class SubsamplingDesign:
    """Bernoulli second-stage sampling of non-randomized individuals.

    ``dependence`` maps levels of the discrete x1 column ``level_column`` to
    relative sampling probabilities (``{1: 2, 0: 1}`` samples level 1 at twice
    the rate of level 0).
    """

    kind: str
    marginal_q: float = 1.0
    dependence: Mapping[float, float] | None = None
    level_column: str | None = None

    def __post_init__(self):
        if self.kind not in ("census", "simple_random", "covariate_dependent"):
            raise ConfigError(f"unknown sub-sampling design {self.kind!r}")
        if not 0 < self.marginal_q <= 1:
            raise ConfigError("marginal_q must lie in (0, 1]")
        if self.kind == "census" and self.marginal_q != 1:
            raise ConfigError("a census design has marginal_q = 1")
        if self.kind == "covariate_dependent":
            if not self.dependence or self.level_column is None:
                raise ConfigError("covariate_dependent needs dependence ratios and a level column")
            if any(r <= 0 for r in self.dependence.values()):
                raise ConfigError("dependence ratios must be positive")
            deps = {float(k): float(v) for k, v in self.dependence.items()}
            object.__setattr__(self, "dependence", deps)

    @classmethod
    def from_dict(cls, obj: Mapping) -> "SubsamplingDesign":
        return cls(kind=obj["kind"], marginal_q=float(obj.get("marginal_q", 1.0)),
                   dependence=obj.get("dependence"), level_column=obj.get("level_column"))

    def level_probabilities(self, data: CohortDataset) -> dict[float, float]:
        """Per-level sampling probabilities whose mean over the s = 0 rows is ``marginal_q``.

        Raises :class:`InfeasibleDesign` when the required scale pushes any
        probability above 1.
        """
        if self.kind != "covariate_dependent":
            raise ConfigError("level probabilities only exist for covariate_dependent designs")
        if self.level_column not in data.x1_names:
            raise PreconditionError(f"level column {self.level_column!r} is not an x1 column")
        levels = data.columns[self.level_column][data.s == 0]
        observed = np.unique(levels)
        unknown = [v for v in observed if float(v) not in self.dependence]
        if unknown:
            raise PreconditionError(f"levels {unknown} of {self.level_column!r} have no ratio")
        ratios = np.array([self.dependence[float(v)] for v in observed])
        shares = np.array([np.mean(levels == v) for v in observed])
        scale = self.marginal_q / float(shares @ ratios)
        probs = {float(v): float(scale * r) for v, r in zip(observed, ratios)}
        too_big = {k: p for k, p in probs.items() if p > 1 + 1e-12}
        if too_big:
            raise InfeasibleDesign(
                f"marginal q={self.marginal_q} needs sampling probabilities above 1: {too_big}",
                probabilities=probs,
            )
        return probs

    def unit_probabilities(self, data: CohortDataset, level_probs=None) -> np.ndarray:
        """Pr[D = 1 | x1, S = 0] evaluated for every row."""
        if self.kind == "census":
            return np.ones(data.n_units)
        if self.kind == "simple_random":
            return np.full(data.n_units, self.marginal_q)
        if level_probs is None:
            level_probs = self.level_probabilities(data)
        col = data.columns[self.level_column]
        return np.array([level_probs.get(float(v), np.nan) for v in col])


def mask_by_subsampling(full: CohortDataset, design: SubsamplingDesign, seed) -> CohortDataset:
    """Emulate second-stage sampling on census data.

    Every ``s = 0`` row keeps its ``x2`` with its design probability and has
    it blanked otherwise; randomized rows are left alone.
    """
    if not full.is_census:
        raise PreconditionError("mask_by_subsampling needs census input (d = 1 everywhere)")
    if design.kind == "census":
        return full
    prob = design.unit_probabilities(full)
    u = np.random.default_rng(seed).random(full.n_units)
    d = np.where(full.s == 1, 1, (u < prob).astype(np.int8))
    return full.with_d(d)


def summarize(data: CohortDataset, arms: Sequence[int] | None = None) -> dict:
    """Counts and observed-entry means for a dataset."""
    trial_a = data.a[data.s == 1].astype(int)
    labels = sorted(set(trial_a.tolist()) | set(arms or ()))
    arm_counts = {int(k): int(np.sum(trial_a == k)) for k in labels}
    cols = {}
    for name, v in data.columns.items():
        ok = ~np.isnan(v)
        cols[name] = {"observed": int(ok.sum()), "mean": float(v[ok].mean()) if ok.any() else None}
    return {
        "n_units": data.n_units,
        "n_trial": int(np.sum(data.s == 1)),
        "n_measured": int(np.sum(data.d == 1)),
        "n_sampled_nontrial": int(np.sum((data.s == 0) & (data.d == 1))),
        "arm_counts": arm_counts,
        "empty_arms": [k for k, c in arm_counts.items() if c == 0],
        "columns": cols,
    }
