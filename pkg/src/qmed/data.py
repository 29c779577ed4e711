"""Microdata ingestion, validation and covariate profiles."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np
import pandas as pd

from .errors import DegenerateArmError, SchemaError, ValidationError

MISSING_TOKENS = frozenset({"", "NA", "na", "N/A", "NaN", "nan", "null", "NULL", "."})


class ObservationRecord(NamedTuple):
    y: float
    x: int
    m: float
    w: tuple


@dataclass(frozen=True)
class Schema:
    """Column mapping from a CSV header to the model variables."""

    outcome: str = "y"
    exposure: str = "x"
    mediator: str = "m"
    covariates: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        names = [self.outcome, self.exposure, self.mediator, *self.covariates]
        if len(set(names)) != len(names):
            raise SchemaError(f"column mapping names a column twice: {names}")

    @property
    def columns(self):
        return [self.outcome, self.exposure, self.mediator, *self.covariates]


def _readonly(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class MicrodataTable:
    """Columnar table of (outcome, binary exposure, mediator, covariates).

    ``weights`` holds nonnegative row weights (frequency weights); ``None``
    means every row counts once. Arrays are copied and frozen on construction.
    """

    y: np.ndarray
    x: np.ndarray
    m: np.ndarray
    w: np.ndarray = None
    covariate_names: tuple = ()
    weights: np.ndarray = None
    rejected: int = field(default=0, compare=False)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64).ravel()
        x = np.asarray(self.x).ravel()
        m = np.asarray(self.m, dtype=np.float64).ravel()
        n = y.shape[0]
        if n < 1:
            raise ValidationError("table has no rows")
        if x.shape[0] != n or m.shape[0] != n:
            raise ValidationError("columns have different lengths")
        if not np.all((x == 0) | (x == 1)):
            bad = int(np.flatnonzero((x != 0) & (x != 1))[0])
            raise ValidationError(f"exposure must be 0 or 1, got {x[bad]!r}", row=bad)
        if not np.all(np.isfinite(m)):
            raise ValidationError("mediator is not finite", row=int(np.flatnonzero(~np.isfinite(m))[0]))
        bad_y = ~np.isfinite(y) | (y < 0)
        if bad_y.any():
            raise ValidationError("outcome must be finite and nonnegative", row=int(np.flatnonzero(bad_y)[0]))
        names = tuple(self.covariate_names)
        if self.w is None:
            w = np.zeros((n, len(names)))
        else:
            w = np.asarray(self.w, dtype=np.float64).reshape(n, -1)
        if w.shape[1] != len(names):
            raise ValidationError(f"{w.shape[1]} covariate columns but {len(names)} names")
        if not np.all(np.isfinite(w)):
            raise ValidationError("covariate is not finite", row=int(np.flatnonzero(~np.isfinite(w).all(axis=1))[0]))
        object.__setattr__(self, "y", _readonly(y))
        object.__setattr__(self, "x", _readonly(x.astype(np.int64)))
        object.__setattr__(self, "m", _readonly(m))
        object.__setattr__(self, "w", _readonly(w))
        object.__setattr__(self, "covariate_names", names)
        if self.weights is not None:
            wt = np.asarray(self.weights, dtype=np.float64).ravel()
            if wt.shape[0] != n:
                raise ValueError("weights length does not match the table")
            if not np.all(np.isfinite(wt)) or np.any(wt < 0):
                raise ValueError("weights must be finite and nonnegative")
            object.__setattr__(self, "weights", _readonly(wt))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.w.shape[1]

    @property
    def row_weights(self) -> np.ndarray:
        return np.ones(self.n) if self.weights is None else self.weights

    @property
    def total_weight(self) -> float:
        return float(self.n) if self.weights is None else float(self.weights.sum())

    def rows(self) -> Iterator[ObservationRecord]:
        for i in range(self.n):
            yield ObservationRecord(float(self.y[i]), int(self.x[i]), float(self.m[i]), tuple(self.w[i]))

    def take(self, index) -> "MicrodataTable":
        """Sub-table from a boolean mask or integer index array."""
        index = np.asarray(index)
        weights = None if self.weights is None else self.weights[index]
        return MicrodataTable(self.y[index], self.x[index], self.m[index], self.w[index],
                              self.covariate_names, weights)

    def with_weights(self, weights) -> "MicrodataTable":
        return MicrodataTable(self.y, self.x, self.m, self.w, self.covariate_names, weights)

    def materialize(self) -> "MicrodataTable":
        """Replicate each row by its (integer) weight and drop the weights."""
        if self.weights is None:
            return self
        counts = np.asarray(self.weights)
        if not np.all(counts == np.round(counts)):
            raise ValueError("materialize needs integer weights")
        idx = np.repeat(np.arange(self.n), counts.astype(np.int64))
        return MicrodataTable(self.y[idx], self.x[idx], self.m[idx], self.w[idx], self.covariate_names)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, schema: Schema) -> "MicrodataTable":
        return cls(frame[schema.outcome].to_numpy(float), frame[schema.exposure].to_numpy(),
                   frame[schema.mediator].to_numpy(float),
                   frame[list(schema.covariates)].to_numpy(float) if schema.covariates else None,
                   schema.covariates)


@dataclass(frozen=True)
class CovariateProfile:
    w: tuple
    label: str = "all"
    weight: float = 1.0


def _parse_column(raw: pd.Series, name: str, missing: np.ndarray) -> np.ndarray:
    # python's float() is correctly rounded, so written values read back bit-identically
    text = raw.to_numpy(dtype=object).copy()
    text[missing] = "nan"
    try:
        if any("_" in t for t in text):
            raise ValueError
        return text.astype(np.float64)
    except ValueError:
        for i, t in enumerate(text):
            try:
                if "_" in t:
                    raise ValueError
                float(t)
            except ValueError:
                raise ValidationError(f"cannot parse {t!r} in column {name!r} as a number", row=i) from None
        raise


def ingest_csv(path, schema: Schema = Schema()) -> MicrodataTable:
    """Read and validate a CSV file.

    Rows with a missing outcome, exposure, mediator or covariate are dropped;
    the count is stored on ``table.rejected``. Row numbers in errors are
    0-based data rows (the header is not counted).
    """
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"{path} does not exist")
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    absent = [c for c in schema.columns if c not in frame.columns]
    if absent:
        raise SchemaError(f"{path}: missing column(s) {', '.join(absent)}")
    frame = frame[schema.columns].apply(lambda s: s.str.strip())
    missing = frame.isin(MISSING_TOKENS).to_numpy()
    parsed = {c: _parse_column(frame[c], c, missing[:, j]) for j, c in enumerate(schema.columns)}

    keep = ~missing.any(axis=1)
    x = parsed[schema.exposure]
    bad_x = np.flatnonzero(keep & (x != 0) & (x != 1))
    if bad_x.size:
        i = int(bad_x[0])
        raise ValidationError(f"exposure must be 0 or 1, got {frame[schema.exposure].iloc[i]!r}", row=i)
    for name, check, what in ((schema.mediator, np.isfinite, "finite"),
                              (schema.outcome, lambda v: np.isfinite(v) & (v >= 0), "finite and nonnegative")):
        bad = np.flatnonzero(keep & ~check(parsed[name]))
        if bad.size:
            raise ValidationError(f"{name} must be {what}", row=int(bad[0]))
    if not keep.any():
        raise ValidationError(f"{path}: every row has a missing field")

    w = np.column_stack([parsed[c][keep] for c in schema.covariates]) if schema.covariates else None
    table = MicrodataTable(parsed[schema.outcome][keep], x[keep].astype(np.int64), parsed[schema.mediator][keep],
                           w, schema.covariates, rejected=int((~keep).sum()))
    return table


def _fmt(v: float) -> str:
    s = repr(float(v))
    return s[:-2] if s.endswith(".0") else s


def write_csv(table: MicrodataTable, path, schema: Schema = None) -> None:
    """Write a table with shortest round-trip float formatting."""
    if schema is None:
        schema = Schema(covariates=table.covariate_names)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(schema.columns)
        for i in range(table.n):
            out.writerow([_fmt(table.y[i]), str(int(table.x[i])), _fmt(table.m[i]),
                          *(_fmt(v) for v in table.w[i])])


def split_by_exposure(table: MicrodataTable):
    """Return ``(unexposed, exposed)`` sub-tables."""
    t0, t1 = table.x == 0, table.x == 1
    if not t0.any() or not t1.any():
        arm = 0 if not t0.any() else 1
        raise DegenerateArmError(f"exposure arm x={arm} is empty; exposure contrasts are undefined")
    return table.take(t0), table.take(t1)


def covariate_profiles(table: MicrodataTable, max_profiles: int = 64) -> list:
    """Distinct covariate vectors with their (weighted) population shares."""
    if table.p == 0:
        return [CovariateProfile(w=(), label="all", weight=1.0)]
    uniq, inverse = np.unique(table.w, axis=0, return_inverse=True)
    if uniq.shape[0] > max_profiles:
        raise ValidationError(f"{uniq.shape[0]} distinct covariate profiles exceeds max_profiles={max_profiles}; "
                              "dummy-code covariates into fewer cells")
    share = np.bincount(inverse.ravel(), weights=table.row_weights, minlength=uniq.shape[0])
    share = share / share.sum()
    out = []
    for row, s in zip(uniq, share):
        label = ",".join(f"{name}={_fmt(v)}" for name, v in zip(table.covariate_names, row))
        out.append(CovariateProfile(w=tuple(float(v) for v in row), label=label, weight=float(s)))
    return out


def profile_mask(table: MicrodataTable, profile: CovariateProfile) -> np.ndarray:
    if table.p == 0:
        return np.ones(table.n, dtype=bool)
    return np.all(table.w == np.asarray(profile.w, dtype=float), axis=1)


def check_profile_weights(profiles: Sequence[CovariateProfile], atol: float = 1e-9) -> None:
    total = sum(p.weight for p in profiles)
    if any(p.weight < 0 for p in profiles) or abs(total - 1.0) > atol:
        raise ValueError(f"profile weights must be nonnegative and sum to 1 (got {total})")
