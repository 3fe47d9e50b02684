"""Datasets, sample alignment between two studies, and GLM families."""

from __future__ import annotations

import csv
import enum
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    AlignmentError,
    ConfigurationError,
    DataError,
    EmptyDataError,
    ParseError,
    ShapeError,
)

_DECIMAL = re.compile(r"^[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?$")


class GlmFamily(enum.Enum):
    """Working-model family; ``mean`` is the inverse canonical link f = F'."""

    LINEAR = "linear"
    LOGISTIC = "logistic"

    @classmethod
    def parse(cls, value) -> "GlmFamily":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigurationError(f"unknown GLM family {value!r}") from None

    def mean(self, eta):
        eta = np.asarray(eta, dtype=float)
        if self is GlmFamily.LINEAR:
            return eta.copy()
        return expit(eta)

    def cumulant(self, eta):
        """F(t): t^2/2 for linear, log(1 + e^t) for logistic."""
        eta = np.asarray(eta, dtype=float)
        if self is GlmFamily.LINEAR:
            return 0.5 * eta**2
        return np.logaddexp(0.0, eta)


def expit(t):
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass(frozen=True, eq=False)
class Dataset:
    """One study: sample ids, covariate matrix (n x p) and an outcome vector."""

    ids: tuple
    covariates: np.ndarray
    outcome: np.ndarray
    outcome_kind: str = "continuous"
    covariate_names: tuple = ()

    def __post_init__(self):
        ids = tuple(str(i) for i in self.ids)
        X = np.array(self.covariates, dtype=float, copy=True)
        y = np.array(self.outcome, dtype=float, copy=True).reshape(-1)
        if X.ndim != 2:
            raise ShapeError("covariates must be a 2-d matrix")
        if X.shape[0] != len(ids) or y.shape[0] != len(ids):
            raise ShapeError(
                f"row count mismatch: {len(ids)} ids, {X.shape[0]} covariate rows, "
                f"{y.shape[0]} outcomes"
            )
        if len(set(ids)) != len(ids):
            seen = set()
            dup = next(i for i in ids if i in seen or seen.add(i))
            raise DataError(f"duplicate sample id {dup!r}")
        if not np.all(np.isfinite(X)):
            raise DataError("covariates contain non-finite values")
        if not np.all(np.isfinite(y)):
            raise DataError("outcome contains non-finite values")
        if self.outcome_kind not in ("continuous", "binary"):
            raise ConfigurationError(f"unknown outcome kind {self.outcome_kind!r}")
        if self.outcome_kind == "binary" and not np.all((y == 0.0) | (y == 1.0)):
            bad = float(y[(y != 0.0) & (y != 1.0)][0])
            raise DataError(f"binary outcome contains value {bad!r}; expected 0 or 1")
        names = tuple(self.covariate_names) or tuple(f"x{j + 1}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise ShapeError("covariate_names length does not match column count")
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "covariates", X)
        object.__setattr__(self, "outcome", y)
        object.__setattr__(self, "covariate_names", names)

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=int)
        return Dataset(
            ids=tuple(self.ids[i] for i in rows),
            covariates=self.covariates[rows],
            outcome=self.outcome[rows],
            outcome_kind=self.outcome_kind,
            covariate_names=self.covariate_names,
        )

    def equals(self, other: "Dataset") -> bool:
        return (
            self.ids == other.ids
            and self.outcome_kind == other.outcome_kind
            and np.array_equal(self.covariates, other.covariates)
            and np.array_equal(self.outcome, other.outcome)
        )


def _parse_cell(text, row, column):
    s = text.strip()
    if not _DECIMAL.match(s):
        raise ParseError(
            f"row {row}, column {column!r}: cannot parse {text!r} as a finite decimal",
            row=row,
            column=column,
        )
    return float(s)


def load_dataset(
    path,
    id_column: str,
    outcome_column: str,
    outcome_kind: str = "continuous",
) -> Dataset:
    """Read a study CSV: an id column, an outcome column, all others covariates.

    Row numbers in parse errors are 1-based data rows (the header is row 0).
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        for col in (id_column, outcome_column):
            if col not in header:
                raise ConfigurationError(f"{path}: missing column {col!r}")
        if id_column == outcome_column:
            raise ConfigurationError("id and outcome columns must differ")
        id_idx = header.index(id_column)
        y_idx = header.index(outcome_column)
        cov_idx = [j for j in range(len(header)) if j not in (id_idx, y_idx)]
        if not cov_idx:
            raise ConfigurationError(f"{path}: no covariate columns")
        ids, rows, ys = [], [], []
        for r, rec in enumerate(reader, start=1):
            if not rec or (len(rec) == 1 and not rec[0].strip()):
                continue
            if len(rec) != len(header):
                raise ParseError(
                    f"row {r}: expected {len(header)} fields, found {len(rec)}", row=r
                )
            ids.append(rec[id_idx].strip())
            ys.append(_parse_cell(rec[y_idx], r, header[y_idx]))
            rows.append([_parse_cell(rec[j], r, header[j]) for j in cov_idx])
    X = np.array(rows, dtype=float).reshape(len(rows), len(cov_idx))
    return Dataset(
        ids=tuple(ids),
        covariates=X,
        outcome=np.array(ys, dtype=float),
        outcome_kind=outcome_kind,
        covariate_names=tuple(header[j] for j in cov_idx),
    )


def write_dataset(ds: Dataset, path, id_column: str = "id", outcome_column: str = "y"):
    """Write ``ds`` so that :func:`load_dataset` reproduces it bit-for-bit."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([id_column, outcome_column, *ds.covariate_names])
        for i, sid in enumerate(ds.ids):
            w.writerow([sid, repr(float(ds.outcome[i])), *map(repr, ds.covariates[i].tolist())])


@dataclass(frozen=True, eq=False)
class IndexSets:
    """Positions of each study's samples inside the union ordering.

    ``idx_y[k]`` is the union row of the k-th sample of the y-study (input order),
    likewise ``idx_z``.
    """

    idx_y: np.ndarray
    idx_z: np.ndarray
    idx_overlap: np.ndarray
    N: int

    @property
    def n_y(self) -> int:
        return len(self.idx_y)

    @property
    def n_z(self) -> int:
        return len(self.idx_z)

    @property
    def n_o(self) -> int:
        return len(self.idx_overlap)

    def in_y(self) -> np.ndarray:
        m = np.zeros(self.N, dtype=bool)
        m[self.idx_y] = True
        return m

    def in_z(self) -> np.ndarray:
        m = np.zeros(self.N, dtype=bool)
        m[self.idx_z] = True
        return m

    def same_as(self, other: "IndexSets") -> bool:
        return (
            self.N == other.N
            and np.array_equal(self.idx_y, other.idx_y)
            and np.array_equal(self.idx_z, other.idx_z)
            and np.array_equal(self.idx_overlap, other.idx_overlap)
        )

    @classmethod
    def from_masks(cls, in_y, in_z) -> "IndexSets":
        in_y = np.asarray(in_y, dtype=bool)
        in_z = np.asarray(in_z, dtype=bool)
        return cls(
            idx_y=np.flatnonzero(in_y),
            idx_z=np.flatnonzero(in_z),
            idx_overlap=np.flatnonzero(in_y & in_z),
            N=int(np.count_nonzero(in_y | in_z)),
        )


@dataclass(frozen=True, eq=False)
class Alignment:
    ids: tuple
    covariates: np.ndarray
    index: IndexSets
    y: np.ndarray = field(repr=False)
    z: np.ndarray = field(repr=False)


def align_samples(ds_y: Dataset, ds_z: Dataset) -> Alignment:
    """Build the union of both studies.

    Union order is the y-study ids in input order followed by the z-only ids in
    input order. Shared ids must carry identical covariate rows.
    """
    if ds_y.p != ds_z.p:
        raise ShapeError(f"covariate count mismatch: {ds_y.p} vs {ds_z.p}")
    if ds_y.n + ds_z.n == 0:
        raise EmptyDataError("both studies are empty")
    pos = {sid: k for k, sid in enumerate(ds_y.ids)}
    ids = list(ds_y.ids)
    rows = [ds_y.covariates]
    idx_z = np.empty(ds_z.n, dtype=int)
    extra = []
    for k, sid in enumerate(ds_z.ids):
        j = pos.get(sid)
        if j is None:
            j = len(ids)
            ids.append(sid)
            pos[sid] = j
            extra.append(k)
        elif j < ds_y.n and not np.array_equal(ds_y.covariates[j], ds_z.covariates[k]):
            raise AlignmentError(f"sample {sid!r} has different covariates in the two studies")
        idx_z[k] = j
    if extra:
        rows.append(ds_z.covariates[extra])
    X = np.vstack(rows) if rows else np.empty((0, ds_y.p))
    X.flags.writeable = False
    idx_y = np.arange(ds_y.n)
    overlap = np.sort(idx_z[idx_z < ds_y.n])
    index = IndexSets(idx_y=idx_y, idx_z=idx_z, idx_overlap=overlap, N=len(ids))
    return Alignment(ids=tuple(ids), covariates=X, index=index, y=ds_y.outcome, z=ds_z.outcome)


def union_dataset(al: Alignment, rows: Sequence[int] | None = None) -> Dataset:
    """The union covariates as a Dataset with a zero outcome, for re-alignment checks."""
    rows = np.arange(al.index.N) if rows is None else np.asarray(rows, dtype=int)
    return Dataset(
        ids=tuple(al.ids[i] for i in rows),
        covariates=al.covariates[rows],
        outcome=np.zeros(len(rows)),
    )
