"""Loading, encoding and splitting of the breast-cancer recurrence data."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Sequence

import numpy as np

COLUMNS = ("id", "treat", "age", "men", "size", "grade", "nodes", "prog",
           "oest", "time", "status")
CONTINUOUS = ("age", "size", "nodes", "prog", "oest")
ENCODINGS = ("ordinal", "dummy")
TEST_SIZE = 75


class SchemaError(ValueError):
    """The CSV header or layout does not match the expected schema."""


class RecordError(ValueError):
    """A data row could not be parsed or failed validation."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class StandardizationError(ValueError):
    """A covariate cannot be standardized (e.g. zero variance)."""


def bundled_path() -> str:
    """Path of the bundled GBSG file shipped with the package."""
    return str(resources.files("hazard_bench") / "data" / "gbsg.csv")


@dataclass(frozen=True)
class SubjectRecord:
    id: int
    treat: int
    age: float
    men: int
    size: float
    grade: int
    nodes: float
    prog: float
    oest: float
    time: float
    status: int

    def __post_init__(self):
        if not self.time > 0:
            raise RecordError(f"time must be positive, got {self.time}")
        if self.status not in (0, 1):
            raise RecordError(f"status must be 0 or 1, got {self.status}")
        if self.treat not in (0, 1):
            raise RecordError(f"treat must be 0 or 1, got {self.treat}")
        if self.men not in (1, 2):
            raise RecordError(f"men must be 1 or 2, got {self.men}")
        if self.grade not in (1, 2, 3):
            raise RecordError(f"grade must be 1, 2 or 3, got {self.grade}")
        if self.nodes < 0:
            raise RecordError(f"nodes must be non-negative, got {self.nodes}")
        if not self.size > 0:
            raise RecordError(f"size must be positive, got {self.size}")


_INT_FIELDS = {"id", "treat", "men", "grade", "status"}


@dataclass(frozen=True)
class SurvivalDataset:
    """Immutable ordered collection of subjects.

    ``standardization`` maps a design column to its ``(mean, std)`` pair once
    a design matrix has been fitted on some rows; it is empty for raw data.
    """

    records: tuple[SubjectRecord, ...]
    covariate_names: tuple[str, ...] = ("treat", "age", "men", "size", "grade",
                                        "nodes", "prog", "oest")
    standardization: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.records) == 0:
            raise SchemaError("dataset has no records")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def n_events(self) -> int:
        return sum(r.status for r in self.records)

    @property
    def times(self) -> np.ndarray:
        return np.array([r.time for r in self.records], dtype=float)

    @property
    def events(self) -> np.ndarray:
        return np.array([r.status for r in self.records], dtype=int)

    def subset(self, rows: Iterable[int]) -> "SurvivalDataset":
        return SurvivalDataset(tuple(self.records[i] for i in rows),
                               self.covariate_names, dict(self.standardization))

    def to_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(COLUMNS)
            for r in self.records:
                writer.writerow([_fmt(getattr(r, c)) for c in COLUMNS])


def _fmt(v) -> str:
    if isinstance(v, float) and v.is_integer():
        return str(int(v))
    return str(v)


@dataclass(frozen=True)
class DesignMatrix:
    """Encoded covariates with their outcomes.

    ``means``/``stds`` hold the standardization applied to each column; a
    column left on its raw scale has mean 0 and std 1.
    """

    X: np.ndarray
    times: np.ndarray
    events: np.ndarray
    columns: tuple[str, ...]
    means: np.ndarray
    stds: np.ndarray
    ids: tuple[int, ...] = ()

    def __post_init__(self):
        n = self.X.shape[0]
        if self.X.ndim != 2 or len(self.times) != n or len(self.events) != n:
            raise ValueError("design matrix, times and events disagree in length")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.times))):
            raise ValueError("design matrix contains non-finite values")
        for a in (self.X, self.times, self.events, self.means, self.stds):
            a.setflags(write=False)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def rows(self, idx) -> "DesignMatrix":
        idx = np.asarray(idx)
        return DesignMatrix(self.X[idx].copy(), self.times[idx].copy(),
                            self.events[idx].copy(), self.columns,
                            self.means.copy(), self.stds.copy(),
                            tuple(self.ids[i] for i in idx) if self.ids else ())

    def drop_covariates(self) -> "DesignMatrix":
        return DesignMatrix(np.zeros((self.n, 0)), self.times.copy(),
                            self.events.copy(), (), np.zeros(0), np.ones(0),
                            self.ids)


def load_csv(path: str | os.PathLike | None = None) -> SurvivalDataset:
    """Parse a breast-cancer CSV in the 11-column schema.

    Columns may appear in any order. Raises :class:`SchemaError` when the
    header is missing or incomplete and :class:`RecordError` (carrying the
    1-based file line number) for bad rows.
    """
    if path is None:
        path = bundled_path()
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file, expected header "
                              f"{','.join(COLUMNS)}") from None
        for col in COLUMNS:
            if col not in header:
                raise SchemaError(f"{path}: missing column '{col}'")
        pos = {c: header.index(c) for c in COLUMNS}
        records = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise RecordError(f"expected {len(header)} fields, got {len(row)}",
                                  lineno)
            values = {}
            for c in COLUMNS:
                cell = row[pos[c]].strip()
                try:
                    v = float(cell)
                except ValueError:
                    raise RecordError(f"cannot parse {c}={cell!r}", lineno) from None
                if c in _INT_FIELDS:
                    if not v.is_integer():
                        raise RecordError(f"{c} must be an integer, got {cell!r}",
                                          lineno)
                    v = int(v)
                values[c] = v
            try:
                records.append(SubjectRecord(**values))
            except RecordError as exc:
                raise RecordError(str(exc), lineno) from None
    if not records:
        raise SchemaError(f"{path}: no data rows")
    return SurvivalDataset(tuple(records))


def encoded_columns(encoding: str) -> tuple[str, ...]:
    if encoding == "ordinal":
        return ("treat", "age", "men", "size", "grade", "nodes", "prog", "oest")
    if encoding == "dummy":
        return ("treat", "age", "men2", "size", "grade2", "grade3", "nodes",
                "prog", "oest")
    raise ValueError(f"unknown encoding {encoding!r}; expected one of {ENCODINGS}")


def _raw_matrix(ds: SurvivalDataset, encoding: str) -> tuple[np.ndarray, tuple[str, ...]]:
    cols = encoded_columns(encoding)
    out = np.empty((len(ds), len(cols)))
    for i, r in enumerate(ds.records):
        for j, c in enumerate(cols):
            if c == "men2":
                out[i, j] = float(r.men == 2)
            elif c in ("grade2", "grade3"):
                out[i, j] = float(r.grade == int(c[-1]))
            else:
                out[i, j] = float(getattr(r, c))
    return out, cols


def standardize(ds: SurvivalDataset, fit_rows: Sequence[int] | None = None,
                encoding: str = "ordinal") -> DesignMatrix:
    """Encode and z-score covariates using statistics from ``fit_rows``.

    Continuous covariates are always standardized (population std). In
    ``ordinal`` mode ``men`` and ``grade`` are standardized integers; in
    ``dummy`` mode they become reference-coded indicators left on the 0/1
    scale. ``treat`` is never rescaled. ``fit_rows=None`` uses every row.
    """
    raw, cols = _raw_matrix(ds, encoding)
    fit = np.arange(len(ds)) if fit_rows is None else np.asarray(list(fit_rows))
    if fit.size == 0:
        raise StandardizationError("fit_rows is empty")
    scaled = set(CONTINUOUS) | ({"men", "grade"} if encoding == "ordinal" else set())
    means = np.zeros(len(cols))
    stds = np.ones(len(cols))
    for j, c in enumerate(cols):
        if c not in scaled:
            continue
        col = raw[fit, j]
        mu = col.mean()
        sd = np.sqrt(np.mean((col - mu) ** 2))
        if not sd > 1e-12 * max(1.0, abs(mu)):
            raise StandardizationError(f"covariate '{c}' has zero variance on the fit rows")
        means[j], stds[j] = mu, sd
    X = (raw - means) / stds
    return DesignMatrix(X, ds.times, ds.events.astype(float), cols, means, stds,
                        tuple(r.id for r in ds.records))


def split_order(ds: SurvivalDataset) -> list[int]:
    """Row indices stably sorted so that censored rows come first."""
    return sorted(range(len(ds)), key=lambda i: ds.records[i].status)


def split_paper(ds: SurvivalDataset, test_size: int = TEST_SIZE
                ) -> tuple[SurvivalDataset, SurvivalDataset]:
    """Censored-first stable sort, then hold out the last ``test_size`` rows."""
    if len(ds) < test_size + 1:
        raise ValueError(f"need at least {test_size + 1} rows to split, got {len(ds)}")
    order = split_order(ds)
    return ds.subset(order[:-test_size]), ds.subset(order[-test_size:])


@dataclass(frozen=True)
class PreparedData:
    """Train/test design matrices sharing one standardization."""

    train: DesignMatrix
    test: DesignMatrix
    train_set: SurvivalDataset
    test_set: SurvivalDataset


def prepare(path: str | os.PathLike | None = None, encoding: str = "ordinal",
            standardize_on: str = "train") -> PreparedData:
    """Load, split and standardize in one call.

    ``standardize_on`` is ``"train"`` (default) or ``"all"``; the latter fits
    the z-scores on all rows before splitting.
    """
    ds = load_csv(path)
    order = split_order(ds)
    if len(ds) < TEST_SIZE + 1:
        raise ValueError(f"need at least {TEST_SIZE + 1} rows to split, got {len(ds)}")
    train_idx, test_idx = order[:-TEST_SIZE], order[-TEST_SIZE:]
    if standardize_on == "train":
        fit_rows = train_idx
    elif standardize_on == "all":
        fit_rows = None
    else:
        raise ValueError(f"standardize_on must be 'train' or 'all', got {standardize_on!r}")
    full = standardize(ds, fit_rows, encoding)
    stats = {c: (float(m), float(s)) for c, m, s in zip(full.columns, full.means, full.stds)}
    train_set, test_set = ds.subset(train_idx), ds.subset(test_idx)
    train_set = SurvivalDataset(train_set.records, train_set.covariate_names, stats)
    test_set = SurvivalDataset(test_set.records, test_set.covariate_names, stats)
    return PreparedData(full.rows(train_idx), full.rows(test_idx), train_set, test_set)
