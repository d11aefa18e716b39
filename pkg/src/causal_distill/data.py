"""Observational datasets: unit records, CSV ingestion and seeded splitting."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np


class DatasetError(ValueError):
    """Raised for malformed input data."""


@dataclass(frozen=True)
class Unit:
    x: np.ndarray
    t: int
    y_factual: float
    y_counterfactual: Optional[float] = None
    mu0: Optional[float] = None
    mu1: Optional[float] = None
    randomized_flag: Optional[bool] = None

    @property
    def ite(self) -> Optional[float]:
        if self.mu0 is None or self.mu1 is None:
            return None
        return self.mu1 - self.mu0


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ObservationalDataset:
    """Column-oriented store of units sharing one covariate dimension.

    Optional ground-truth columns (``y_cf``, ``mu0``, ``mu1``) and the
    randomized-subgroup flag are either absent (``None``) or present for
    every unit. ``noise_sd`` records the outcome noise level for synthetic
    data and is ``None`` otherwise.
    """

    x: np.ndarray
    t: np.ndarray
    y: np.ndarray
    y_cf: Optional[np.ndarray] = None
    mu0: Optional[np.ndarray] = None
    mu1: Optional[np.ndarray] = None
    randomized: Optional[np.ndarray] = None
    name: str = ""
    noise_sd: Optional[float] = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1) if len(x) else x.reshape(0, 1)
        if x.ndim != 2:
            raise DatasetError("covariates must form a 2-d array")
        n = x.shape[0]
        t = np.asarray(self.t, dtype=float)
        if t.shape != (n,):
            raise DatasetError(f"treatment column has shape {t.shape}, expected ({n},)")
        if not np.all((t == 0) | (t == 1)):
            raise DatasetError("treatment not binary")
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "t", _frozen(t, dtype=np.int64))
        for name in ("y", "y_cf", "mu0", "mu1"):
            col = getattr(self, name)
            if col is None:
                continue
            col = np.asarray(col, dtype=float)
            if col.shape != (n,):
                raise DatasetError(f"column {name!r} has shape {col.shape}, expected ({n},)")
            object.__setattr__(self, name, _frozen(col))
        if self.randomized is not None:
            r = np.asarray(self.randomized, dtype=bool)
            if r.shape != (n,):
                raise DatasetError("randomized flag column has wrong length")
            object.__setattr__(self, "randomized", _frozen(r, dtype=bool))

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def has_ground_truth(self) -> bool:
        return self.mu0 is not None and self.mu1 is not None

    @property
    def units(self) -> list[Unit]:
        def opt(col, i, cast=float):
            return None if col is None else cast(col[i])

        return [
            Unit(
                x=self.x[i],
                t=int(self.t[i]),
                y_factual=float(self.y[i]),
                y_counterfactual=opt(self.y_cf, i),
                mu0=opt(self.mu0, i),
                mu1=opt(self.mu1, i),
                randomized_flag=opt(self.randomized, i, bool),
            )
            for i in range(len(self))
        ]

    @classmethod
    def from_units(cls, units: Sequence[Unit], name: str = "", noise_sd=None):
        if not units:
            raise DatasetError("no units")
        d = {len(np.atleast_1d(u.x)) for u in units}
        if len(d) != 1:
            raise DatasetError("units disagree on covariate dimension")

        def col(attr, cast=float):
            vals = [getattr(u, attr) for u in units]
            if all(v is None for v in vals):
                return None
            if any(v is None for v in vals):
                raise DatasetError(f"column {attr!r} present for some units only")
            return [cast(v) for v in vals]

        return cls(
            x=np.array([np.atleast_1d(u.x) for u in units], dtype=float),
            t=[u.t for u in units],
            y=[u.y_factual for u in units],
            y_cf=col("y_counterfactual"),
            mu0=col("mu0"),
            mu1=col("mu1"),
            randomized=col("randomized_flag", bool),
            name=name,
            noise_sd=noise_sd,
        )

    def subset(self, idx, name: Optional[str] = None) -> "ObservationalDataset":
        idx = np.asarray(idx)
        if idx.dtype != bool:
            idx = idx.astype(np.intp)

        def take(col):
            return None if col is None else col[idx]

        return ObservationalDataset(
            x=self.x[idx],
            t=self.t[idx],
            y=self.y[idx],
            y_cf=take(self.y_cf),
            mu0=take(self.mu0),
            mu1=take(self.mu1),
            randomized=take(self.randomized),
            name=self.name if name is None else name,
            noise_sd=self.noise_sd,
        )

    def require_both_arms(self):
        n1 = int(self.t.sum())
        if n1 == 0 or n1 == len(self):
            raise DatasetError("both treatment arms must be present")


def empirical_covariates(ds: ObservationalDataset) -> list[np.ndarray]:
    """Covariate vectors of every unit, in row order (duplicates kept)."""
    if len(ds) == 0:
        raise DatasetError("empty dataset")
    return [row.copy() for row in ds.x]


# ---------------------------------------------------------------------------
# CSV


@dataclass(frozen=True)
class CsvSchema:
    """Maps CSV header names onto dataset columns.

    When ``x_columns`` is ``None``, every header of the form ``<x_prefix><int>``
    is taken as a covariate, ordered by the integer suffix. Optional columns
    are read only when named here and present in the header.
    """

    x_columns: Optional[tuple[str, ...]] = None
    x_prefix: str = "x"
    t: str = "t"
    y: str = "y"
    y_cf: Optional[str] = "y_cf"
    mu0: Optional[str] = "mu0"
    mu1: Optional[str] = "mu1"
    randomized: Optional[str] = "randomized"

    @classmethod
    def from_dict(cls, d: dict) -> "CsvSchema":
        d = dict(d)
        if d.get("x_columns") is not None:
            d["x_columns"] = tuple(d["x_columns"])
        return cls(**d)

    def resolve_x(self, header: Sequence[str]) -> list[str]:
        if self.x_columns is not None:
            missing = [c for c in self.x_columns if c not in header]
            if missing:
                raise DatasetError(f"missing covariate columns: {missing}")
            return list(self.x_columns)
        p = self.x_prefix
        found = [h for h in header if h.startswith(p) and h[len(p):].isdigit()]
        if not found:
            raise DatasetError(f"no covariate columns with prefix {p!r}")
        return sorted(found, key=lambda h: int(h[len(p):]))


def _parse_float(cell: str, row: int, col: str) -> float:
    try:
        return float(cell)
    except ValueError:
        raise DatasetError(f"non-numeric cell {cell!r} at row {row}, column {col!r}") from None


def load_dataset(path, schema: Optional[CsvSchema] = None, name: Optional[str] = None,
                 noise_sd: Optional[float] = None) -> ObservationalDataset:
    """Read a header-first CSV file into an :class:`ObservationalDataset`.

    Raises:
        FileNotFoundError: if ``path`` does not exist.
        DatasetError: on empty input, ragged rows, non-numeric cells, or a
            treatment value outside {0, 1}.
    """
    schema = schema or CsvSchema()
    path = os.fspath(path)
    if not os.path.exists(path):
        raise FileNotFoundError(f"dataset file not found: {path}")
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise DatasetError("no data rows")
    header, body = [h.strip() for h in rows[0]], rows[1:]
    if not body:
        raise DatasetError("no data rows")
    x_cols = schema.resolve_x(header)
    for required in (schema.t, schema.y):
        if required not in header:
            raise DatasetError(f"missing column {required!r}")
    pos = {h: i for i, h in enumerate(header)}

    values = np.empty((len(body), len(header)))
    for i, r in enumerate(body, start=1):
        if len(r) != len(header):
            raise DatasetError(f"ragged row {i}: {len(r)} cells, header has {len(header)}")
        for j, cell in enumerate(r):
            values[i - 1, j] = _parse_float(cell.strip(), i, header[j])

    t = values[:, pos[schema.t]]
    if not np.all((t == 0) | (t == 1)):
        bad = int(np.flatnonzero((t != 0) & (t != 1))[0]) + 1
        raise DatasetError(f"treatment not binary (row {bad})")

    def opt(colname):
        if colname is None or colname not in pos:
            return None
        return values[:, pos[colname]]

    rnd = opt(schema.randomized)
    return ObservationalDataset(
        x=values[:, [pos[c] for c in x_cols]],
        t=t,
        y=values[:, pos[schema.y]],
        y_cf=opt(schema.y_cf),
        mu0=opt(schema.mu0),
        mu1=opt(schema.mu1),
        randomized=None if rnd is None else rnd != 0,
        name=name if name is not None else os.path.splitext(os.path.basename(path))[0],
        noise_sd=noise_sd,
    )


def fmt(v: float) -> str:
    return format(float(v), ".17g")


def save_dataset(ds: ObservationalDataset, path) -> None:
    """Write ``ds`` in the layout :func:`load_dataset` reads with the default schema."""
    header = [f"x{j}" for j in range(ds.d)] + ["t", "y"]
    extra = [(n, getattr(ds, n)) for n in ("y_cf", "mu0", "mu1") if getattr(ds, n) is not None]
    header += [n for n, _ in extra]
    if ds.randomized is not None:
        header.append("randomized")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(ds)):
            row = [fmt(v) for v in ds.x[i]] + [str(int(ds.t[i])), fmt(ds.y[i])]
            row += [fmt(col[i]) for _, col in extra]
            if ds.randomized is not None:
                row.append("1" if ds.randomized[i] else "0")
            w.writerow(row)


# ---------------------------------------------------------------------------
# splitting


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[float, float, float] = (0.63, 0.27, 0.10)
    seed: int = 0

    def __post_init__(self):
        f = tuple(float(v) for v in self.fractions)
        if len(f) != 3:
            raise ValueError("split needs exactly three fractions")
        if any(v < 0 or v > 1 for v in f):
            raise ValueError("split fractions must lie in [0, 1]")
        if abs(sum(f) - 1.0) > 1e-9:
            raise ValueError(f"split fractions sum to {sum(f)}, not 1")
        object.__setattr__(self, "fractions", f)


class Split(NamedTuple):
    train: ObservationalDataset
    valid: ObservationalDataset
    test: ObservationalDataset


def _round_half_away(v: float) -> int:
    return int(math.floor(abs(v) + 0.5)) * (1 if v >= 0 else -1)


def split_sizes(n: int, fractions: Iterable[float]) -> list[int]:
    f = list(fractions)
    sizes = [_round_half_away(v * n) for v in f[:-1]]
    sizes.append(n - sum(sizes))
    return sizes


def split_indices(n: int, spec: SplitSpec) -> list[np.ndarray]:
    if n < 3:
        raise DatasetError("need at least 3 units to split")
    sizes = split_sizes(n, spec.fractions)
    for size, label in zip(sizes, ("train", "validation", "test")):
        if size <= 0:
            raise DatasetError(f"empty {label} block")
    perm = np.random.default_rng(spec.seed).permutation(n)
    cuts = np.cumsum(sizes)[:-1]
    return np.split(perm, cuts)


def split(ds: ObservationalDataset, spec: SplitSpec) -> Split:
    """Seeded permutation followed by contiguous train/validation/test blocks."""
    idx = split_indices(len(ds), spec)
    names = ("train", "valid", "test")
    return Split(*(ds.subset(i, name=f"{ds.name}:{nm}" if ds.name else nm)
                   for i, nm in zip(idx, names)))
