"""Distilling an oracle into an interpretable model over RCT-shaped pairs.

Each factual covariate vector is paired with both treatments, the pairs are
labelled by the oracle, and an interpretable learner is fit to the labels.
Because every ``x_i`` appears once per arm, the treatment marginal of the
pair set is exactly one half and independent of ``x``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .data import DatasetError, ObservationalDataset, fmt
from .interpretable import InterpretableModel, LearnerSpec, fit
from .predictors import evaluate


class OracleEvaluationError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class PairSet:
    x: np.ndarray
    t: np.ndarray

    def __len__(self) -> int:
        return len(self.t)

    @property
    def pairs(self) -> list[tuple[np.ndarray, int]]:
        return [(self.x[i], int(self.t[i])) for i in range(len(self))]


@dataclass(frozen=True, eq=False)
class DistilledDataset:
    x: np.ndarray
    t: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return len(self.y)

    @property
    def triples(self) -> list[tuple[np.ndarray, int, float]]:
        return [(self.x[i], int(self.t[i]), float(self.y[i])) for i in range(len(self))]


def build_rct_pairs(ds: ObservationalDataset) -> PairSet:
    """Factual block ``(x_i, t_i)`` followed by counterfactual block ``(x_i, 1 - t_i)``."""
    if len(ds) == 0:
        raise DatasetError("cannot build pairs from an empty dataset")
    x = np.vstack([ds.x, ds.x])
    t = np.concatenate([ds.t, 1 - ds.t]).astype(np.int64)
    return PairSet(x, t)


def label_with_oracle(pairs: PairSet, f_star) -> DistilledDataset:
    try:
        y = evaluate(f_star, pairs.x, pairs.t)
        bad = np.flatnonzero(~np.isfinite(y))
    except Exception as exc:
        # locate the first failing pair
        for i in range(len(pairs)):
            try:
                evaluate(f_star, pairs.x[i:i + 1], pairs.t[i:i + 1])
            except Exception:
                raise OracleEvaluationError(f"oracle failed on pair {i}: {exc}") from exc
        raise OracleEvaluationError(f"oracle failed: {exc}") from exc
    if len(bad):
        raise OracleEvaluationError(f"oracle returned a non-finite label for pair {int(bad[0])}")
    return DistilledDataset(pairs.x.copy(), pairs.t.copy(), y)


def distill(ds: ObservationalDataset, f_star, spec: LearnerSpec) -> InterpretableModel:
    data = label_with_oracle(build_rct_pairs(ds), f_star)
    return fit(spec, data.x, data.t, data.y)


def fit_baseline(ds: ObservationalDataset, spec: LearnerSpec) -> InterpretableModel:
    """Same learner on the factual triples only."""
    if len(ds) == 0:
        raise DatasetError("cannot fit on an empty dataset")
    return fit(spec, ds.x, ds.t, ds.y)


def relative_error_terms(f, f_star, pairs: PairSet) -> np.ndarray:
    return (evaluate(f, pairs.x, pairs.t) - evaluate(f_star, pairs.x, pairs.t)) ** 2


def relative_error(f, f_star, pairs: PairSet) -> float:
    """Mean squared gap between ``f`` and ``f_star`` over the pair set."""
    return float(relative_error_terms(f, f_star, pairs).mean())


def save_distilled(data: DistilledDataset, path) -> None:
    d = data.x.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{j}" for j in range(d)] + ["t", "y"])
        for i in range(len(data)):
            w.writerow([fmt(v) for v in data.x[i]] + [str(int(data.t[i])), fmt(data.y[i])])
