"""L1-regularized least squares by cyclic coordinate descent."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .trees import default_feature_names, with_treatment


class LassoConvergenceError(RuntimeError):
    def __init__(self, message, model):
        super().__init__(message)
        self.model = model


@dataclass
class LinearModel:
    """``intercept + z @ coefficients`` with coefficients in the original feature scale."""

    intercept: float
    coefficients: np.ndarray
    feature_means: np.ndarray
    feature_scales: np.ndarray
    n_sweeps: int = 0

    kind = "linear"

    def predict_features(self, Z) -> np.ndarray:
        return self.intercept + np.asarray(Z, dtype=float) @ self.coefficients

    def predict(self, X, t) -> np.ndarray:
        return self.predict_features(with_treatment(X, t))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "intercept": self.intercept,
            "coefficients": self.coefficients.tolist(),
            "feature_means": self.feature_means.tolist(),
            "feature_scales": self.feature_scales.tolist(),
            "n_sweeps": self.n_sweeps,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["intercept"]), np.asarray(d["coefficients"], dtype=float),
                   np.asarray(d["feature_means"], dtype=float),
                   np.asarray(d["feature_scales"], dtype=float), int(d.get("n_sweeps", 0)))

    def render(self, feature_names=None) -> str:
        names = feature_names or default_feature_names(len(self.coefficients))
        lines = [f"intercept = {self.intercept:.6g}"]
        lines += [f"{n}: {c:+.6g}" for n, c in zip(names, self.coefficients) if c != 0.0]
        return "\n".join(lines)


def soft_threshold(v, lam):
    return np.sign(v) * np.maximum(np.abs(v) - lam, 0.0)


def lasso_objective(Xs, yc, beta, lam) -> float:
    r = yc - Xs @ beta
    return float(r @ r / (2 * len(yc)) + lam * np.abs(beta).sum())


def coordinate_descent(Xs, yc, lam, tol=1e-8, max_sweeps=10000,
                       callback: Optional[Callable] = None):
    """Minimize ``(1/2n)|yc - Xs b|^2 + lam |b|_1`` for columns with ``mean(x^2) = 1``.

    Zero columns are skipped. Returns ``(beta, sweeps, converged)``.
    """
    n, p = Xs.shape
    beta = np.zeros(p)
    r = yc.astype(float).copy()
    active = [j for j in range(p) if np.any(Xs[:, j] != 0)]
    for sweep in range(1, max_sweeps + 1):
        max_change = 0.0
        for j in active:
            xj = Xs[:, j]
            old = beta[j]
            new = float(soft_threshold(xj @ r / n + old, lam))
            if new != old:
                r -= xj * (new - old)
                beta[j] = new
                max_change = max(max_change, abs(new - old))
        if callback is not None:
            callback(sweep, beta.copy())
        if max_change < tol:
            return beta, sweep, True
    return beta, max_sweeps, False


def lasso_fit(Z, y, lam: float, tol: float = 1e-8, max_sweeps: int = 10000,
              callback: Optional[Callable] = None) -> LinearModel:
    Z, y = np.asarray(Z, dtype=float), np.asarray(y, dtype=float)
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    means = Z.mean(0)
    scales = Z.std(0)
    const = scales <= 1e-12 * np.maximum(1.0, np.abs(means))
    safe = np.where(const, 1.0, scales)
    Xs = np.where(const, 0.0, (Z - means) / safe)
    y_mean = float(y.mean())
    beta_s, sweeps, ok = coordinate_descent(Xs, y - y_mean, lam, tol, max_sweeps, callback)
    coef = np.where(const, 0.0, beta_s / safe)
    model = LinearModel(y_mean - float(means @ coef), coef, means, np.where(const, 0.0, scales), sweeps)
    if not ok:
        raise LassoConvergenceError(f"lasso did not converge in {max_sweeps} sweeps", model)
    return model
