"""Kernel ridge regression solved in the dual."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from ..oracle import Kernel, make_kernel
from .trees import with_treatment


class SingularSystemError(np.linalg.LinAlgError):
    pass


@dataclass
class KernelModel:
    support: np.ndarray
    dual: np.ndarray
    kernel: Kernel
    lam: float
    y_mean: float

    kind = "kernel"

    def predict_features(self, Z) -> np.ndarray:
        return self.kernel.gram(np.asarray(Z, dtype=float), self.support) @ self.dual + self.y_mean

    def predict(self, X, t) -> np.ndarray:
        return self.predict_features(with_treatment(X, t))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "support": self.support.tolist(),
            "dual": self.dual.tolist(),
            "kernel": self.kernel.to_dict(),
            "lambda": self.lam,
            "y_mean": self.y_mean,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["support"], dtype=float), np.asarray(d["dual"], dtype=float),
                   make_kernel(d["kernel"]), float(d["lambda"]), float(d["y_mean"]))

    def render(self, feature_names=None) -> str:
        return (f"kernel ridge: {len(self.dual)} support points, kernel={self.kernel.name}"
                f" (bandwidth {self.kernel.bandwidth:g}), lambda={self.lam:g}, mean={self.y_mean:.6g}")


def kernel_ridge_fit(Z, y, lam: float, kernel) -> KernelModel:
    """Solve ``(K + lam * n * I) alpha = y - mean(y)`` directly."""
    Z, y = np.asarray(Z, dtype=float), np.asarray(y, dtype=float)
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    kernel = make_kernel(kernel)
    n = len(y)
    y_mean = float(y.mean())
    A = kernel.gram(Z, Z) + lam * n * np.eye(n)
    try:
        if lam > 0:
            alpha = scipy.linalg.solve(A, y - y_mean, assume_a="pos")
        else:
            alpha = scipy.linalg.solve(A, y - y_mean)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise SingularSystemError(f"kernel system is singular (lambda={lam})") from exc
    except scipy.linalg.LinAlgWarning as exc:  # pragma: no cover - only when warnings are errors
        raise SingularSystemError(f"kernel system is ill-conditioned (lambda={lam})") from exc
    if lam == 0 and np.linalg.cond(A) > 1e12:
        raise SingularSystemError("kernel system is singular at lambda = 0")
    return KernelModel(Z.copy(), alpha, kernel, float(lam), y_mean)
