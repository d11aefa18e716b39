"""Uniform evaluation of anything that maps ``(x, t)`` to an outcome.

A predictor is either an object with a vectorized ``predict(X, t)`` method
(oracle networks, interpretable models) or a plain callable ``f(X, t)``.
"""

from __future__ import annotations

import numpy as np


def as_2d(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    return X


def evaluate(f, X, t) -> np.ndarray:
    """Evaluate ``f`` on rows of ``X`` with treatment ``t`` (scalar or per row)."""
    X = as_2d(X)
    t = np.broadcast_to(np.asarray(t, dtype=float), (X.shape[0],))
    fn = f.predict if hasattr(f, "predict") else f
    out = np.asarray(fn(X, t), dtype=float)
    return np.broadcast_to(out, (X.shape[0],)).astype(float)


def predicted_ite(f, X) -> np.ndarray:
    """Predicted individual effect ``f(x, 1) - f(x, 0)`` per row of ``X``."""
    return evaluate(f, X, 1.0) - evaluate(f, X, 0.0)
