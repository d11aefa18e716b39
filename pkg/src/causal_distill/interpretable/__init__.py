"""Interpretable learners fit on ``(x, t, y)`` triples.

Every learner sees the feature vector ``[x, t]`` (treatment appended as the
last feature), so one fitted model covers both ``f(x, 0)`` and ``f(x, 1)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np

from ..oracle import Kernel, make_kernel
from .ensemble import Ensemble, gbm_fit, random_forest_fit
from .kernel import KernelModel, SingularSystemError, kernel_ridge_fit
from .linear import LassoConvergenceError, LinearModel, lasso_fit, soft_threshold
from .trees import (
    Node,
    RegressionTree,
    cart_fit,
    default_feature_names,
    honest_refit,
    honest_tree_fit,
    with_treatment,
)

InterpretableModel = Union[RegressionTree, LinearModel, KernelModel, Ensemble]

KINDS = ("cart", "honest_tree", "lasso", "kernel_ridge", "random_forest", "gbm")


@dataclass(frozen=True)
class LearnerSpec:
    kind: str
    max_depth: int = 3
    min_leaf: int = 1
    seed: int = 0
    lam: float = 0.01
    kernel: Kernel = field(default_factory=lambda: Kernel("rbf", 1.0))
    n_trees: int = 50
    n_rounds: int = 100
    shrinkage: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "kernel", make_kernel(self.kernel))
        if self.kind not in KINDS:
            raise ValueError(f"unknown learner kind {self.kind!r}; expected one of {KINDS}")
        if self.max_depth < 0:
            raise ValueError("max_depth must be nonnegative")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be at least 1")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.n_trees < 1:
            raise ValueError("n_trees must be at least 1")
        if self.n_rounds < 0:
            raise ValueError("n_rounds must be nonnegative")
        if not 0 < self.shrinkage <= 1:
            raise ValueError("shrinkage must lie in (0, 1]")

    @property
    def label(self) -> str:
        if self.kind in ("cart", "honest_tree"):
            return f"{self.kind}_d{self.max_depth}"
        if self.kind == "random_forest":
            return f"random_forest_d{self.max_depth}"
        if self.kind == "gbm":
            return f"gbm_d{self.max_depth}"
        return self.kind

    def with_seed(self, seed: int) -> "LearnerSpec":
        return replace(self, seed=int(seed))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "max_depth": self.max_depth, "min_leaf": self.min_leaf,
            "seed": self.seed, "lambda": self.lam, "kernel": self.kernel.to_dict(),
            "n_trees": self.n_trees, "n_rounds": self.n_rounds, "shrinkage": self.shrinkage,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LearnerSpec":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        return cls(**d)


def expand_learners(entries) -> list[LearnerSpec]:
    """Config entries to specs; a list-valued ``max_depth`` becomes a depth sweep."""
    out = []
    for e in entries:
        depths = e.get("max_depth")
        if isinstance(depths, (list, tuple)):
            for dep in depths:
                out.append(LearnerSpec.from_dict({**e, "max_depth": dep}))
        else:
            out.append(LearnerSpec.from_dict(e))
    return out


def fit(spec: LearnerSpec, X, t, y) -> InterpretableModel:
    """Fit ``spec``'s learner on triples ``(x_i, t_i, y_i)``."""
    Z = with_treatment(X, t)
    y = np.asarray(y, dtype=float)
    if len(y) == 0:
        raise ValueError("cannot fit on an empty dataset")
    if len(y) != len(Z):
        raise ValueError("label count does not match covariate rows")
    if not np.all(np.isfinite(y)):
        raise ValueError("labels contain NaN or infinite values")
    k = spec.kind
    if k == "cart":
        return cart_fit(Z, y, spec.max_depth, min(spec.min_leaf, len(y)))
    if k == "honest_tree":
        if len(y) == 1:
            return cart_fit(Z, y, 0, 1)
        return honest_tree_fit(Z, y, spec.max_depth, spec.min_leaf, spec.seed)
    if k == "lasso":
        return lasso_fit(Z, y, spec.lam)
    if k == "kernel_ridge":
        return kernel_ridge_fit(Z, y, spec.lam, spec.kernel)
    if k == "random_forest":
        if len(y) == 1:
            return Ensemble([cart_fit(Z, y, 0, 1)], "mean")
        return random_forest_fit(Z, y, spec.n_trees, spec.max_depth, spec.min_leaf, spec.seed)
    return gbm_fit(Z, y, spec.n_rounds, spec.shrinkage, spec.max_depth)


_CLASSES = {c.kind: c for c in (RegressionTree, LinearModel, KernelModel, Ensemble)}


def model_to_dict(model: InterpretableModel) -> dict:
    return model.to_dict()


def model_from_dict(d: dict) -> InterpretableModel:
    try:
        cls = _CLASSES[d["kind"]]
    except KeyError:
        raise ValueError(f"unknown model kind {d.get('kind')!r}") from None
    return cls.from_dict(d)


def save_model(model: InterpretableModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh)


def load_model(path) -> InterpretableModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


def render(model: InterpretableModel, feature_names=None) -> str:
    """Human-readable text form (indented rules for trees)."""
    return model.render(feature_names)


__all__ = [
    "Ensemble", "InterpretableModel", "KernelModel", "LassoConvergenceError", "LearnerSpec",
    "LinearModel", "Node", "RegressionTree", "SingularSystemError", "cart_fit", "default_feature_names",
    "expand_learners", "fit", "gbm_fit", "honest_refit", "honest_tree_fit", "kernel_ridge_fit",
    "lasso_fit", "load_model", "model_from_dict", "model_to_dict", "random_forest_fit", "render",
    "save_model", "soft_threshold", "with_treatment",
]
