"""Tree ensembles: bagged random forests and least-squares gradient boosting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .trees import RegressionTree, cart_fit, grow, with_treatment

RULES = ("mean", "boost")


@dataclass
class Ensemble:
    """``rule="mean"`` averages members; ``rule="boost"`` adds ``shrinkage * member`` to ``init``."""

    members: list[RegressionTree]
    rule: str = "mean"
    init: float = 0.0
    shrinkage: float = 1.0
    train_mse: list[float] = field(default_factory=list)

    kind = "ensemble"

    def predict_features(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        if self.rule == "mean":
            return np.mean([m.predict_features(Z) for m in self.members], axis=0)
        out = np.full(len(Z), self.init)
        for m in self.members:
            out += self.shrinkage * m.predict_features(Z)
        return out

    def predict(self, X, t) -> np.ndarray:
        return self.predict_features(with_treatment(X, t))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "rule": self.rule,
            "init": self.init,
            "shrinkage": self.shrinkage,
            "train_mse": list(self.train_mse),
            "members": [m.to_dict() for m in self.members],
        }

    @classmethod
    def from_dict(cls, d):
        return cls([RegressionTree.from_dict(m) for m in d["members"]], d["rule"],
                   float(d["init"]), float(d["shrinkage"]), [float(v) for v in d.get("train_mse", [])])

    def render(self, feature_names=None) -> str:
        head = (f"ensemble ({self.rule}) of {len(self.members)} trees" if self.rule == "mean" else
                f"boosted ensemble: init {self.init:.6g} + {self.shrinkage:g} * sum of "
                f"{len(self.members)} trees")
        parts = [head]
        for i, m in enumerate(self.members):
            parts.append(f"# tree {i}")
            parts.append(m.render(feature_names))
        return "\n".join(parts)


def random_forest_fit(Z, y, n_trees: int, max_depth: int, min_leaf: int = 1, seed: int = 0) -> Ensemble:
    """Bootstrap-aggregated CART with ``ceil(sqrt(p))`` candidate features per split."""
    Z, y = np.asarray(Z, dtype=float), np.asarray(y, dtype=float)
    n, p = Z.shape
    if n < 2:
        raise ValueError("random forest needs at least 2 samples")
    m_try = math.ceil(math.sqrt(p))
    members = []
    for k in range(n_trees):
        rng = np.random.default_rng([seed, k])
        boot = rng.integers(0, n, n)

        def sampler(rng=rng):
            return np.sort(rng.choice(p, size=m_try, replace=False))

        root = grow(Z[boot], y[boot], max_depth, min_leaf, sampler)
        members.append(RegressionTree(root, p))
    return Ensemble(members, "mean")


def gbm_fit(Z, y, n_rounds: int, shrinkage: float, max_depth: int) -> Ensemble:
    """Stage-wise squared-loss boosting; each round fits a tree to current residuals."""
    Z, y = np.asarray(Z, dtype=float), np.asarray(y, dtype=float)
    if not 0 < shrinkage <= 1:
        raise ValueError("shrinkage must lie in (0, 1]")
    init = math.fsum(y) / len(y)
    pred = np.full(len(y), init)
    history = [float(np.mean((y - pred) ** 2))]
    members = []
    for _ in range(n_rounds):
        tree = cart_fit(Z, y - pred, max_depth, 1)
        pred = pred + shrinkage * tree.predict_features(Z)
        members.append(tree)
        history.append(float(np.mean((y - pred) ** 2)))
    return Ensemble(members, "boost", init, float(shrinkage), history)
