"""Variance-reduction regression trees and their honest variant."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


@dataclass
class Node:
    value: float
    n_samples: int
    feature: Optional[int] = None
    threshold: Optional[float] = None
    left: Optional["Node"] = None
    right: Optional["Node"] = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"value": self.value, "n_samples": self.n_samples}
        return {
            "value": self.value,
            "n_samples": self.n_samples,
            "feature": self.feature,
            "threshold": self.threshold,
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Node":
        if "feature" not in d:
            return cls(float(d["value"]), int(d["n_samples"]))
        return cls(float(d["value"]), int(d["n_samples"]), int(d["feature"]), float(d["threshold"]),
                   cls.from_dict(d["left"]), cls.from_dict(d["right"]))


def _mean(y) -> float:
    return math.fsum(y) / len(y)


class RegressionTree:
    """Binary tree over the feature vector ``[x, t]``; ``z[f] <= threshold`` goes left."""

    kind = "tree"

    def __init__(self, root: Node, n_features: int):
        self.root = root
        self.n_features = n_features

    def predict_features(self, Z: np.ndarray) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        out = np.empty(len(Z))

        def route(node, idx):
            if node.is_leaf or not len(idx):
                out[idx] = node.value
                return
            go_left = Z[idx, node.feature] <= node.threshold
            route(node.left, idx[go_left])
            route(node.right, idx[~go_left])

        route(self.root, np.arange(len(Z)))
        return out

    def predict(self, X, t) -> np.ndarray:
        return self.predict_features(with_treatment(X, t))

    def apply(self, Z: np.ndarray) -> list[Node]:
        """Leaf reached by every row of ``Z``."""
        leaves = []
        for z in np.asarray(Z, dtype=float):
            node = self.root
            while not node.is_leaf:
                node = node.left if z[node.feature] <= node.threshold else node.right
            leaves.append(node)
        return leaves

    def leaves(self) -> list[Node]:
        out, stack = [], [self.root]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                out.append(node)
            else:
                stack.extend((node.right, node.left))
        return out

    @property
    def depth(self) -> int:
        def rec(node):
            return 0 if node.is_leaf else 1 + max(rec(node.left), rec(node.right))
        return rec(self.root)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "n_features": self.n_features, "root": self.root.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTree":
        return cls(Node.from_dict(d["root"]), int(d["n_features"]))

    def render(self, feature_names=None) -> str:
        names = feature_names or default_feature_names(self.n_features)
        lines = []

        def rec(node, indent):
            pad = "  " * indent
            if node.is_leaf:
                lines.append(f"{pad}value = {node.value:.6g}  (n={node.n_samples})")
                return
            name = names[node.feature]
            lines.append(f"{pad}if {name} <= {node.threshold:.6g}:")
            rec(node.left, indent + 1)
            lines.append(f"{pad}else:  # {name} > {node.threshold:.6g}")
            rec(node.right, indent + 1)

        rec(self.root, 0)
        return "\n".join(lines)


def default_feature_names(n_features: int) -> list[str]:
    return [f"x{j}" for j in range(n_features - 1)] + ["t"]


def with_treatment(X, t) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    t = np.broadcast_to(np.asarray(t, dtype=float), (len(X),))
    return np.column_stack([X, t])


# ---------------------------------------------------------------------------
# growing


def best_split(Z, y, min_leaf, features):
    """Best ``(gain, feature, threshold)`` over midpoints of sorted unique values.

    Ties go to the lower feature index, then the lower threshold.
    Returns ``None`` when no admissible split exists.
    """
    n = len(y)
    yc = y - y.mean()
    parent_sse = float(yc @ yc)
    tol = 1e-12 * max(parent_sse, 1.0)
    k = np.arange(1, n)
    size_ok = (k >= min_leaf) & (n - k >= min_leaf)
    if not size_ok.any():
        return None
    best = None
    for j in features:
        order = np.argsort(Z[:, j], kind="stable")
        v = Z[order, j]
        yo = yc[order]
        cs, cs2 = np.cumsum(yo), np.cumsum(yo * yo)
        left_sse = cs2[:-1] - cs[:-1] ** 2 / k
        rs = cs[-1] - cs[:-1]
        right_sse = (cs2[-1] - cs2[:-1]) - rs ** 2 / (n - k)
        gain = parent_sse - left_sse - right_sse
        ok = size_ok & (v[:-1] < v[1:])
        if not ok.any():
            continue
        g = np.where(ok, gain, -np.inf)
        top = g.max()
        i = int(np.flatnonzero(g >= top - tol)[0])
        if best is None or top > best[0] + tol:
            best = (float(top), int(j), float(0.5 * (v[i] + v[i + 1])))
    if best is None or best[0] <= tol:
        return None
    return best


def grow(Z, y, max_depth, min_leaf, feature_sampler: Optional[Callable] = None) -> Node:
    p = Z.shape[1]

    def rec(idx, depth):
        ys = y[idx]
        node = Node(_mean(ys), len(idx))
        if depth >= max_depth or len(idx) < 2 * min_leaf:
            return node
        feats = range(p) if feature_sampler is None else feature_sampler()
        split = best_split(Z[idx], ys, min_leaf, feats)
        if split is None:
            return node
        _, j, thr = split
        go_left = Z[idx, j] <= thr
        node.feature, node.threshold = j, thr
        node.left = rec(idx[go_left], depth + 1)
        node.right = rec(idx[~go_left], depth + 1)
        return node

    return rec(np.arange(len(y)), 0)


def cart_fit(Z, y, max_depth: int, min_leaf: int = 1) -> RegressionTree:
    """Greedy CART on the feature matrix ``Z``; leaves predict sample means."""
    Z, y = np.asarray(Z, dtype=float), np.asarray(y, dtype=float)
    if len(y) < max(min_leaf, 1):
        raise ValueError(f"need at least min_leaf={min_leaf} samples, got {len(y)}")
    return RegressionTree(grow(Z, y, max_depth, min_leaf), Z.shape[1])


def honest_refit(tree: RegressionTree, Z_est, y_est) -> RegressionTree:
    """Copy of ``tree`` whose node values are estimation-sample means.

    Nodes reached by no estimation sample inherit their parent's value.
    """
    Z_est, y_est = np.asarray(Z_est, dtype=float), np.asarray(y_est, dtype=float)

    def rec(node, idx, inherited):
        value = _mean(y_est[idx]) if len(idx) else inherited
        new = Node(value, len(idx), node.feature, node.threshold)
        if not node.is_leaf:
            go_left = Z_est[idx, node.feature] <= node.threshold
            new.left = rec(node.left, idx[go_left], value)
            new.right = rec(node.right, idx[~go_left], value)
        return new

    if not len(y_est):
        raise ValueError("estimation half is empty")
    return RegressionTree(rec(tree.root, np.arange(len(y_est)), _mean(y_est)), tree.n_features)


def honest_halves(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    return perm[: n // 2], perm[n // 2:]


def honest_tree_fit(Z, y, max_depth: int, min_leaf: int = 1, seed: int = 0) -> RegressionTree:
    """Structure from one seeded half of the data, leaf values from the other."""
    Z, y = np.asarray(Z, dtype=float), np.asarray(y, dtype=float)
    if len(y) < 2:
        raise ValueError("honest tree needs at least 2 samples")
    s, e = honest_halves(len(y), seed)
    structure = RegressionTree(grow(Z[s], y[s], max_depth, min_leaf), Z.shape[1])
    return honest_refit(structure, Z[e], y[e])
