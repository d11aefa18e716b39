"""Counterfactual-regression oracle: balanced representation plus two outcome heads.

The oracle is ``f(x, t) = h_t(phi(x))``. ``phi`` is a stack of fully connected
ELU layers; each head ``h_t`` has ELU hidden layers and an affine output
(passed through a logistic link for binary outcomes). Training minimizes an
arm-reweighted factual loss plus ``alpha * sqrt(MMD^2)`` between the
representations of the two arms, with gradients computed by hand.
"""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit, log_expit

from .data import DatasetError, ObservationalDataset
from .predictors import as_2d

logger = logging.getLogger(__name__)

MMD_EPS = 1e-12


class NonFiniteError(FloatingPointError):
    pass


class TrainingDivergedError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# kernels and MMD


@dataclass(frozen=True)
class Kernel:
    name: str = "linear"
    bandwidth: float = 1.0

    def __post_init__(self):
        if self.name not in ("linear", "rbf"):
            raise ValueError(f"unknown kernel {self.name!r}")
        if self.name == "rbf" and not self.bandwidth > 0:
            raise ValueError("rbf bandwidth must be positive")

    def gram(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        if self.name == "linear":
            return A @ B.T
        sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
        return np.exp(-np.maximum(sq, 0.0) / (2.0 * self.bandwidth ** 2))

    def to_dict(self) -> dict:
        return asdict(self)


def make_kernel(spec) -> Kernel:
    if isinstance(spec, Kernel):
        return spec
    if spec is None:
        return Kernel()
    if isinstance(spec, str):
        return Kernel(spec)
    if isinstance(spec, dict):
        return Kernel(**spec)
    name, bw = spec
    return Kernel(name, float(bw))


def _mmd2_and_grad(A: np.ndarray, B: np.ndarray, kernel: Kernel, need_grad: bool = True):
    nA, nB = len(A), len(B)
    if kernel.name == "linear":
        diff = A.mean(0) - B.mean(0)
        val = float(diff @ diff)
        if not need_grad:
            return val, None, None
        dA = np.broadcast_to(2.0 * diff / nA, A.shape).copy()
        dB = np.broadcast_to(-2.0 * diff / nB, B.shape).copy()
        return val, dA, dB
    Kaa, Kbb, Kab = kernel.gram(A, A), kernel.gram(B, B), kernel.gram(A, B)
    val = float(Kaa.mean() + Kbb.mean() - 2.0 * Kab.mean())
    if not need_grad:
        return val, None, None
    h2 = kernel.bandwidth ** 2
    # sum_j K_ij (a_i - c_j) = a_i * rowsum(K) - K @ C
    dA = (-2.0 / (nA * nA * h2)) * (A * Kaa.sum(1, keepdims=True) - Kaa @ A) \
        + (2.0 / (nA * nB * h2)) * (A * Kab.sum(1, keepdims=True) - Kab @ B)
    dB = (-2.0 / (nB * nB * h2)) * (B * Kbb.sum(1, keepdims=True) - Kbb @ B) \
        + (2.0 / (nA * nB * h2)) * (B * Kab.sum(0)[:, None] - Kab.T @ A)
    return val, dA, dB


def mmd_squared(A, B, kernel="linear") -> float:
    """Biased (V-statistic) squared MMD between two samples, clamped at 0."""
    A, B = as_2d(A), as_2d(B)
    if len(A) < 1 or len(B) < 1:
        raise ValueError("both samples must be nonempty")
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    val, _, _ = _mmd2_and_grad(A, B, make_kernel(kernel), need_grad=False)
    return max(val, 0.0)


# ---------------------------------------------------------------------------
# network


def elu(z):
    return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))


def elu_grad(z):
    return np.where(z > 0, 1.0, np.exp(np.minimum(z, 0.0)))


@dataclass
class Layer:
    W: np.ndarray  # (fan_in, fan_out)
    b: np.ndarray  # (fan_out,)


def _mlp_forward(layers: Sequence[Layer], X, act_last: bool, where: str):
    """Returns output and the per-layer (input, pre-activation) cache."""
    cache = []
    a = X
    for i, layer in enumerate(layers):
        z = a @ layer.W + layer.b
        cache.append((a, z))
        a = elu(z) if (act_last or i < len(layers) - 1) else z
        if not np.all(np.isfinite(a)):
            raise NonFiniteError(f"non-finite activation in {where} layer {i}")
    return a, cache


def _mlp_backward(layers, cache, d_out, act_last: bool):
    grads = [None] * len(layers)
    g = d_out
    for i in reversed(range(len(layers))):
        a_in, z = cache[i]
        if act_last or i < len(layers) - 1:
            g = g * elu_grad(z)
        grads[i] = Layer(a_in.T @ g, g.sum(0))
        g = g @ layers[i].W.T
    return grads, g


OUTCOME_KINDS = ("regression", "binary")


@dataclass
class CfrModel:
    """``phi`` layers plus one head per arm; ``heads[t]`` serves treatment ``t``."""

    phi: list[Layer]
    heads: tuple[list[Layer], list[Layer]]
    outcome_kind: str = "regression"
    kernel: Kernel = field(default_factory=Kernel)

    def __post_init__(self):
        if self.outcome_kind not in OUTCOME_KINDS:
            raise ValueError(f"unknown outcome_kind {self.outcome_kind!r}")
        self.heads = tuple(self.heads)
        if len(self.heads) != 2:
            raise ValueError("need exactly two heads")
        l_out = self.phi[-1].W.shape[1]
        for h in self.heads:
            if h[0].W.shape[0] != l_out or h[-1].W.shape[1] != 1:
                raise ValueError("head shapes do not match representation")

    # layout ---------------------------------------------------------------
    @property
    def rep_widths(self) -> list[int]:
        return [self.phi[0].W.shape[0]] + [L.W.shape[1] for L in self.phi]

    @property
    def head_widths(self) -> list[int]:
        h = self.heads[0]
        return [h[0].W.shape[0]] + [L.W.shape[1] for L in h]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for block in (self.phi, *self.heads):
            for L in block:
                out.extend((L.W, L.b))
        return out

    def with_parameters(self, params: Sequence[np.ndarray]) -> "CfrModel":
        it = iter(params)

        def rebuild(block):
            return [Layer(np.array(next(it), dtype=float), np.array(next(it), dtype=float))
                    for _ in block]

        phi = rebuild(self.phi)
        heads = (rebuild(self.heads[0]), rebuild(self.heads[1]))
        return CfrModel(phi, heads, self.outcome_kind, self.kernel)

    def copy(self) -> "CfrModel":
        return self.with_parameters(self.parameters())

    # inference ------------------------------------------------------------
    def representation(self, X) -> np.ndarray:
        r, _ = _mlp_forward(self.phi, as_2d(X), True, "representation")
        return r

    def _logits(self, R, t):
        out = np.empty(len(R))
        for k in (0, 1):
            m = t == k
            if m.any():
                o, _ = _mlp_forward(self.heads[k], R[m], False, f"head{k}")
                out[m] = o[:, 0]
        return out

    def predict(self, X, t) -> np.ndarray:
        X = as_2d(X)
        t = np.broadcast_to(np.asarray(t, dtype=float), (len(X),))
        out = self._logits(self.representation(X), t)
        return expit(out) if self.outcome_kind == "binary" else out

    def __call__(self, X, t):
        return self.predict(X, t)


def forward(model: CfrModel, x, t) -> float:
    """``h_t(phi(x))`` for a single covariate vector."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("non-finite input")
    return float(model.predict(x, float(t))[0])


def init_model(d: int, rep_widths=(32, 32, 16), head_hidden=(16,), outcome_kind="regression",
               scale: Optional[float] = None, rng=None, kernel=None) -> CfrModel:
    """Uniform initialization; ``scale=None`` uses the Glorot limit per layer."""
    rng = np.random.default_rng(rng)

    def block(widths):
        layers = []
        for fi, fo in zip(widths[:-1], widths[1:]):
            lim = np.sqrt(6.0 / (fi + fo)) if scale is None else scale
            layers.append(Layer(rng.uniform(-lim, lim, (fi, fo)), np.zeros(fo)))
        return layers

    rw = [d, *rep_widths]
    hw = [rw[-1], *head_hidden, 1]
    return CfrModel(block(rw), (block(hw), block(hw)), outcome_kind, make_kernel(kernel))


# ---------------------------------------------------------------------------
# objective and gradient


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 1.0
    kernel: Kernel = field(default_factory=Kernel)
    learning_rate: float = 1e-3
    batch_size: int = 100
    epochs: int = 100
    seed: int = 0
    weight_init_scale: Optional[float] = None
    optimizer: str = "adam"
    rep_widths: tuple = (32, 32, 16)
    head_hidden: tuple = (16,)
    outcome_kind: str = "regression"

    def __post_init__(self):
        object.__setattr__(self, "kernel", make_kernel(self.kernel))
        object.__setattr__(self, "rep_widths", tuple(self.rep_widths))
        object.__setattr__(self, "head_hidden", tuple(self.head_hidden))
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.outcome_kind not in OUTCOME_KINDS:
            raise ValueError(f"unknown outcome_kind {self.outcome_kind!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["rep_widths"] = list(self.rep_widths)
        out["head_hidden"] = list(self.head_hidden)
        return out


def arm_weights(t: np.ndarray) -> np.ndarray:
    u = t.mean()
    if u == 0 or u == 1:
        return np.ones_like(t, dtype=float)
    return t / (2 * u) + (1 - t) / (2 * (1 - u))


def _pointwise_loss(logits, y, kind):
    if kind == "regression":
        r = logits - y
        return r * r, 2.0 * r
    # cross-entropy on logits: -[y log s(z) + (1-y) log s(-z)]
    loss = -(y * log_expit(logits) + (1 - y) * log_expit(-logits))
    return loss, expit(logits) - y


def _objective_and_grad(model: CfrModel, X, t, y, alpha, kernel, need_grad=True):
    X, t, y = as_2d(X), np.asarray(t, dtype=float), np.asarray(y, dtype=float)
    n = len(X)
    if alpha > 0 and (t.min() == t.max()):
        raise DatasetError("IPM penalty needs both treatment arms in the batch")
    R, rep_cache = _mlp_forward(model.phi, X, True, "representation")
    w = arm_weights(t)
    logits = np.empty(n)
    head_caches = {}
    for k in (0, 1):
        m = t == k
        if m.any():
            o, c = _mlp_forward(model.heads[k], R[m], False, f"head{k}")
            logits[m] = o[:, 0]
            head_caches[k] = (m, c)
    loss, dloss = _pointwise_loss(logits, y, model.outcome_kind)
    value = float((w * loss).sum() / n)

    if alpha > 0:
        m0, m1 = t == 0, t == 1
        mmd2, dA, dB = _mmd2_and_grad(R[m0], R[m1], kernel, need_grad)
        root = np.sqrt(max(mmd2, 0.0) + MMD_EPS)
        value += alpha * root
    if not need_grad:
        return value, None

    d_logits = w * dloss / n
    dR = np.zeros_like(R)
    grads = {}
    for k, (m, c) in head_caches.items():
        g, dr = _mlp_backward(model.heads[k], c, d_logits[m][:, None], False)
        grads[k] = g
        dR[m] += dr
    if alpha > 0:
        coef = alpha / (2.0 * root)
        dR[m0] += coef * dA
        dR[m1] += coef * dB
    g_phi, _ = _mlp_backward(model.phi, rep_cache, dR, True)

    flat = []
    for L in g_phi:
        flat.extend((L.W, L.b))
    for k in (0, 1):
        if k in grads:
            for L in grads[k]:
                flat.extend((L.W, L.b))
        else:
            for L in model.heads[k]:
                flat.extend((np.zeros_like(L.W), np.zeros_like(L.b)))
    for g in flat:
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("non-finite gradient")
    return value, flat


def _unpack_batch(batch):
    if isinstance(batch, ObservationalDataset):
        return batch.x, batch.t, batch.y
    return batch


def cfr_objective(model: CfrModel, batch, cfg: TrainConfig) -> float:
    """Arm-reweighted factual loss plus ``alpha * sqrt(MMD^2 + 1e-12)``.

    ``batch`` is an :class:`ObservationalDataset` or an ``(X, t, y)`` tuple.
    """
    X, t, y = _unpack_batch(batch)
    value, _ = _objective_and_grad(model, X, t, y, cfg.alpha, cfg.kernel, need_grad=False)
    return value


def gradient(model: CfrModel, batch, cfg: TrainConfig) -> list[np.ndarray]:
    """Exact gradient of :func:`cfr_objective`, in ``model.parameters()`` order."""
    X, t, y = _unpack_batch(batch)
    _, g = _objective_and_grad(model, X, t, y, cfg.alpha, cfg.kernel)
    return g


# ---------------------------------------------------------------------------
# training


def stratified_batches(t: np.ndarray, batch_size: int, rng: np.random.Generator):
    """Shuffled minibatches with both arms spread evenly across batches."""
    idx1 = rng.permutation(np.flatnonzero(t == 1))
    idx0 = rng.permutation(np.flatnonzero(t == 0))
    n_batches = max(1, int(np.ceil(len(t) / batch_size)))
    n_batches = min(n_batches, max(1, min(len(idx0), len(idx1))))
    parts1 = np.array_split(idx1, n_batches)
    parts0 = np.array_split(idx0, n_batches)
    return [np.concatenate([a, b]) for a, b in zip(parts0, parts1)]


def factual_loss(model: CfrModel, ds: ObservationalDataset) -> float:
    logits = model._logits(model.representation(ds.x), ds.t.astype(float))
    loss, _ = _pointwise_loss(logits, ds.y, model.outcome_kind)
    return float(loss.mean())


def _init_output_bias(model: CfrModel, ds: ObservationalDataset):
    # start each head at its arm's mean outcome
    for k in (0, 1):
        yk = ds.y[ds.t == k]
        if not len(yk):
            continue
        m = float(yk.mean())
        if model.outcome_kind == "binary":
            m = float(np.log(np.clip(m, 1e-3, 1 - 1e-3) / (1 - np.clip(m, 1e-3, 1 - 1e-3))))
        model.heads[k][-1].b[:] = m


def train_oracle(train: ObservationalDataset, valid: ObservationalDataset,
                 cfg: TrainConfig) -> CfrModel:
    """Minibatch training; returns the snapshot with the lowest validation factual loss."""
    train.require_both_arms()
    rng = np.random.default_rng(cfg.seed)
    model = init_model(train.d, cfg.rep_widths, cfg.head_hidden, cfg.outcome_kind,
                       cfg.weight_init_scale, rng, cfg.kernel)
    _init_output_bias(model, train)
    if cfg.epochs == 0:
        return model

    params = [p.copy() for p in model.parameters()]
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    b1, b2, eps = 0.9, 0.999, 1e-8
    step = 0
    best = model.copy()
    best_loss = factual_loss(model, valid) if len(valid) else np.inf
    t_float = train.t.astype(float)

    for epoch in range(1, cfg.epochs + 1):
        for idx in stratified_batches(train.t, cfg.batch_size, rng):
            current = model.with_parameters(params)
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    _, grads = _objective_and_grad(current, train.x[idx], t_float[idx], train.y[idx],
                                                   cfg.alpha, cfg.kernel)
            except NonFiniteError as exc:
                raise TrainingDivergedError(f"training diverged at epoch {epoch}: {exc}") from exc
            step += 1
            for p, g, a, v in zip(params, grads, m1, m2):
                if cfg.optimizer == "sgd":
                    p -= cfg.learning_rate * g
                    continue
                a *= b1
                a += (1 - b1) * g
                v *= b2
                v += (1 - b2) * g * g
                a_hat = a / (1 - b1 ** step)
                v_hat = v / (1 - b2 ** step)
                p -= cfg.learning_rate * a_hat / (np.sqrt(v_hat) + eps)
        model = model.with_parameters(params)
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                vloss = factual_loss(model, valid) if len(valid) else factual_loss(model, train)
        except NonFiniteError:
            vloss = np.nan
        if not np.isfinite(vloss):
            raise TrainingDivergedError(f"validation loss is non-finite at epoch {epoch}")
        if vloss < best_loss:
            best_loss, best = vloss, model.copy()
    logger.debug("oracle training done: best validation loss %.6g", best_loss)
    return best


# ---------------------------------------------------------------------------
# checkpoints


def model_to_dict(model: CfrModel) -> dict:
    def block(layers):
        return [{"W": L.W.ravel().tolist(), "b": L.b.tolist()} for L in layers]

    return {
        "format": "cfr-model/1",
        "activation": "elu",
        "outcome_kind": model.outcome_kind,
        "kernel": model.kernel.to_dict(),
        "rep_widths": model.rep_widths,
        "head_widths": model.head_widths,
        "phi": block(model.phi),
        "heads": [block(model.heads[0]), block(model.heads[1])],
    }


def model_from_dict(d: dict) -> CfrModel:
    def block(widths, raw):
        if len(raw) != len(widths) - 1:
            raise ValueError("layer count does not match widths")
        return [Layer(np.asarray(r["W"], dtype=float).reshape(fi, fo), np.asarray(r["b"], dtype=float))
                for (fi, fo), r in zip(zip(widths[:-1], widths[1:]), raw)]

    return CfrModel(
        block(d["rep_widths"], d["phi"]),
        (block(d["head_widths"], d["heads"][0]), block(d["head_widths"], d["heads"][1])),
        d["outcome_kind"],
        make_kernel(d.get("kernel")),
    )


def save_model(model: CfrModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh)


def load_model(path) -> CfrModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


def swap_heads(model: CfrModel) -> CfrModel:
    """Copy of ``model`` with the two outcome heads exchanged."""
    m = copy.deepcopy(model)
    m.heads = (m.heads[1], m.heads[0])
    return m
