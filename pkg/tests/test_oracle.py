import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from causal_distill.data import DatasetError, SplitSpec, split
from causal_distill.datagen import DgpConfig, generate_observational
from causal_distill.oracle import (
    CfrModel,
    Kernel,
    Layer,
    NonFiniteError,
    TrainConfig,
    TrainingDivergedError,
    cfr_objective,
    factual_loss,
    forward,
    gradient,
    init_model,
    load_model,
    mmd_squared,
    save_model,
    stratified_batches,
    train_oracle,
)
from causal_distill.predictors import predicted_ite


def affine(w, b):
    return Layer(np.atleast_2d(np.asarray(w, dtype=float)), np.atleast_1d(np.asarray(b, dtype=float)))


def scalar_model(h0=(1.0, 0.0), h1=(2.0, 1.0), kind="regression"):
    """phi = elu(x), heads h_t(r) = a_t r + c_t."""
    return CfrModel([affine(1.0, 0.0)], ([affine(*h0)], [affine(*h1)]), kind)


def fd_check(model, batch, cfg, step=1e-5):
    g = gradient(model, batch, cfg)
    params = model.parameters()
    worst = 0.0
    for k, p in enumerate(params):
        for idx in np.ndindex(p.shape):
            plus = [q.copy() for q in params]
            minus = [q.copy() for q in params]
            plus[k][idx] += step
            minus[k][idx] -= step
            num = (cfr_objective(model.with_parameters(plus), batch, cfg)
                   - cfr_objective(model.with_parameters(minus), batch, cfg)) / (2 * step)
            worst = max(worst, abs(num - g[k][idx]) / max(1e-6, abs(num), abs(g[k][idx])))
    return worst


# -- MMD ---------------------------------------------------------------------


def test_mmd_identical_samples():
    A = np.random.default_rng(0).normal(size=(20, 3))
    assert mmd_squared(A, A, "linear") < 1e-12
    assert mmd_squared(A, A, Kernel("rbf", 0.7)) < 1e-12


def test_mmd_linear_example():
    assert mmd_squared([[0, 0], [2, 0]], [[1, 1]], "linear") == pytest.approx(1.0, abs=1e-12)


def test_mmd_rbf_example():
    assert mmd_squared([[0.0]], [[10.0]], Kernel("rbf", 1.0)) == pytest.approx(2 - 2 * math.exp(-50), abs=1e-9)


def test_mmd_errors():
    with pytest.raises(ValueError, match="dimension"):
        mmd_squared(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        mmd_squared(np.zeros((0, 2)), np.zeros((1, 2)))


samples = st.integers(1, 6).flatmap(
    lambda d: st.tuples(arrays(float, st.tuples(st.integers(1, 8), st.just(d)), elements=st.floats(-5, 5)),
                        arrays(float, st.tuples(st.integers(1, 8), st.just(d)), elements=st.floats(-5, 5))))


@given(samples, st.sampled_from([Kernel("linear"), Kernel("rbf", 0.5), Kernel("rbf", 2.0)]))
def test_mmd_symmetric_nonnegative(ab, kernel):
    A, B = ab
    v = mmd_squared(A, B, kernel)
    assert v >= 0
    assert v == pytest.approx(mmd_squared(B, A, kernel), abs=1e-12)


@given(samples)
def test_linear_mmd_is_squared_mean_gap(ab):
    A, B = ab
    diff = A.mean(0) - B.mean(0)
    assert mmd_squared(A, B, "linear") == pytest.approx(float(diff @ diff), abs=1e-10, rel=1e-12)


# -- forward -------------------------------------------------------------------


def test_zero_network():
    m = init_model(3, (4, 2), (2,), scale=0.0)
    assert forward(m, [1.0, -2.0, 5.0], 1) == 0.0
    mb = init_model(3, (4, 2), (2,), outcome_kind="binary", scale=0.0)
    assert forward(mb, [1.0, -2.0, 5.0], 0) == 0.5


def test_affine_composition():
    m = scalar_model(h1=(2.0, 0.0))
    assert forward(m, [3.0], 1) == 6.0


def test_nonfinite_layer_reported():
    m = CfrModel([affine(1e200, 0.0), affine(1e200, 0.0)], ([affine(1, 0)], [affine(1, 0)]))
    with np.errstate(over="ignore"), pytest.raises(NonFiniteError, match="layer 1"):
        forward(m, [1.0], 0)
    with pytest.raises(NonFiniteError):
        forward(scalar_model(), [np.nan], 0)


# -- objective and gradient ------------------------------------------------------


BATCH = (np.array([[1.0], [2.0], [-1.0], [0.5]]), np.array([1, 0, 0, 0]), np.array([2.0, 1.0, 0.0, 1.0]))


def test_objective_hand_batch():
    m = scalar_model()
    r = np.array([1.0, 2.0, math.exp(-1) - 1, 0.5])
    sq = [(2 * r[0] + 1 - 2.0) ** 2, (r[1] - 1.0) ** 2, (r[2] - 0.0) ** 2, (r[3] - 1.0) ** 2]
    w = [1 / (2 * 0.25), 1 / (2 * 0.75), 1 / (2 * 0.75), 1 / (2 * 0.75)]
    factual = sum(wi * si for wi, si in zip(w, sq)) / 4
    gap = r[0] - (r[1] + r[2] + r[3]) / 3
    assert cfr_objective(m, BATCH, TrainConfig(alpha=0.0)) == pytest.approx(factual, rel=1e-14)
    expected = factual + 2.5 * math.sqrt(gap * gap + 1e-12)
    assert cfr_objective(m, BATCH, TrainConfig(alpha=2.5)) == pytest.approx(expected, rel=1e-14)


def test_objective_perfect_model_zero():
    X = np.array([[1.0], [2.0], [3.0]])
    t = np.array([0, 1, 1])
    m = scalar_model()
    y = m.predict(X, t)
    assert cfr_objective(m, (X, t, y), TrainConfig(alpha=0.0)) == 0.0
    for g in gradient(m, (X, t, y), TrainConfig(alpha=0.0)):
        assert np.all(np.abs(g) < 1e-10)


def test_single_arm_batch_rejected():
    X, t, y = np.ones((3, 1)), np.ones(3), np.zeros(3)
    with pytest.raises(DatasetError):
        cfr_objective(scalar_model(), (X, t, y), TrainConfig(alpha=1.0))
    cfr_objective(scalar_model(), (X, t, y), TrainConfig(alpha=0.0))


def test_affine_head_gradient():
    X, t, y = BATCH
    m = scalar_model()
    g = gradient(m, BATCH, TrainConfig(alpha=0.0))
    r = np.where(X[:, 0] > 0, X[:, 0], np.expm1(X[:, 0]))
    f = m.predict(X, t)
    w = np.where(t == 1, 2.0, 2 / 3)
    # parameter order: phi W, phi b, head0 W, head0 b, head1 W, head1 b
    for k, arm in ((2, 0), (4, 1)):
        sel = t == arm
        expect = np.sum(w[sel] * 2 * (f[sel] - y[sel]) * r[sel]) / len(y)
        assert g[k][0, 0] == pytest.approx(expect, rel=1e-12)


@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("kernel", [Kernel("linear"), Kernel("rbf", 1.0)])
def test_gradient_matches_finite_differences(seed, kernel):
    rng = np.random.default_rng(seed)
    m = init_model(2, (3, 2), (2,), rng=rng, scale=0.8, kernel=kernel)
    X = rng.normal(size=(8, 2))
    t = np.array([0, 1] * 4)
    y = rng.normal(size=8)
    cfg = TrainConfig(alpha=0.7, kernel=kernel)
    assert fd_check(m, (X, t, y), cfg) < 1e-4


def test_binary_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    m = init_model(2, (3, 2), (2,), outcome_kind="binary", rng=rng, scale=0.8)
    X = rng.normal(size=(6, 2))
    t = np.array([0, 1, 1, 0, 1, 0])
    y = np.array([0, 1, 0, 1, 1, 0], dtype=float)
    assert fd_check(m, (X, t, y), TrainConfig(alpha=0.3)) < 1e-4


# -- training --------------------------------------------------------------------


@pytest.fixture(scope="module")
def linear_split():
    ds = generate_observational(DgpConfig(n=2000, d=5, noise_sd=0.1, seed=0))
    return split(ds, SplitSpec(seed=0))


def test_training_fits_linear_surface(linear_split):
    tr, va, _ = linear_split
    m = train_oracle(tr, va, TrainConfig(alpha=0.1, epochs=50, learning_rate=0.003, seed=0))
    assert factual_loss(m, va) < 2 * 0.1 ** 2


def test_zero_epochs_returns_initial(linear_split):
    tr, va, _ = linear_split
    cfg = TrainConfig(epochs=0, seed=4)
    a, b = train_oracle(tr, va, cfg), train_oracle(tr, va, cfg)
    for p, q in zip(a.parameters(), b.parameters()):
        np.testing.assert_array_equal(p, q)


def test_training_deterministic(linear_split):
    tr, va, _ = linear_split
    cfg = TrainConfig(epochs=3, seed=1, learning_rate=0.003)
    a, b = train_oracle(tr, va, cfg), train_oracle(tr, va, cfg)
    for p, q in zip(a.parameters(), b.parameters()):
        assert p.tobytes() == q.tobytes()


def test_divergence_names_epoch(linear_split):
    tr, va, _ = linear_split
    cfg = TrainConfig(epochs=5, learning_rate=1e6, optimizer="sgd", alpha=0.0, seed=0)
    with pytest.raises(TrainingDivergedError, match="epoch"):
        train_oracle(tr, va, cfg)


def test_constant_effect_recovered():
    ds = generate_observational(DgpConfig(n=5000, d=5, noise_sd=0.1, heterogeneity=0.0, linear_offset=0.7, seed=0))
    tr, va, te = split(ds, SplitSpec(seed=0))
    m = train_oracle(tr, va, TrainConfig(alpha=0.1, epochs=20, learning_rate=0.003, seed=0))
    assert abs(predicted_ite(m, te.x).mean() - 0.7) < 0.1


def test_stratified_batches_cover_both_arms():
    t = np.array([0] * 90 + [1] * 10)
    batches = stratified_batches(t, 16, np.random.default_rng(0))
    assert all((t[b] == 0).any() and (t[b] == 1).any() for b in batches)
    np.testing.assert_array_equal(np.sort(np.concatenate(batches)), np.arange(100))


def test_config_validation():
    for bad in (dict(alpha=-1), dict(learning_rate=0), dict(batch_size=1), dict(optimizer="rmsprop")):
        with pytest.raises(ValueError):
            TrainConfig(**bad)
    cfg = TrainConfig(kernel={"name": "rbf", "bandwidth": 2.0})
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_checkpoint_roundtrip(tmp_path):
    m = init_model(3, rng=np.random.default_rng(0), kernel=Kernel("rbf", 0.5))
    save_model(m, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    for p, q in zip(m.parameters(), back.parameters()):
        np.testing.assert_array_equal(p, q)
    assert back.kernel == m.kernel
    X = np.random.default_rng(1).normal(size=(5, 3))
    np.testing.assert_array_equal(m.predict(X, 1), back.predict(X, 1))
