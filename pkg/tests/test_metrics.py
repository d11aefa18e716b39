import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from causal_distill.data import DatasetError, SplitSpec, split
from causal_distill.datagen import DgpConfig, JobsLikeConfig, draw_parameters, generate_jobs_like, generate_observational
from causal_distill.interpretable import LearnerSpec
from causal_distill.distill import distill
from causal_distill.metrics import (
    BoundComputationError,
    BoundReport,
    EvalReport,
    aggregate,
    ate_error,
    att_and_error,
    evaluate_model,
    expected_losses,
    pehe,
    policy,
    policy_risk_estimate,
    policy_risk_from_assignments,
    randomized_groups,
    reports_csv,
    variance_terms,
    verify_theorem1,
    verify_theorem2,
)
from causal_distill.oracle import TrainConfig, swap_heads, train_oracle

from conftest import make_dataset


class SurfaceOracle:
    """Predicts the true surfaces (plus an optional offset); representation is x itself."""

    def __init__(self, cfg, offset=0.0):
        self.params, self.offset = draw_parameters(cfg), offset

    def predict(self, X, t):
        mu0, mu1 = self.params.mu(X)
        return np.where(np.asarray(t) == 1, mu1, mu0) + self.offset

    def representation(self, X):
        return np.asarray(X, dtype=float)


CFG = DgpConfig(n=300, d=3, noise_sd=0.5, seed=5)


@pytest.fixture(scope="module")
def ds():
    return generate_observational(CFG)


@pytest.fixture(scope="module")
def trained():
    data = generate_observational(DgpConfig(n=1000, d=5, confounding_strength=2.0, noise_sd=0.5,
                                            surface="exp_nonlinear", param_seed=1, exp_beta_scale=1.5, seed=2))
    tr, va, te = split(data, SplitSpec(seed=2))
    oracle = train_oracle(tr, va, TrainConfig(alpha=1.0, epochs=20, learning_rate=0.003, batch_size=64))
    return tr, te, oracle


# -- point metrics -----------------------------------------------------------------


def test_pehe_examples():
    assert pehe([1, 2], [1, 2]) == (0.0, 0.0)
    assert pehe([3, 4], [1, 2]) == (4.0, 2.0)
    v, r = pehe([1, 2, 3], [1, 1, 1])
    assert v == pytest.approx(5 / 3) and r == pytest.approx(1.2910, abs=1e-4)
    with pytest.raises(ValueError):
        pehe([1, 2], [1])


def test_ate_error_examples():
    assert ate_error([2, 0], [1, 1]) == 0.0
    assert pehe([2, 0], [1, 1])[0] == 1.0
    assert ate_error(np.array([1.0, 2.0]) + 0.5, [1.0, 2.0]) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        ate_error([1], [])


@given(arrays(float, st.integers(1, 50), elements=st.floats(-1e3, 1e3)), st.data())
def test_ate_error_below_root_pehe(tau_hat, data):
    tau = np.array(data.draw(st.lists(st.floats(-1e3, 1e3), min_size=len(tau_hat), max_size=len(tau_hat))))
    assert ate_error(tau_hat, tau) <= pehe(tau_hat, tau)[1] * (1 + 1e-12) + 1e-9


def test_policy_risk_hand_example():
    assert policy_risk_from_assignments([1, 1, 0, 0], [1, 1, 0, 0], [1, 0, 1, 1]) == pytest.approx(0.25)
    assert policy_risk_from_assignments([1, 1, 1], [1, 1, 0], [1, 1, 0]) == 0.0
    assert policy_risk_from_assignments([0, 0, 0], [1, 0, 0], [0, 1, 1]) == 0.0


def test_policy_risk_inestimable():
    assert policy_risk_from_assignments([1, 0], [0, 0], [1, 1]) is None
    with pytest.raises(ValueError):
        policy_risk_from_assignments([], [], [])


@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=40))
def test_policy_risk_in_unit_interval(rows):
    pi, t, y = map(np.array, zip(*rows))
    r = policy_risk_from_assignments(pi, t, y)
    assert r is None or 0.0 <= r <= 1.0


def test_policy_ties_go_to_control():
    np.testing.assert_array_equal(policy(lambda X, t: np.ones(len(X)), np.zeros((3, 1))), 0)


def test_att_examples():
    treated = make_dataset([[0.0], [1.0]], [1, 1], [1.0, 1.0])
    controls = make_dataset([[0.0], [1.0]], [0, 0], [0.0, 1.0])
    true, pred, err = att_and_error(lambda X, t: 0.5 * t, treated, controls)
    assert (true, pred, err) == (0.5, 0.5, 0.0)
    assert att_and_error(lambda X, t: 0.0, treated, controls)[2] == 0.5
    with pytest.raises(ValueError):
        att_and_error(lambda X, t: 0.0, treated.subset([]), controls)


# -- expected losses and variances --------------------------------------------------


def test_expected_losses_examples(ds):
    noiseless = generate_observational(DgpConfig(n=300, d=3, noise_sd=0.0, seed=5))
    assert expected_losses(SurfaceOracle(CFG), noiseless) == (0.0, 0.0, 0.0, 0.0)
    for v in expected_losses(SurfaceOracle(CFG), ds):
        assert v == pytest.approx(0.25, abs=1e-12)
    for v in expected_losses(SurfaceOracle(CFG, offset=1.0), ds):
        assert v == pytest.approx(1.25, abs=1e-12)


def test_mixture_identity(ds, trained):
    _, te, oracle = trained
    for f, data in ((SurfaceOracle(CFG, 0.3), ds), (oracle, te)):
        L = expected_losses(f, data)
        p1 = data.t.mean()
        assert abs(L.eps_f - (p1 * L.eps_f_t1 + (1 - p1) * L.eps_f_t0)) < 1e-10


def test_expected_losses_need_ground_truth():
    with pytest.raises(DatasetError):
        expected_losses(lambda X, t: 0.0, make_dataset([[0.0]], [1], [0.0], noise_sd=1.0))


def test_variance_terms():
    data = make_dataset(np.zeros((10, 1)), [1, 1, 1] + [0] * 7, np.zeros(10))
    v = variance_terms(data, 1.0)
    assert v.sigma_y1_sq == pytest.approx(0.3) and v.sigma_y0_sq == pytest.approx(0.7)
    assert v.sigma_yt_sq_p == 1.0 and v.sigma_yt_sq_ptilde == 1.0 and v.sigma_y_sq == 1.0
    assert all(x == 0 for x in variance_terms(data, 0.0))
    assert v.sigma_y_sq == min(v.sigma_yt_sq_p, v.sigma_yt_sq_ptilde)
    with pytest.raises(DatasetError):
        variance_terms(data)


# -- bounds -------------------------------------------------------------------------


def test_theorem2_at_oracle_reduces_to_theorem1_form(ds):
    f = SurfaceOracle(CFG, 0.2)
    rep = verify_theorem2(f, f, ds)
    assert rep.eps_rel == 0.0
    assert rep.rhs_first == pytest.approx(rep.eps_f + rep.eps_cf - 2 * rep.sigma_y_sq, abs=1e-15)


def test_perfect_oracle_noiseless():
    cfg = DgpConfig(n=200, d=3, noise_sd=0.0, seed=1)
    rep = verify_theorem1(SurfaceOracle(cfg), generate_observational(cfg))
    assert rep.pehe == 0 and rep.rhs_first == 0 and rep.holds_first and rep.holds_second


@pytest.mark.parametrize("depth", [1, 3, 6])
def test_theorem2_holds_for_distilled(trained, depth):
    tr, te, oracle = trained
    f = distill(tr, oracle, LearnerSpec("cart", max_depth=depth))
    rep = verify_theorem2(f, oracle, te)
    assert rep.holds_first
    assert rep.appendix_intermediate >= rep.pehe - rep.tol_mc
    assert rep.sigma_y_sq == min(rep.sigma_yt_sq_p, rep.sigma_yt_sq_ptilde)
    assert BoundReport.from_dict(rep.to_dict()) == rep


def test_theorem1_trained_and_swapped(trained):
    _, te, oracle = trained
    rep = verify_theorem1(oracle, te)
    bad = verify_theorem1(swap_heads(oracle), te)
    assert rep.holds_first and bad.holds_first
    assert bad.pehe_lhs > rep.pehe_lhs


def test_bound_rejects_nonfinite(ds):
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(BoundComputationError, match="eps_rel"):
        verify_theorem2(lambda X, t: np.full(len(X), 1e200), SurfaceOracle(CFG), ds)
    with pytest.raises(ValueError):
        verify_theorem1(SurfaceOracle(CFG), ds, b_phi=0.0)


# -- reports ------------------------------------------------------------------------


def test_evaluate_gating(ds):
    f = SurfaceOracle(CFG, 0.1)
    rep = evaluate_model(f, ds)
    assert rep.sqrt_pehe < 1e-12 and rep.policy_risk is None and rep.att_error is None
    bare = make_dataset(ds.x, ds.t, ds.y, randomized=np.arange(len(ds)) < 100)
    rep = evaluate_model(f, bare)
    assert rep.sqrt_pehe is None and rep.ate_error is None
    assert rep.policy_risk is not None and rep.att_error is not None


def test_jobs_groups():
    data = generate_jobs_like(JobsLikeConfig(30, 40, 50, seed=0))
    rct, treated, controls = randomized_groups(data)
    assert len(rct) == 70 and len(treated) + len(controls) == 70
    assert policy_risk_estimate(lambda X, t: t, rct) is not None


def test_aggregate():
    mean, se = aggregate([1.0, 2.0, 3.0, 4.0])
    assert mean == 2.5
    assert se == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)
    assert math.isnan(aggregate([1.0])[1])
    with pytest.raises(ValueError):
        aggregate([])


def test_reports_csv():
    text = reports_csv([EvalReport(3, sqrt_pehe=1.0).to_dict(), {"n_eval": 2, "extra": "x"}])
    lines = text.splitlines()
    assert lines[0].startswith("n_eval,sqrt_pehe") and lines[0].endswith("extra")
    assert len(lines) == 3
