"""Synthetic data-generating processes with known potential-outcome surfaces.

Two families are provided:

* ``generate_observational`` draws Gaussian covariates, a confounded
  logistic treatment assignment (clipped away from 0 and 1) and additive
  homoscedastic Gaussian outcome noise around a ``linear`` or
  ``exp_nonlinear`` response surface.
* ``generate_jobs_like`` mimics a randomized trial pooled with a larger
  observational control group, with binary outcomes.

Every unit carries ``mu0``/``mu1`` so causal quantities are exactly computable.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.special import expit

from .data import DatasetError, ObservationalDataset

SURFACES = ("linear", "exp_nonlinear")

# coefficient support/probabilities for the exponential control surface
_EXP_BETA_VALUES = np.array([0.0, 0.1, 0.2, 0.3, 0.4])
_EXP_BETA_PROBS = np.array([0.6, 0.1, 0.1, 0.1, 0.1])


@dataclass(frozen=True)
class DgpConfig:
    n: int = 1000
    d: int = 10
    confounding_strength: float = 1.0
    propensity_clip: float = 0.05
    noise_sd: float = 1.0
    surface: str = "linear"
    seed: int = 0
    # linear surface: mu1 - mu0 = (beta1 - beta0).x + linear_offset
    linear_offset: float = 1.0
    heterogeneity: float = 1.0
    # exp_nonlinear surface: population ATE
    target_ate: float = 4.0
    # multiplies the coefficient support {0, .1, .2, .3, .4}
    exp_beta_scale: float = 1.0
    # when set, surface/propensity parameters come from this seed instead of
    # ``seed``, so realizations share one response surface
    param_seed: Optional[int] = None

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if self.d < 1:
            raise ValueError("d must be at least 1")
        if self.confounding_strength < 0:
            raise ValueError("confounding_strength must be nonnegative")
        if not 0 < self.propensity_clip <= 0.5:
            raise ValueError("propensity_clip must lie in (0, 0.5]")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be nonnegative")
        if self.surface not in SURFACES:
            raise ValueError(f"unknown surface {self.surface!r}; expected one of {SURFACES}")


@dataclass(frozen=True)
class DgpParams:
    """Realized parameters of an observational DGP."""

    surface: str
    w: np.ndarray
    beta0: Optional[np.ndarray] = None
    beta1: Optional[np.ndarray] = None
    offset: Optional[float] = None
    beta: Optional[np.ndarray] = None
    omega: Optional[float] = None

    def mu(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = np.atleast_2d(x)
        if self.surface == "linear":
            return x @ self.beta0, x @ self.beta1 + self.offset
        return np.exp((x + 0.5) @ self.beta), x @ self.beta - self.omega

    def to_dict(self) -> dict:
        out = {"surface": self.surface}
        for k, v in asdict(self).items():
            if k == "surface" or v is None:
                continue
            out[k] = v.tolist() if isinstance(v, np.ndarray) else float(v)
        return out


def _streams(seed: int, k: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(k)]


def draw_parameters(cfg: DgpConfig) -> DgpParams:
    """Parameters are a pure function of the config (``param_seed`` if set, else ``seed``)."""
    (rng,) = _streams(cfg.seed if cfg.param_seed is None else cfg.param_seed, 1)
    w = rng.standard_normal(cfg.d)
    w /= np.linalg.norm(w)
    if cfg.surface == "linear":
        beta0 = rng.standard_normal(cfg.d) / np.sqrt(cfg.d)
        beta1 = beta0 + cfg.heterogeneity * rng.standard_normal(cfg.d) / np.sqrt(cfg.d)
        return DgpParams("linear", w, beta0=beta0, beta1=beta1, offset=float(cfg.linear_offset))
    beta = cfg.exp_beta_scale * rng.choice(_EXP_BETA_VALUES, size=cfg.d, p=_EXP_BETA_PROBS)
    # (x + 0.5).beta ~ N(0.5 sum(beta), |beta|^2) for x ~ N(0, I): lognormal mean
    mean_mu0 = np.exp(0.5 * beta.sum() + 0.5 * beta @ beta)
    omega = -cfg.target_ate - mean_mu0
    return DgpParams("exp_nonlinear", w, beta=beta, omega=float(omega))


def propensity(cfg: DgpConfig, params: DgpParams, x: np.ndarray) -> np.ndarray:
    e = expit(cfg.confounding_strength * (np.atleast_2d(x) @ params.w))
    return np.clip(e, cfg.propensity_clip, 1.0 - cfg.propensity_clip)


def generate_observational(cfg: DgpConfig, name: str = "synthetic") -> ObservationalDataset:
    params = draw_parameters(cfg)
    _, x_rng, t_rng, noise_rng = _streams(cfg.seed, 4)
    x = x_rng.standard_normal((cfg.n, cfg.d))
    e = propensity(cfg, params, x)
    t = (t_rng.random(cfg.n) < e).astype(np.int64)
    mu0, mu1 = params.mu(x)
    eps_f, eps_cf = noise_rng.standard_normal((2, cfg.n))
    mu_t = np.where(t == 1, mu1, mu0)
    mu_cf = np.where(t == 1, mu0, mu1)
    return ObservationalDataset(
        x=x, t=t,
        y=mu_t + cfg.noise_sd * eps_f,
        y_cf=mu_cf + cfg.noise_sd * eps_cf,
        mu0=mu0, mu1=mu1,
        name=name, noise_sd=float(cfg.noise_sd),
    )


# ---------------------------------------------------------------------------
# randomized trial + observational controls, binary outcome


@dataclass(frozen=True)
class JobsLikeConfig:
    n_randomized_treated: int = 297
    n_randomized_control: int = 425
    n_observational_control: int = 2490
    d: int = 8
    seed: int = 0
    covariate_shift: float = 1.0
    baseline_intercept: float = 0.0
    effect_intercept: float = 0.8
    effect_slope: float = 2.0

    def __post_init__(self):
        counts = (self.n_randomized_treated, self.n_randomized_control, self.n_observational_control)
        if min(counts) < 1:
            raise ValueError("all group counts must be at least 1")
        if self.d < 1:
            raise ValueError("d must be at least 1")

    @property
    def n(self) -> int:
        return self.n_randomized_treated + self.n_randomized_control + self.n_observational_control


@dataclass(frozen=True)
class JobsLikeParams:
    a: np.ndarray
    baseline_intercept: float
    effect_intercept: float
    effect_slope: float
    shift: np.ndarray

    def latent(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = np.atleast_2d(x)
        l0 = x @ self.a + self.baseline_intercept
        return l0, l0 + self.effect_intercept + self.effect_slope * x[:, 0]

    def to_dict(self) -> dict:
        return {k: (v.tolist() if isinstance(v, np.ndarray) else float(v))
                for k, v in asdict(self).items()}


def draw_jobs_parameters(cfg: JobsLikeConfig) -> JobsLikeParams:
    (rng,) = _streams(cfg.seed, 1)
    a = rng.standard_normal(cfg.d) / np.sqrt(cfg.d)
    shift = np.full(cfg.d, cfg.covariate_shift / np.sqrt(cfg.d))
    return JobsLikeParams(a, float(cfg.baseline_intercept), float(cfg.effect_intercept),
                          float(cfg.effect_slope), shift)


def generate_jobs_like(cfg: JobsLikeConfig, name: str = "jobs_like") -> ObservationalDataset:
    """Randomized subgroup (coin-flip treatment) followed by shifted observational controls."""
    params = draw_jobs_parameters(cfg)
    _, x_rng, t_rng, y_rng = _streams(cfg.seed, 4)
    n_rand = cfg.n_randomized_treated + cfg.n_randomized_control
    x_rand = x_rng.standard_normal((n_rand, cfg.d))
    x_obs = x_rng.standard_normal((cfg.n_observational_control, cfg.d)) + params.shift
    # the two trial counts fix the subgroup size only; arms are fair coin flips
    t_rand = (t_rng.random(n_rand) < 0.5).astype(np.int64)
    x = np.vstack([x_rand, x_obs])
    t = np.concatenate([t_rand, np.zeros(cfg.n_observational_control, dtype=np.int64)])
    l0, l1 = params.latent(x)
    mu0, mu1 = expit(l0), expit(l1)
    u_f, u_cf = y_rng.random((2, cfg.n))
    p_t = np.where(t == 1, mu1, mu0)
    p_cf = np.where(t == 1, mu0, mu1)
    randomized = np.arange(cfg.n) < n_rand
    return ObservationalDataset(
        x=x, t=t,
        y=(u_f < p_t).astype(float),
        y_cf=(u_cf < p_cf).astype(float),
        mu0=mu0, mu1=mu1, randomized=randomized, name=name,
    )


def true_ite(ds: ObservationalDataset) -> np.ndarray:
    if not ds.has_ground_truth:
        raise DatasetError("dataset carries no ground-truth surfaces (mu0/mu1)")
    return ds.mu1 - ds.mu0


def write_sidecar(path, cfg, params) -> None:
    payload = {"config": asdict(cfg), "parameters": params.to_dict()}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
