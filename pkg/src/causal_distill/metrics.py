"""Effect-estimation metrics and numerical checks of the PEHE error bounds.

Bound terms are computed on a synthetic dataset with known surfaces
``mu0``/``mu1`` and homoscedastic noise level ``noise_sd``. The pointwise
expected squared loss is then exact::

    l(x, t) = (f(x, t) - mu_t(x))**2 + noise_sd**2

so expected factual/counterfactual losses are averages of ``l`` over the
factual and flipped treatment assignments, with no resampling.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple, Optional

import numpy as np

from .data import DatasetError, ObservationalDataset
from .datagen import true_ite
from .distill import PairSet, build_rct_pairs, relative_error_terms
from .oracle import make_kernel, mmd_squared
from .predictors import evaluate, predicted_ite

logger = logging.getLogger(__name__)


class BoundComputationError(ArithmeticError):
    pass


def _pair(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("need at least one value")
    return a, b


def pehe(tau_hat, tau_true) -> tuple[float, float]:
    """Mean squared ITE error and its square root."""
    a, b = _pair(tau_hat, tau_true)
    v = float(np.mean((a - b) ** 2))
    return v, math.sqrt(v)


def ate_error(tau_hat, tau_true) -> float:
    a, b = _pair(tau_hat, tau_true)
    return abs(float(a.mean()) - float(b.mean()))


def policy(f, X) -> np.ndarray:
    """Treat iff ``f(x, 1) > f(x, 0)``; ties go to control."""
    return (predicted_ite(f, X) > 0).astype(np.int64)


def policy_risk_from_assignments(pi, t, y) -> Optional[float]:
    """Risk estimate from policy decisions on randomized units.

    Returns ``None`` when an arm the policy uses with positive probability has
    no matching randomized units (the term cannot be estimated).
    """
    pi, t, y = np.asarray(pi), np.asarray(t), np.asarray(y, dtype=float)
    if len(pi) == 0:
        raise ValueError("no randomized units")
    risk = 1.0
    for arm in (1, 0):
        p_arm = float(np.mean(pi == arm))
        if p_arm == 0:
            continue
        sel = (pi == arm) & (t == arm)
        if not sel.any():
            logger.warning("inestimable term: no randomized units with pi=%d and T=%d", arm, arm)
            return None
        risk -= float(y[sel].mean()) * p_arm
    return risk


def policy_risk_estimate(f, rct: ObservationalDataset) -> Optional[float]:
    return policy_risk_from_assignments(policy(f, rct.x), rct.t, rct.y)


def att_and_error(f, treated: ObservationalDataset, randomized_controls: ObservationalDataset):
    """``(att_true, att_pred, eps_att)`` from treated units and randomized controls."""
    if len(treated) == 0 or len(randomized_controls) == 0:
        raise ValueError("empty group")
    att_true = float(treated.y.mean() - randomized_controls.y.mean())
    att_pred = float(predicted_ite(f, treated.x).mean())
    return att_true, att_pred, abs(att_true - att_pred)


def randomized_groups(ds: ObservationalDataset):
    """Randomized subset, its treated units, and its controls."""
    if ds.randomized is None:
        raise DatasetError("dataset has no randomized flag")
    rct = ds.subset(np.flatnonzero(ds.randomized))
    return rct, rct.subset(np.flatnonzero(rct.t == 1)), rct.subset(np.flatnonzero(rct.t == 0))


# ---------------------------------------------------------------------------
# expected losses and variances


class ExpectedLosses(NamedTuple):
    eps_f: float
    eps_cf: float
    eps_f_t0: float
    eps_f_t1: float


class VarianceTerms(NamedTuple):
    sigma_y1_sq: float
    sigma_y0_sq: float
    sigma_yt_sq_p: float
    sigma_yt_sq_ptilde: float
    sigma_y_sq: float


def _noise(ds: ObservationalDataset, noise_sd):
    sd = ds.noise_sd if noise_sd is None else noise_sd
    if sd is None:
        raise DatasetError("missing noise model (noise_sd)")
    return float(sd)


def pointwise_loss(f, ds: ObservationalDataset, t, noise_sd=None) -> np.ndarray:
    if not ds.has_ground_truth:
        raise DatasetError("expected losses need ground-truth surfaces (mu0/mu1)")
    sd = _noise(ds, noise_sd)
    t = np.broadcast_to(np.asarray(t), (len(ds),))
    mu = np.where(t == 1, ds.mu1, ds.mu0)
    return (evaluate(f, ds.x, t) - mu) ** 2 + sd * sd


def expected_losses(f, ds: ObservationalDataset, noise_sd=None) -> ExpectedLosses:
    lf = pointwise_loss(f, ds, ds.t, noise_sd)
    lcf = pointwise_loss(f, ds, 1 - ds.t, noise_sd)
    treated = ds.t == 1
    # treated-arm loss averages l(x, 1) over treated covariates; control likewise
    eps_f_t1 = float(lf[treated].mean()) if treated.any() else 0.0
    eps_f_t0 = float(lf[~treated].mean()) if (~treated).any() else 0.0
    eps_f = float(lf.mean())
    p1 = float(treated.mean())
    mix = p1 * eps_f_t1 + (1 - p1) * eps_f_t0
    if abs(eps_f - mix) > 1e-10 * max(1.0, abs(eps_f)):
        raise BoundComputationError(f"factual-loss mixture identity violated: {eps_f} vs {mix}")
    return ExpectedLosses(eps_f, float(lcf.mean()), eps_f_t0, eps_f_t1)


def variance_terms(ds: ObservationalDataset, noise_sd=None) -> VarianceTerms:
    """Outcome-noise variances under the factual and counterfactual assignment."""
    s2 = _noise(ds, noise_sd) ** 2
    p1 = float(np.mean(ds.t == 1))
    s1, s0 = s2 * p1, s2 * (1 - p1)
    yt_p = s1 + s0
    # flipping t swaps the arm weights; the sum is unchanged
    yt_pt = s2 * (1 - p1) + s2 * p1
    return VarianceTerms(s1, s0, yt_p, yt_pt, min(yt_p, yt_pt))


def ipm_hat(f_star, ds: ObservationalDataset, kernel=None) -> float:
    ds.require_both_arms()
    kernel = make_kernel(kernel if kernel is not None else getattr(f_star, "kernel", None))
    R = f_star.representation(ds.x)
    return math.sqrt(mmd_squared(R[ds.t == 0], R[ds.t == 1], kernel))


# ---------------------------------------------------------------------------
# reports


@dataclass
class BoundReport:
    theorem: str
    n: int
    pehe: float
    pehe_lhs: float
    eps_rel: float
    eps_f: float
    eps_cf: float
    eps_f_t0: float
    eps_f_t1: float
    sigma_y1_sq: float
    sigma_y0_sq: float
    sigma_yt_sq_p: float
    sigma_yt_sq_ptilde: float
    sigma_y_sq: float
    ipm_hat: float
    b_phi: float
    rhs_first: float
    rhs_second: float
    tol_mc: float
    holds_first: bool
    holds_second: bool
    appendix_intermediate: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BoundReport":
        return cls(**d)


def _se(v: np.ndarray) -> float:
    return float(np.std(v, ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0


def _check_finite(values: dict):
    for k, v in values.items():
        if v is not None and not math.isfinite(v):
            raise BoundComputationError(f"non-finite bound term {k!r}")


def _common_terms(f_star, ds, b_phi, kernel, noise_sd):
    if not b_phi > 0:
        raise ValueError("b_phi must be positive")
    if not ds.has_ground_truth:
        raise DatasetError("bound verification needs ground-truth surfaces")
    losses = expected_losses(f_star, ds, noise_sd)
    var = variance_terms(ds, noise_sd)
    ipm = ipm_hat(f_star, ds, kernel)
    sd = _noise(ds, noise_sd)
    # per-unit excess losses for the Monte Carlo standard error
    excess = (pointwise_loss(f_star, ds, ds.t, sd) + pointwise_loss(f_star, ds, 1 - ds.t, sd)
              - 2 * sd * sd)
    return losses, var, ipm, excess


def verify_theorem2(f, f_star, ds: ObservationalDataset, pairs: Optional[PairSet] = None,
                    b_phi: float = 1.0, kernel=None, noise_sd=None) -> BoundReport:
    """PEHE(f)/4 against the relative-error bound through the oracle ``f_star``."""
    pairs = build_rct_pairs(ds) if pairs is None else pairs
    losses, var, ipm, excess = _common_terms(f_star, ds, b_phi, kernel, noise_sd)
    sq = (predicted_ite(f, ds.x) - true_ite(ds)) ** 2
    pehe_v = float(sq.mean())
    rel = relative_error_terms(f, f_star, pairs)
    eps_rel = float(rel.mean())
    lhs = pehe_v / 4
    rhs_first = 2 * eps_rel + losses.eps_f + losses.eps_cf - 2 * var.sigma_y_sq
    rhs_second = (2 * eps_rel + losses.eps_f_t0 + losses.eps_f_t1 + b_phi * ipm
                  - 2 * var.sigma_y_sq)
    appendix = (8 * eps_rel + 4 * (losses.eps_f - var.sigma_yt_sq_p)
                + 4 * (losses.eps_cf - var.sigma_yt_sq_ptilde))
    tol = 3 * math.sqrt(_se(sq / 4) ** 2 + (2 * _se(rel)) ** 2 + _se(excess) ** 2)
    terms = dict(pehe=pehe_v, eps_rel=eps_rel, ipm_hat=ipm, rhs_first=rhs_first,
                 rhs_second=rhs_second, appendix_intermediate=appendix, **losses._asdict())
    _check_finite(terms)
    return BoundReport(
        theorem="theorem2", n=len(ds), pehe=pehe_v, pehe_lhs=lhs, eps_rel=eps_rel,
        **losses._asdict(), **var._asdict(), ipm_hat=ipm, b_phi=float(b_phi),
        rhs_first=rhs_first, rhs_second=rhs_second, tol_mc=tol,
        holds_first=bool(lhs <= rhs_first + tol), holds_second=bool(lhs <= rhs_second + tol),
        appendix_intermediate=appendix,
    )


def verify_theorem1(f_star, ds: ObservationalDataset, b_phi: float = 1.0, kernel=None,
                    noise_sd=None) -> BoundReport:
    """PEHE(f*)/2 against the factual/counterfactual loss bound of the oracle itself."""
    losses, var, ipm, excess = _common_terms(f_star, ds, b_phi, kernel, noise_sd)
    sq = (predicted_ite(f_star, ds.x) - true_ite(ds)) ** 2
    pehe_v = float(sq.mean())
    lhs = pehe_v / 2
    rhs_first = losses.eps_f + losses.eps_cf - 2 * var.sigma_y_sq
    rhs_second = losses.eps_f_t0 + losses.eps_f_t1 + b_phi * ipm - 2 * var.sigma_y_sq
    tol = 3 * math.sqrt(_se(sq / 2) ** 2 + _se(excess) ** 2)
    _check_finite(dict(pehe=pehe_v, ipm_hat=ipm, rhs_first=rhs_first, rhs_second=rhs_second,
                       **losses._asdict()))
    return BoundReport(
        theorem="theorem1", n=len(ds), pehe=pehe_v, pehe_lhs=lhs, eps_rel=0.0,
        **losses._asdict(), **var._asdict(), ipm_hat=ipm, b_phi=float(b_phi),
        rhs_first=rhs_first, rhs_second=rhs_second, tol_mc=tol,
        holds_first=bool(lhs <= rhs_first + tol), holds_second=bool(lhs <= rhs_second + tol),
    )


@dataclass
class EvalReport:
    n_eval: int
    sqrt_pehe: Optional[float] = None
    pehe: Optional[float] = None
    ate_error: Optional[float] = None
    policy_risk: Optional[float] = None
    att_error: Optional[float] = None
    relative_error: Optional[float] = None

    METRICS = ("sqrt_pehe", "ate_error", "policy_risk", "att_error", "relative_error")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(**{f.name: d.get(f.name) for f in fields(cls)})

    def metric_items(self):
        for m in self.METRICS:
            v = getattr(self, m)
            if v is not None:
                yield m, v


def evaluate_model(f, ds: ObservationalDataset, f_star=None) -> EvalReport:
    """All metrics the dataset supports: PEHE/ATE need surfaces, R_POL/ATT a randomized flag."""
    rep = EvalReport(n_eval=len(ds))
    if ds.has_ground_truth:
        tau_hat, tau = predicted_ite(f, ds.x), true_ite(ds)
        rep.pehe, rep.sqrt_pehe = pehe(tau_hat, tau)
        rep.ate_error = ate_error(tau_hat, tau)
    if ds.randomized is not None and ds.randomized.any():
        rct, treated, controls = randomized_groups(ds)
        rep.policy_risk = policy_risk_estimate(f, rct)
        if len(treated) and len(controls):
            rep.att_error = att_and_error(f, treated, controls)[2]
    if f_star is not None and f_star is not f:
        rep.relative_error = float(relative_error_terms(f, f_star, build_rct_pairs(ds)).mean())
    return rep


def aggregate(values) -> tuple[float, float]:
    """Mean and standard error (sample sd / sqrt(k)); stderr is NaN for one value."""
    v = np.asarray(list(values), dtype=float)
    if len(v) == 0:
        raise ValueError("nothing to aggregate")
    se = float(np.std(v, ddof=1) / math.sqrt(len(v))) if len(v) > 1 else float("nan")
    return float(v.mean()), se


def report_json(report) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True)


def reports_csv(rows: list[dict]) -> str:
    """One CSV row per report dict; columns are the union of keys in first-seen order."""
    cols: list[str] = []
    for r in rows:
        cols += [k for k in r if k not in cols]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in cols})
    return buf.getvalue()
