"""Predictive scores, heterogeneity measures and elasticity profiles."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .choice import ChoiceDataset, ChoiceModel
from .errors import NumericalError, StructuralError
from .params import unpack

GUMBEL_VAR = np.pi ** 2 / 6.0


# ----------------------------------------------------------------------------
# Predictive distributions
# ----------------------------------------------------------------------------

def _alpha_for(fit, data, parts, rng, allow_new_groups):
    """One draw of random coefficients for every group of ``data``."""
    idx = fit.group_index(data.group_ids, allow_new=allow_new_groups)
    alpha_fit = fit.sample_alpha(rng)
    alpha = alpha_fit[np.maximum(idx, 0)]
    new = idx < 0
    if np.any(new):
        z = rng.standard_normal((int(new.sum()), alpha.shape[1]))
        alpha[new] = parts.xi + z @ parts.chol.T
    return alpha


def predictive_probs(fit, data, n_sim=None, rng=None, allow_new_groups=False, return_se=False):
    """Monte Carlo predictive choice probabilities.

    Each draw takes ``theta`` from ``q(theta)`` and the random coefficients
    of known groups from their fitted ``q(alpha_i)``.  Groups absent from
    the fit raise :class:`StructuralError` unless ``allow_new_groups``, in
    which case their coefficients are drawn from ``N(xi, Sigma)`` at the
    sampled ``theta``.

    Returns
    -------
    probs : ndarray, shape (N, R)
    se : ndarray, shape (N, R)
        Monte Carlo standard errors (only if ``return_se``).
    """
    n_sim = n_sim or fit.schedule.n_sim
    rng = np.random.default_rng(rng)
    model = ChoiceModel(fit.spec, data)
    fit.group_index(data.group_ids, allow_new=allow_new_groups)
    total = np.zeros(data.available.shape)
    total_sq = np.zeros_like(total)
    for _ in range(n_sim):
        parts = unpack(fit.sample_theta(rng), fit.layout)
        alpha = _alpha_for(fit, data, parts, rng, allow_new_groups)
        p = model.probabilities(parts, alpha)
        total += p
        if return_se:
            total_sq += p * p
    mean = total / n_sim
    if not return_se:
        return mean
    var = np.maximum(total_sq / n_sim - mean ** 2, 0.0)
    return mean, np.sqrt(var / max(n_sim - 1, 1))


def plugin_probs(fit, data):
    """Choice probabilities at the variational means of ``theta`` and ``alpha``."""
    model = ChoiceModel(fit.spec, data)
    idx = fit.group_index(data.group_ids)
    return model.probabilities(fit.theta_mean_parts(), fit.local.mean[idx])


def marginal_share_probs(train, data):
    """Naive benchmark: training choice shares renormalised over each choice set."""
    shares = np.bincount(train.choice, minlength=train.n_choice) / train.n_occasions
    p = np.where(data.available, shares[None, :], 0.0)
    tot = p.sum(axis=1, keepdims=True)
    uniform = data.available / data.available.sum(axis=1, keepdims=True)
    return np.where(tot > 0, p / np.where(tot > 0, tot, 1.0), uniform)


# ----------------------------------------------------------------------------
# Scores
# ----------------------------------------------------------------------------

def log_score(probs, outcomes, floor=1e-300, return_floored=False):
    """Mean log predictive probability of the realised outcomes.

    Probabilities below ``floor`` are raised to it and counted; a warning
    reports the count.
    """
    probs = np.asarray(probs, dtype=float)
    outcomes = np.asarray(outcomes, dtype=int)
    if probs.ndim != 2 or probs.shape[0] != outcomes.shape[0]:
        raise StructuralError("probabilities and outcomes are not aligned")
    p = probs[np.arange(outcomes.size), outcomes]
    low = p < floor
    n_low = int(low.sum())
    if n_low:
        warnings.warn(f"{n_low} realised outcomes had predicted probability below {floor:g}",
                      RuntimeWarning, stacklevel=2)
    value = float(np.mean(np.log(np.maximum(p, floor))))
    return (value, n_low) if return_floored else value


def predicted_labels(probs):
    """Argmax labels; ties go to the lowest alternative index."""
    return np.argmax(np.asarray(probs), axis=1)


@dataclass
class PredictiveReport:
    probs: np.ndarray
    log_score: float
    f1: float
    f1_per_class: np.ndarray
    weights: np.ndarray

    def to_frame(self):
        return pd.DataFrame({"metric": ["log_score", "f1"], "value": [self.log_score, self.f1]})


def f1_by_class(labels, outcomes, n_classes):
    """Per-class F1 scores and observed-share weights."""
    labels = np.asarray(labels, dtype=int)
    outcomes = np.asarray(outcomes, dtype=int)
    conf = np.zeros((n_classes, n_classes))
    np.add.at(conf, (outcomes, labels), 1.0)
    tp = np.diag(conf)
    fp = conf.sum(axis=0) - tp
    fn = conf.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    f1 = np.divide(2 * tp, denom, out=np.zeros(n_classes), where=denom > 0)
    weights = conf.sum(axis=1) / max(outcomes.size, 1)
    return f1, weights


def weighted_f1(probs, outcomes, n_classes=None):
    """F1 averaged over classes with weights equal to the observed class shares."""
    probs = np.asarray(probs)
    n_classes = n_classes or probs.shape[1]
    f1, weights = f1_by_class(predicted_labels(probs), outcomes, n_classes)
    return float(np.sum(weights * f1))


def predictive_report(probs, outcomes):
    probs = np.asarray(probs)
    f1, weights = f1_by_class(predicted_labels(probs), outcomes, probs.shape[1])
    return PredictiveReport(probs, log_score(probs, outcomes), float(np.sum(weights * f1)),
                            f1, weights)


# ----------------------------------------------------------------------------
# Heterogeneity
# ----------------------------------------------------------------------------

@dataclass
class HeterogeneityReport:
    """Utility-variance contributions of the random coefficients.

    ``AH`` and ``R`` are indexed by the non-reference items ``1..J-1`` and
    ``CH`` by random covariate.
    """

    TH: float
    AH: np.ndarray
    CH: np.ndarray
    R: np.ndarray

    def to_frame(self, random_names=None):
        rows = [("TH", "", self.TH)]
        rows += [("AH", str(j + 1), v) for j, v in enumerate(self.AH, start=1)]
        rows += [("R", str(j + 1), v) for j, v in enumerate(self.R, start=1)]
        names = random_names or [str(k + 1) for k in range(len(self.CH))]
        rows += [("CH", names[k], v) for k, v in enumerate(self.CH)]
        return pd.DataFrame(rows, columns=["measure", "index", "value"])


def item_availability(data, spec):
    """Item-level availability: an item is offered if any alternative containing it is."""
    return (data.available.astype(float) @ spec.membership) > 0


def heterogeneity(sigma, data, spec=None):
    """Total, per-alternative and per-covariate heterogeneity at covariance ``sigma``.

    Unavailable items contribute zero covariates, so partial choice sets use
    the sub-stacked design.  ``CH_k`` weights each occasion by one over its
    number of available items (reference included).
    """
    sigma = np.asarray(sigma, dtype=float)
    J, wr = data.n_items, data.n_random
    w = wr * (J - 1)
    if sigma.shape != (w, w):
        raise StructuralError(f"sigma must be {w}x{w}")
    if spec is None:
        avail = data.available if data.n_choice == J else np.ones((data.n_occasions, J), bool)
    else:
        avail = item_availability(data, spec)
    x = data.x_random[:, 1:, :] * avail[:, 1:, None]                 # (N, J-1, w_r)
    n = x.shape[0]
    xs = x.reshape(n, w)
    TH = float(np.mean(np.einsum("nw,wv,nv->n", xs, sigma, xs))) if n else 0.0
    blocks = sigma.reshape(J - 1, wr, J - 1, wr)
    AH = np.zeros(J - 1)
    for j in range(J - 1):
        rows = avail[:, j + 1]
        if rows.any():
            xj = x[rows, j, :]
            AH[j] = float(np.mean(np.einsum("nk,kl,nl->n", xj, blocks[j, :, j, :], xj)))
    n_items = avail.sum(axis=1)
    CH = np.zeros(wr)
    for k in range(wr):
        xk = x[:, :, k]                                              # (N, J-1)
        sk = blocks[:, k, :, k]
        CH[k] = float(np.mean(np.einsum("nj,jl,nl->n", xk, sk, xk) / n_items)) if n else 0.0
    R = AH / (AH + GUMBEL_VAR)
    return HeterogeneityReport(TH, AH, CH, R)


def sigma_posterior_mean(fit, n_sim=None, rng=None, return_se=False):
    """Monte Carlo mean of ``Sigma`` under ``q(theta)``."""
    n_sim = n_sim or fit.schedule.n_sim
    rng = np.random.default_rng(rng)
    draws = np.array([unpack(fit.sample_theta(rng), fit.layout).sigma for _ in range(n_sim)])
    mean = draws.mean(axis=0)
    if return_se:
        return mean, draws.std(axis=0, ddof=1) / np.sqrt(n_sim)
    return mean


# ----------------------------------------------------------------------------
# Elasticities
# ----------------------------------------------------------------------------

def _price_slots(data, price):
    """Locations ``("f"|"r", k)`` of the log-price covariate."""
    slots = [("f", k) for k, name in enumerate(data.fixed_names) if name == price]
    slots += [("r", k) for k, name in enumerate(data.random_names) if name == price]
    if not slots:
        raise StructuralError(f"no covariate named {price!r}")
    return slots


def elasticity_grid(data, item, price, n_grid=20, spec=None):
    """Price grid from the 10th to the 90th percentile of the observed prices of ``item``."""
    kind, k = _price_slots(data, price)[0]
    x = data.x_fixed if kind == "f" else data.x_random
    avail = item_availability(data, spec) if spec is not None else np.ones(
        (data.n_occasions, data.n_items), bool)
    prices = np.exp(x[avail[:, item], item, k])
    lo, hi = np.percentile(prices, [10, 90])
    if not hi > lo:
        raise StructuralError("observed prices have no spread")
    return np.linspace(lo, hi, n_grid)


def elasticity_profile(fit, data, item, price, n_grid=20, n_sim=None, rng=None,
                       discrete=(), groups=None):
    """Own-price elasticity of ``item`` over a price grid, averaged over the VA.

    Other covariates are held at their sample means with the ``discrete``
    covariates (names) at 0.  The probability of ``item`` is the total
    probability of the alternatives containing it.  Derivatives along the
    grid use second-order central differences inside and second-order
    one-sided differences at the ends.

    Returns
    -------
    pandas.DataFrame
        Columns ``group, alternative, price, elasticity``.
    """
    spec = fit.spec
    if not 1 <= item < data.n_items:
        raise StructuralError("elasticities are defined for non-reference items")
    n_sim = n_sim or fit.schedule.n_sim
    rng = np.random.default_rng(rng)
    grid = elasticity_grid(data, item, price, n_grid, spec)
    slots = _price_slots(data, price)
    xf_mean = data.x_fixed.mean(axis=0)
    xr_mean = data.x_random.mean(axis=0)
    for k, name in enumerate(data.fixed_names):
        if name in discrete:
            xf_mean[:, k] = 0.0
    for k, name in enumerate(data.random_names):
        if name in discrete:
            xr_mean[:, k] = 0.0
    gidx = np.arange(data.n_groups) if groups is None else np.asarray(groups)
    S, G = gidx.size, grid.size
    xf = np.broadcast_to(xf_mean, (S * G,) + xf_mean.shape).copy()
    xr = np.broadcast_to(xr_mean, (S * G,) + xr_mean.shape).copy()
    logp = np.tile(np.log(grid), S)
    for kind, k in slots:
        (xf if kind == "f" else xr)[:, item, k] = logp
    avail = np.ones((S * G, spec.n_choice), dtype=bool)
    probe = ChoiceDataset(xf, xr, avail, np.zeros(S * G, dtype=int), np.repeat(np.arange(S), G),
                          data.group_ids[gidx], None, list(data.fixed_names),
                          list(data.random_names))
    model = ChoiceModel(spec, probe)
    contains = spec.membership[:, item] > 0
    acc = np.zeros((S, G))
    for _ in range(n_sim):
        parts = unpack(fit.sample_theta(rng), fit.layout)
        alpha = _alpha_for(fit, probe, parts, rng, allow_new_groups=False)
        P = model.probabilities(parts, alpha)[:, contains].sum(axis=1).reshape(S, G)
        dP = np.gradient(P, grid, axis=1, edge_order=2)
        acc += dP * grid[None, :] / P
    E = acc / n_sim
    return pd.DataFrame({"group": np.repeat(data.group_ids[gidx], G),
                         "alternative": item + 1, "price": np.tile(grid, S),
                         "elasticity": E.ravel()})


# ----------------------------------------------------------------------------
# Bundle marginals
# ----------------------------------------------------------------------------

def bundle_marginal(probs, membership, base_items):
    """Marginal probabilities of base items from bundle probabilities.

    ``Pr(base = j) = sum_{r contains j} p_r / (1 - P0)`` where ``P0`` is the
    total probability of alternatives containing no base item.  Each
    alternative may hold at most one base item.
    """
    probs = np.asarray(probs, dtype=float)
    M = np.asarray(membership, dtype=float)[:, list(base_items)]
    if np.any(M.sum(axis=1) > 1):
        raise StructuralError("an alternative contains more than one base item")
    p0 = probs[:, M.sum(axis=1) == 0].sum(axis=1)
    if np.any(p0 >= 1 - 1e-12):
        raise NumericalError("no probability mass on base items",
                             index=int(np.flatnonzero(p0 >= 1 - 1e-12)[0]))
    return (probs @ M) / (1.0 - p0)[:, None]


def bundle_pasta_marginal(fit, data, base_items, n_sim=None, rng=None):
    """Predictive base-item marginals on occasions whose choice contains a base item.

    Returns
    -------
    probs : ndarray, shape (N_base, len(base_items))
    outcomes : ndarray of int
        Position of the chosen base item within ``base_items``.
    rows : ndarray of int
        Occasion rows of ``data`` kept.
    """
    M = fit.spec.membership[:, list(base_items)]
    has_base = M.sum(axis=1) > 0
    rows = np.flatnonzero(has_base[data.choice])
    sub = data.take(rows)
    probs = predictive_probs(fit, sub, n_sim, rng)
    outcomes = np.argmax(M[sub.choice], axis=1)
    return bundle_marginal(probs, fit.spec.membership, base_items), outcomes, rows
