"""Variational inference engines.

Two fitting routines share the Gaussian factor approximation of the global
parameters, the ADADELTA step rule and the stopping rule:

* :func:`cvi_fit` approximates each group's random coefficients with a
  Gaussian conditional obtained from a second-order expansion of the
  log-likelihood around auxiliary centres ``a_i`` at proxy parameters
  ``vartheta`` ("conjugating" variational inference);
* :func:`davi_fit` gives every group its own factor Gaussian and updates all
  of them by reparameterised stochastic gradient ascent (mean-field
  data-augmentation baseline).

``model`` arguments are any object exposing ``layout``, ``n_groups``,
``loglik``, ``loglik_and_grads`` and ``local_terms`` with the semantics of
:class:`cvilogit.choice.ChoiceModel`.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .choice import ChoiceModel, ModelSpec
from .errors import DomainError, NumericalError, StructuralError
from .params import LOG_2PI, PriorSpec, log_density_alpha, log_prior_and_grad, unpack

__all__ = [
    "ScheduleConfig", "FactorGaussian", "LocalGaussians", "LocalConjugateState",
    "Adadelta", "StoppingRule", "FitArtifact", "sample_theta", "refresh_local",
    "elbo_gradient_estimate", "cvi_fit", "davi_fit", "elbo_estimate", "elbo_sample",
]


@dataclass(frozen=True)
class ScheduleConfig:
    """Optimizer and schedule constants.

    ``kappa0``, ``kappa_growth``, ``kappa_every``, ``r`` and ``warmup`` drive
    the refresh schedule of the conjugate approximation.  ``stop_*`` are the
    constants of the windowed-average stopping rule; ``n_sim`` is the number
    of draws used by reported ELBO and predictive estimates.
    """

    kappa0: int = 20
    kappa_growth: float = 1.1
    kappa_every: int = 500
    r: float = 0.1
    warmup: int = 20
    ada_decay: float = 0.95
    ada_eps: float = 1e-6
    stop_threshold: int = 5
    stop_every: int = 100
    stop_burn: int = 1000
    max_iter: int = 10000
    n_factors: int = 5
    init_scale: float = 0.1
    n_sim: int = 1000
    smooth_window: int = 100

    def __post_init__(self):
        if self.kappa0 < 1 or self.kappa_every < 1:
            raise DomainError("kappa0 and kappa_every must be at least 1")
        if self.kappa_growth < 1:
            raise DomainError("kappa_growth must be at least 1")
        if not 0 < self.r <= 1:
            raise DomainError("r must lie in (0, 1]")
        if not 0 < self.ada_decay < 1 or self.ada_eps <= 0:
            raise DomainError("invalid ADADELTA constants")
        if self.warmup < 0 or self.max_iter < 0 or self.n_factors < 0:
            raise DomainError("counts must be non-negative")
        if self.stop_every < 1 or self.stop_burn < 10 or self.stop_burn % 10:
            raise DomainError("stop_burn must be a positive multiple of 10")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# ----------------------------------------------------------------------------
# Variational families
# ----------------------------------------------------------------------------

def factor_mask(dim, p):
    """Boolean mask of the free entries of a ``dim x p`` lower-triangular loading."""
    return np.tri(dim, p, dtype=bool)


@dataclass
class FactorGaussian:
    """Gaussian with covariance ``B B' + diag(d^2)`` and lower-triangular ``B``."""

    mu: np.ndarray
    B: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.B = np.asarray(self.B, dtype=float)
        self.d = np.asarray(self.d, dtype=float)
        if self.B.shape != (self.mu.size, self.B.shape[1]) or self.d.shape != self.mu.shape:
            raise StructuralError("inconsistent factor Gaussian shapes")
        if np.any(self.B[~self.mask]):
            raise StructuralError("loading matrix must have a zero upper triangle")

    @classmethod
    def init(cls, dim, p, scale=0.1, mu=None):
        return cls(np.zeros(dim) if mu is None else np.array(mu, dtype=float),
                   np.zeros((dim, p)), np.full(dim, float(scale)))

    @property
    def dim(self):
        return self.mu.size

    @property
    def n_factors(self):
        return self.B.shape[1]

    @property
    def mask(self):
        return factor_mask(self.dim, self.n_factors)

    def covariance(self):
        return self.B @ self.B.T + np.diag(self.d ** 2)

    def sample(self, e, z):
        return sample_theta(self, e, z)

    def _capacitance(self):
        d2 = self.d ** 2
        Bs = self.B / d2[:, None]
        cap = np.eye(self.n_factors) + self.B.T @ Bs
        return d2, Bs, np.linalg.cholesky(cap)

    def logpdf_and_score(self, theta):
        """Log density at ``theta`` and its gradient, via the Woodbury identity."""
        r = np.asarray(theta, dtype=float) - self.mu
        d2, Bs, Lc = self._capacitance()
        t = np.linalg.solve(Lc, Bs.T @ r)
        prec_r = r / d2 - Bs @ np.linalg.solve(Lc.T, t)
        logdet = np.sum(np.log(d2)) + 2.0 * np.sum(np.log(np.diag(Lc)))
        quad = r @ prec_r
        return -0.5 * (self.dim * LOG_2PI + logdet + quad), -prec_r

    def logpdf(self, theta):
        return self.logpdf_and_score(theta)[0]

    def copy(self):
        return FactorGaussian(self.mu.copy(), self.B.copy(), self.d.copy())


def sample_theta(q, e, z):
    """Reparameterised draw ``mu + B z + d * e``."""
    return q.mu + q.B @ z + q.d * e


@dataclass
class LocalGaussians:
    """Independent Gaussians ``N(mean_i, F_i F_i')`` for the groups' random coefficients."""

    mean: np.ndarray
    factor: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.factor = np.asarray(self.factor, dtype=float)
        S, w = self.mean.shape
        if self.factor.shape[:2] != (S, w):
            raise StructuralError("local factor must have shape (S, w, k)")
        self._chol = None

    @property
    def cov(self):
        return self.factor @ np.swapaxes(self.factor, 1, 2)

    def chol(self):
        if self._chol is None:
            try:
                self._chol = np.linalg.cholesky(self.cov)
            except np.linalg.LinAlgError:
                raise NumericalError("local covariance is not positive definite") from None
        return self._chol

    def draw_noise(self, rng):
        return rng.standard_normal((self.mean.shape[0], self.factor.shape[2]))

    def sample(self, u):
        return self.mean + np.einsum("swk,sk->sw", self.factor, u)

    def logpdf(self, alpha):
        """Per-group log densities, shape (S,)."""
        S, w = self.mean.shape
        if w == 0:
            return np.zeros(S)
        L = self.chol()
        u = np.linalg.solve(L, (alpha - self.mean)[:, :, None])[:, :, 0]
        logdet = 2.0 * np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1)
        return -0.5 * (w * LOG_2PI + logdet + np.sum(u * u, axis=1))


@dataclass
class LocalConjugateState:
    """Conjugate Gaussian approximations of all groups at ``(vartheta, a)``.

    ``V_i = (H_i + Sigma^-1)^-1`` and ``mu_i = V_i (g_i + H_i a_i + Sigma^-1 xi)``
    where ``Sigma`` and ``xi`` come from ``vartheta``.  ``chol_prec`` holds the
    lower Cholesky factor of ``V_i^-1``.
    """

    vartheta: np.ndarray
    a: np.ndarray
    g: np.ndarray
    H: np.ndarray
    mean: np.ndarray
    V: np.ndarray
    chol_prec: np.ndarray

    @property
    def v(self):
        return self.g + np.einsum("sij,sj->si", self.H, self.a)

    def gaussians(self):
        # V = L^-T L^-1, so L^-T is a square-root factor
        w = self.a.shape[1]
        inv = np.linalg.inv(self.chol_prec) if w else self.chol_prec
        return LocalGaussians(self.mean, np.swapaxes(inv, 1, 2))


def refresh_local(model, vartheta, a):
    """Build the conjugate local approximation at proxy ``vartheta`` and centres ``a``."""
    lay = model.layout
    parts = unpack(vartheta, lay)
    a = np.asarray(a, dtype=float).reshape(model.n_groups, lay.dim_alpha)
    g, H = model.local_terms(parts, a)
    prec = H + parts.sigma_inv
    try:
        L = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError:
        for i in range(prec.shape[0]):
            try:
                np.linalg.cholesky(prec[i])
            except np.linalg.LinAlgError:
                raise NumericalError("conjugate precision not positive definite in group",
                                     index=i) from None
        raise
    L_inv = np.linalg.inv(L)
    V = np.swapaxes(L_inv, 1, 2) @ L_inv
    rhs = g + np.einsum("sij,sj->si", H, a) + parts.sigma_inv @ parts.xi
    mean = np.einsum("sij,sj->si", V, rhs)
    return LocalConjugateState(np.array(vartheta, dtype=float), a.copy(), g, H, mean, V, L)


# ----------------------------------------------------------------------------
# Optimizer and stopping rule
# ----------------------------------------------------------------------------

class Adadelta:
    """ADADELTA ascent steps with per-coordinate running averages."""

    def __init__(self, shape, decay=0.95, eps=1e-6):
        self.decay = decay
        self.eps = eps
        self.sq_grad = np.zeros(shape)
        self.sq_step = np.zeros(shape)

    def step(self, grad):
        rho, eps = self.decay, self.eps
        self.sq_grad = rho * self.sq_grad + (1 - rho) * grad * grad
        delta = np.sqrt(self.sq_step + eps) / np.sqrt(self.sq_grad + eps) * grad
        self.sq_step = rho * self.sq_step + (1 - rho) * delta * delta
        return delta


class StoppingRule:
    """Stop when a windowed ELBO average fails to improve ``threshold + 1`` times.

    Every ``every`` iterations once ``t > burn`` the average of the samples
    at iterations ``t - burn, t - burn + 10, ..., t - 10`` is compared with
    the best average so far.
    """

    def __init__(self, threshold=5, every=100, burn=1000):
        self.threshold = threshold
        self.every = every
        self.burn = burn
        self.best = -np.inf
        self.count = 0

    def check(self, t, trace):
        """``trace[k]`` is the ELBO sample of iteration ``k + 1``; returns True to stop."""
        if t % self.every or t <= self.burn:
            return False
        idx = np.arange(t - self.burn, t, 10) - 1
        avg = float(np.mean(np.asarray(trace)[idx]))
        if avg > self.best:
            self.best = avg
        else:
            self.count += 1
        return self.count > self.threshold


def next_kappa(kappa, growth):
    return max(int(math.floor(kappa * growth + 1e-9)), 1)


# ----------------------------------------------------------------------------
# Log joint and ELBO pieces
# ----------------------------------------------------------------------------

def _log_joint(model, prior, theta, alpha, want_alpha=False):
    """``log p(y|theta, alpha) + log p(alpha|theta) + log p(theta)`` with gradients."""
    lay = model.layout
    parts = unpack(theta, lay)
    ll, g_ll, ga_ll = model.loglik_and_grads(parts, alpha, want_alpha=want_alpha)
    la, g_la, ga_la = log_density_alpha(alpha, parts, lay)
    lp, g_lp = log_prior_and_grad(theta, lay, prior, parts)
    ga = ga_ll + ga_la if want_alpha else None
    return ll + la + lp, g_ll + g_la + g_lp, ga


def elbo_sample(model, prior, q, local, rng):
    """One-draw ELBO value with draws made in the order ``e, z, u``."""
    e = rng.standard_normal(q.dim)
    z = rng.standard_normal(q.n_factors)
    u = local.draw_noise(rng)
    theta = sample_theta(q, e, z)
    alpha = local.sample(u)
    parts = unpack(theta, model.layout)
    value = (model.loglik(parts, alpha)
             + log_density_alpha(alpha, parts, model.layout)[0]
             + log_prior_and_grad(theta, model.layout, prior, parts)[0]
             - q.logpdf(theta) - np.sum(local.logpdf(alpha)))
    return float(value)


def elbo_gradient_estimate(q, local, model, prior, rng):
    """Single-draw reparameterisation gradient of the ELBO in ``(mu, B, d)``.

    Parameters
    ----------
    q : FactorGaussian
    local : LocalGaussians
        Conjugate approximations of the random coefficients (held fixed).
    model, prior
        Likelihood object and :class:`PriorSpec`.
    rng : numpy.random.Generator

    Returns
    -------
    grads : tuple of ndarray
        Gradients for ``mu``, ``B`` (upper triangle zero) and ``d``.
    elbo : float
        The single-draw ELBO value at the same draw.
    """
    e = rng.standard_normal(q.dim)
    z = rng.standard_normal(q.n_factors)
    u = local.draw_noise(rng)
    theta = sample_theta(q, e, z)
    alpha = local.sample(u)
    log_g, grad_g, _ = _log_joint(model, prior, theta, alpha)
    log_q, score_q = q.logpdf_and_score(theta)
    h = grad_g - score_q
    if not np.all(np.isfinite(h)):
        raise NumericalError("non-finite ELBO gradient",
                             index=int(np.flatnonzero(~np.isfinite(h))[0]))
    grad_B = np.outer(h, z) * q.mask
    elbo = log_g - log_q - np.sum(local.logpdf(alpha))
    return (h, grad_B, h * e), float(elbo)


# ----------------------------------------------------------------------------
# Fit results
# ----------------------------------------------------------------------------

@dataclass
class Trace:
    """Per-iteration record of a fit."""

    elbo: list = field(default_factory=list)
    smoothed: list = field(default_factory=list)
    kappa: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    refreshes: list = field(default_factory=list)

    def record(self, value, kappa, wall_ms, window):
        self.elbo.append(value)
        self.smoothed.append(float(np.mean(self.elbo[-window:])))
        self.kappa.append(kappa)
        self.wall_ms.append(wall_ms)

    def __len__(self):
        return len(self.elbo)

    def table(self):
        n = len(self.elbo)
        return {"iteration": np.arange(1, n + 1), "elbo_sample": np.asarray(self.elbo),
                "smoothed_elbo": np.asarray(self.smoothed),
                "kappa": np.asarray(self.kappa, dtype=int),
                "wall_ms": np.asarray(self.wall_ms)}


@dataclass
class FitArtifact:
    """Fitted variational approximation with its provenance.

    ``local`` holds ``q(alpha_i)`` for every group; for CVI it is the
    conjugate approximation at the final ``(vartheta, a)``.
    """

    method: str
    spec: object
    layout: object
    prior: PriorSpec
    schedule: ScheduleConfig
    seed: int
    q: FactorGaussian
    local: LocalGaussians
    group_ids: np.ndarray
    vartheta: np.ndarray = None
    centers: np.ndarray = None
    kappa: int = None
    n_iter: int = 0
    stopped: bool = False
    trace: Trace = field(default_factory=Trace)

    def sample_theta(self, rng):
        e = rng.standard_normal(self.q.dim)
        z = rng.standard_normal(self.q.n_factors)
        return sample_theta(self.q, e, z)

    def sample_alpha(self, rng):
        return self.local.sample(self.local.draw_noise(rng))

    def theta_mean_parts(self):
        return unpack(self.q.mu, self.layout)

    def group_index(self, ids, allow_new=False):
        """Map group labels to rows of ``local``; ``-1`` marks unseen groups."""
        lookup = {k: i for i, k in enumerate(self.group_ids.tolist())}
        idx = np.array([lookup.get(k, -1) for k in np.asarray(ids).tolist()], dtype=int)
        if not allow_new and np.any(idx < 0):
            missing = np.asarray(ids)[idx < 0][0]
            raise StructuralError(f"group {missing!r} was not part of the fit")
        return idx


def _model_from(data_or_model, spec):
    if spec is None:
        return data_or_model
    if not isinstance(spec, ModelSpec):
        raise StructuralError("spec must be a ModelSpec")
    return ChoiceModel(spec, data_or_model)


def _group_ids(model):
    data = getattr(model, "data", None)
    if data is not None and hasattr(data, "group_ids"):
        return np.asarray(data.group_ids)
    return np.arange(model.n_groups)


def cvi_init(model, schedule=None):
    """Initial ``(q, local state)`` of CVI after the warm-up of the centres."""
    schedule = schedule or ScheduleConfig()
    lay = model.layout
    q = FactorGaussian.init(lay.size, schedule.n_factors, schedule.init_scale)
    vartheta = q.mu.copy()
    a = np.zeros((model.n_groups, lay.dim_alpha))
    r = schedule.r
    for _ in range(schedule.warmup):
        state = refresh_local(model, vartheta, a)
        a = (1 - r) * a + r * state.mean
    return q, refresh_local(model, vartheta, a)


def cvi_fit(data, spec=None, prior=None, schedule=None, seed=0, callback=None):
    """Fit by conjugating variational inference.

    Parameters
    ----------
    data : ChoiceDataset or model object
        A dataset (with ``spec``) or a ready likelihood object (``spec=None``).
    spec : ModelSpec, optional
    prior : PriorSpec, optional
    schedule : ScheduleConfig, optional
    seed : int
        Seed of the only random stream used by the fit.
    callback : callable, optional
        Called as ``callback(t, q, state)`` after every iteration.

    Returns
    -------
    FitArtifact
    """
    model = _model_from(data, spec)
    prior = prior or PriorSpec()
    schedule = schedule or ScheduleConfig()
    rng = np.random.default_rng(seed)
    q, state = cvi_init(model, schedule)
    local = state.gaussians()
    opt = [Adadelta(x.shape, schedule.ada_decay, schedule.ada_eps) for x in (q.mu, q.B, q.d)]
    mask = q.mask
    rule = StoppingRule(schedule.stop_threshold, schedule.stop_every, schedule.stop_burn)
    trace = Trace()
    kappa = schedule.kappa0
    stopped = False
    t = 0
    for t in range(1, schedule.max_iter + 1):
        tic = time.perf_counter()
        try:
            (gm, gB, gd), value = elbo_gradient_estimate(q, local, model, prior, rng)
            q.mu = q.mu + opt[0].step(gm)
            q.B = q.B + opt[1].step(gB) * mask
            q.d = q.d + opt[2].step(gd)
            if t % kappa == 0:
                a = state.a + schedule.r * (state.mean - state.a)
                state = refresh_local(model, q.mu.copy(), a)
                local = state.gaussians()
                trace.refreshes.append(t)
        except NumericalError as err:
            raise NumericalError(f"CVI failed at iteration {t}: {err}", index=t) from err
        if t % schedule.kappa_every == 0:
            kappa = next_kappa(kappa, schedule.kappa_growth)
        trace.record(value, kappa, 1e3 * (time.perf_counter() - tic), schedule.smooth_window)
        if callback is not None:
            callback(t, q, state)
        if rule.check(t, trace.elbo):
            stopped = True
            break
    return FitArtifact("cvi", getattr(model, "spec", None), model.layout, prior, schedule,
                       seed, q, local, _group_ids(model), vartheta=state.vartheta,
                       centers=state.a, kappa=kappa, n_iter=t, stopped=stopped, trace=trace)


def davi_init(model, schedule=None):
    schedule = schedule or ScheduleConfig()
    lay = model.layout
    S, w, p = model.n_groups, lay.dim_alpha, schedule.n_factors
    q = FactorGaussian.init(lay.size, p, schedule.init_scale)
    loc = {"mu": np.zeros((S, w)), "B": np.zeros((S, w, p)),
           "d": np.full((S, w), schedule.init_scale)}
    return q, loc


def davi_local(loc):
    d = loc["d"]
    S, w = d.shape
    diag = np.zeros((S, w, w))
    diag[:, np.arange(w), np.arange(w)] = d
    return LocalGaussians(loc["mu"], np.concatenate([loc["B"], diag], axis=2))


def davi_fit(data, spec=None, prior=None, schedule=None, seed=0, callback=None):
    """Fit by mean-field data-augmentation variational inference.

    Each group gets a factor Gaussian ``q(alpha_i)`` with ``p`` factors; all
    variational parameters take reparameterised ADADELTA steps every
    iteration.  Arguments as in :func:`cvi_fit`.
    """
    model = _model_from(data, spec)
    prior = prior or PriorSpec()
    schedule = schedule or ScheduleConfig()
    rng = np.random.default_rng(seed)
    q, loc = davi_init(model, schedule)
    S, w, p = loc["B"].shape
    lmask = factor_mask(w, p)[None]
    opt = [Adadelta(x.shape, schedule.ada_decay, schedule.ada_eps) for x in (q.mu, q.B, q.d)]
    lopt = {k: Adadelta(v.shape, schedule.ada_decay, schedule.ada_eps) for k, v in loc.items()}
    rule = StoppingRule(schedule.stop_threshold, schedule.stop_every, schedule.stop_burn)
    trace = Trace()
    stopped = False
    t = 0
    for t in range(1, schedule.max_iter + 1):
        tic = time.perf_counter()
        local = davi_local(loc)
        try:
            e = rng.standard_normal(q.dim)
            z = rng.standard_normal(q.n_factors)
            u = local.draw_noise(rng)
            theta = sample_theta(q, e, z)
            alpha = local.sample(u)
            log_g, grad_g, grad_a = _log_joint(model, prior, theta, alpha, want_alpha=True)
            log_q, score_q = q.logpdf_and_score(theta)
            h = grad_g - score_q
            # score of q(alpha_i): -V_i^-1 (alpha_i - mu_i)
            L = local.chol()
            resid = (alpha - loc["mu"])[:, :, None]
            prec_r = np.linalg.solve(np.swapaxes(L, 1, 2), np.linalg.solve(L, resid))[:, :, 0]
            ha = grad_a + prec_r
            if not (np.all(np.isfinite(h)) and np.all(np.isfinite(ha))):
                raise NumericalError("non-finite ELBO gradient")
            value = float(log_g - log_q - np.sum(local.logpdf(alpha)))
        except NumericalError as err:
            raise NumericalError(f"DAVI failed at iteration {t}: {err}", index=t) from err
        q.mu = q.mu + opt[0].step(h)
        q.B = q.B + opt[1].step(np.outer(h, z) * q.mask) * q.mask
        q.d = q.d + opt[2].step(h * e)
        zi, ei = u[:, :p], u[:, p:]
        loc["mu"] = loc["mu"] + lopt["mu"].step(ha)
        loc["B"] = loc["B"] + lopt["B"].step(ha[:, :, None] * zi[:, None, :] * lmask) * lmask
        loc["d"] = loc["d"] + lopt["d"].step(ha * ei)
        trace.record(value, 0, 1e3 * (time.perf_counter() - tic), schedule.smooth_window)
        if callback is not None:
            callback(t, q, loc)
        if rule.check(t, trace.elbo):
            stopped = True
            break
    return FitArtifact("davi", getattr(model, "spec", None), model.layout, prior, schedule,
                       seed, q, davi_local(loc), _group_ids(model), n_iter=t,
                       stopped=stopped, trace=trace)


def elbo_estimate(fit, model, n_sim=None, rng=None, prior=None):
    """Monte Carlo ELBO of a fitted approximation on ``model``'s data.

    Parameters
    ----------
    fit : FitArtifact or tuple (q, LocalGaussians)
    model : likelihood object or ChoiceDataset
        The data the approximation was fitted to.
    n_sim : int, optional
        Number of joint draws; defaults to ``fit.schedule.n_sim``.
    rng : numpy.random.Generator or int, optional
    prior : PriorSpec, optional
        Defaults to ``fit.prior``.
    """
    if isinstance(fit, FitArtifact):
        q, local = fit.q, fit.local
        prior = prior or fit.prior
        n_sim = n_sim or fit.schedule.n_sim
        if not hasattr(model, "loglik_and_grads"):
            model = ChoiceModel(fit.spec, model)
    else:
        q, local = fit
        prior = prior or PriorSpec()
        n_sim = n_sim or 1000
    rng = np.random.default_rng(rng)
    draws = [elbo_sample(model, prior, q, local, rng) for _ in range(n_sim)]
    return float(np.mean(draws))
