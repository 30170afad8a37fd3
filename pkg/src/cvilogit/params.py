"""Global parameter vector layout, priors and the random-coefficient density.

The global parameter vector ``theta`` is stored on an unconstrained scale::

    theta = (beta, xi, chol, gamma, eta)

``chol`` holds the lower triangle of the Cholesky factor ``L`` of the
random-coefficient covariance ``Sigma = L L'`` in row-major order, with the
diagonal entries stored as logs.  ``eta`` holds log nesting parameters,
``tau = exp(eta)``.  Every finite ``theta`` therefore maps to a valid model.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import gammaln, multigammaln

from .errors import DomainError, NumericalError, StructuralError

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class ParameterLayout:
    """Index map of the packed global parameter vector.

    Parameters
    ----------
    n_beta : int
        Number of fixed coefficients.
    dim_alpha : int
        Dimension ``w`` of each group's random-coefficient vector.
    n_gamma : int
        Number of free bundle effects (one per non-singleton bundle).
    n_tau : int
        Number of nesting parameters.
    """

    n_beta: int
    dim_alpha: int
    n_gamma: int = 0
    n_tau: int = 0

    def __post_init__(self):
        for name in ("n_beta", "dim_alpha", "n_gamma", "n_tau"):
            if getattr(self, name) < 0:
                raise StructuralError(f"{name} must be non-negative")

    @property
    def n_chol(self):
        w = self.dim_alpha
        return w * (w + 1) // 2

    @property
    def size(self):
        return self.n_beta + self.dim_alpha + self.n_chol + self.n_gamma + self.n_tau

    def _bounds(self):
        sizes = [self.n_beta, self.dim_alpha, self.n_chol, self.n_gamma, self.n_tau]
        edges = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        return {name: slice(edges[k], edges[k + 1])
                for k, name in enumerate(["beta", "xi", "chol", "gamma", "eta"])}

    @property
    def beta(self):
        return self._bounds()["beta"]

    @property
    def xi(self):
        return self._bounds()["xi"]

    @property
    def chol(self):
        return self._bounds()["chol"]

    @property
    def gamma(self):
        return self._bounds()["gamma"]

    @property
    def eta(self):
        return self._bounds()["eta"]

    def tril(self):
        return np.tril_indices(self.dim_alpha)

    def chol_diag_positions(self):
        """Positions of the log-diagonal entries inside the ``chol`` block."""
        rows, cols = self.tril()
        return np.flatnonzero(rows == cols)

    def to_dict(self):
        return {"n_beta": self.n_beta, "dim_alpha": self.dim_alpha,
                "n_gamma": self.n_gamma, "n_tau": self.n_tau}


@dataclass
class ThetaParts:
    """Constrained view of a parameter vector; see :func:`unpack`."""

    beta: np.ndarray
    xi: np.ndarray
    chol: np.ndarray
    sigma: np.ndarray
    sigma_inv: np.ndarray
    logdet: float
    gamma: np.ndarray
    tau: np.ndarray
    eta: np.ndarray


def unpack(theta, layout):
    """Map an unconstrained parameter vector to its constrained parts."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (layout.size,):
        raise StructuralError(
            f"theta has shape {theta.shape}, layout expects ({layout.size},)")
    if not np.all(np.isfinite(theta)):
        raise NumericalError("non-finite entry in theta",
                             index=int(np.flatnonzero(~np.isfinite(theta))[0]))
    w = layout.dim_alpha
    coords = theta[layout.chol]
    L = np.zeros((w, w))
    rows, cols = layout.tril()
    L[rows, cols] = coords
    diag = np.arange(w)
    L[diag, diag] = np.exp(L[diag, diag])
    if w:
        L_inv = solve_triangular(L, np.eye(w), lower=True)
        sigma_inv = L_inv.T @ L_inv
    else:
        sigma_inv = np.zeros((0, 0))
    eta = theta[layout.eta].copy()
    return ThetaParts(
        beta=theta[layout.beta].copy(),
        xi=theta[layout.xi].copy(),
        chol=L,
        sigma=L @ L.T,
        sigma_inv=sigma_inv,
        logdet=float(2.0 * np.sum(coords[layout.chol_diag_positions()])),
        gamma=theta[layout.gamma].copy(),
        tau=np.exp(eta),
        eta=eta,
    )


def pack(layout, beta=None, xi=None, sigma=None, gamma=None, tau=None):
    """Inverse of :func:`unpack`; omitted blocks default to the origin.

    ``sigma`` defaults to the identity and ``tau`` to ones.
    """
    w = layout.dim_alpha
    theta = np.zeros(layout.size)
    if beta is not None:
        theta[layout.beta] = beta
    if xi is not None:
        theta[layout.xi] = xi
    if sigma is not None and w:
        sigma = np.asarray(sigma, dtype=float)
        if sigma.shape != (w, w):
            raise StructuralError(f"sigma must be {w}x{w}")
        L = np.linalg.cholesky(sigma)
        L[np.diag_indices(w)] = np.log(np.diag(L))
        theta[layout.chol] = L[layout.tril()]
    if gamma is not None:
        theta[layout.gamma] = gamma
    if tau is not None:
        tau = np.asarray(tau, dtype=float)
        if np.any(tau <= 0):
            raise DomainError("nesting parameters must be positive")
        theta[layout.eta] = np.log(tau)
    return theta


def theta_from_parts(parts, layout):
    return pack(layout, parts.beta, parts.xi, parts.sigma, parts.gamma, parts.tau)


# ----------------------------------------------------------------------------
# Priors
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class PriorSpec:
    """Prior hyperparameters.

    ``sigma_prior`` is ``"hw"`` (Huang-Wand) or ``"lkj"`` (uniform LKJ on the
    correlation matrix, half-Cauchy on the standard deviations).
    """

    sigma_prior: str = "hw"
    hw_nu: float = 2.0
    hw_scale: float = 100.0
    lkj_sd_scale: float = 10.0
    gaussian_sd: float = 10.0
    tau_scale: float = 1.5
    tau_df: float = 5.0

    def __post_init__(self):
        if self.sigma_prior not in ("hw", "lkj"):
            raise DomainError(f"unknown covariance prior {self.sigma_prior!r}")
        for name in ("hw_nu", "hw_scale", "lkj_sd_scale", "gaussian_sd",
                     "tau_scale", "tau_df"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")

    def to_dict(self):
        return dict(self.__dict__)


def lkj_log_normalizer(dim):
    """Log volume of the set of ``dim x dim`` correlation matrices."""
    out = 0.0
    for k in range(1, dim):
        out += 0.5 * k * np.log(np.pi)
        out += gammaln(1.0 + 0.5 * (dim - 1 - k)) - gammaln(1.0 + 0.5 * (dim - 1))
    return out


def hw_log_normalizer(dim, nu, scale):
    """Log normalizing constant of the Huang-Wand density."""
    k = nu + dim - 1
    return (0.5 * k * dim * np.log(nu) - multigammaln(0.5 * k, dim)
            + dim * (gammaln(0.5 * (nu + dim)) - 0.5 * np.log(np.pi) - np.log(scale)))


def _hw_logpdf(sigma, sigma_inv, logdet, prior):
    """Huang-Wand log density in ``Sigma`` and its matrix gradient."""
    w = sigma.shape[0]
    nu, a2 = prior.hw_nu, prior.hw_scale ** 2
    s_diag = np.diag(sigma_inv)
    inner = nu * s_diag + 1.0 / a2
    value = (-0.5 * (nu + 2 * w) * logdet - 0.5 * (nu + w) * np.sum(np.log(inner))
             + hw_log_normalizer(w, nu, prior.hw_scale))
    grad = (-0.5 * (nu + 2 * w) * sigma_inv
            + 0.5 * (nu + w) * (sigma_inv * (nu / inner)) @ sigma_inv)
    return value, grad


def _lkj_logpdf(sigma, prior):
    """Half-Cauchy/LKJ(1) log density in ``Sigma`` and its matrix gradient.

    Uses ``p(Sigma) = p(sd) p(Omega) / (2^w prod sd_i^w)`` for
    ``Sigma = diag(sd) Omega diag(sd)``.
    """
    w = sigma.shape[0]
    s2 = prior.lkj_sd_scale ** 2
    var = np.diag(sigma)
    value = (np.sum(np.log(2.0 / (np.pi * prior.lkj_sd_scale)) - np.log1p(var / s2))
             - w * np.log(2.0) - 0.5 * w * np.sum(np.log(var)) - lkj_log_normalizer(w))
    grad = np.diag(-1.0 / (s2 + var) - 0.5 * w / var)
    return value, grad


def _chol_coord_grad(grad_L, L, layout):
    """Pull a gradient w.r.t. the entries of ``L`` back to the ``chol`` block."""
    rows, cols = layout.tril()
    g = grad_L[rows, cols].copy()
    diag = layout.chol_diag_positions()
    g[diag] *= np.diag(L)
    return g


def _sigma_block(parts, layout, prior):
    """Prior on the ``chol`` block including the log-Jacobian of ``l -> Sigma``."""
    w = layout.dim_alpha
    if w == 0:
        return 0.0, np.zeros(0)
    if prior.sigma_prior == "hw":
        value, G = _hw_logpdf(parts.sigma, parts.sigma_inv, parts.logdet, prior)
    else:
        value, G = _lkj_logpdf(parts.sigma, prior)
    L = parts.chol
    grad = _chol_coord_grad(2.0 * G @ L, L, layout)
    # |d vech(Sigma) / d l| = 2^w prod_i L_ii^(w - i + 2), i = 1..w
    powers = w - np.arange(w) + 1.0
    log_diag = np.log(np.diag(L))
    value += w * np.log(2.0) + np.sum(powers * log_diag)
    grad[layout.chol_diag_positions()] += powers
    return value, grad


def _half_t_logpdf_eta(eta, prior):
    """Half-t log density of ``tau = exp(eta)`` on the ``eta`` scale."""
    nu, s = prior.tau_df, prior.tau_scale
    tau = np.exp(eta)
    z = tau ** 2 / (nu * s * s)
    const = (np.log(2.0) - np.log(s) + gammaln(0.5 * (nu + 1)) - gammaln(0.5 * nu)
             - 0.5 * np.log(nu * np.pi))
    value = np.sum(const - 0.5 * (nu + 1) * np.log1p(z) + eta)
    grad = -(nu + 1) * z / (1.0 + z) + 1.0
    return value, grad


def _gaussian(x, sd):
    x = np.asarray(x)
    value = np.sum(-0.5 * (LOG_2PI + 2 * np.log(sd)) - 0.5 * x * x / (sd * sd))
    return value, -x / (sd * sd)


def log_prior_and_grad(theta, layout, prior, parts=None):
    """Log prior density of ``theta`` on the unconstrained scale and its gradient."""
    if parts is None:
        parts = unpack(theta, layout)
    theta = np.asarray(theta, dtype=float)
    grad = np.zeros(layout.size)
    total = 0.0
    for block in (layout.beta, layout.xi, layout.gamma):
        v, g = _gaussian(theta[block], prior.gaussian_sd)
        total += v
        grad[block] = g
    v, g = _sigma_block(parts, layout, prior)
    total += v
    grad[layout.chol] = g
    if layout.n_tau:
        v, g = _half_t_logpdf_eta(parts.eta, prior)
        total += v
        grad[layout.eta] = g
    return float(total), grad


def log_prior(theta, layout, prior):
    return log_prior_and_grad(theta, layout, prior)[0]


def grad_log_prior(theta, layout, prior):
    return log_prior_and_grad(theta, layout, prior)[1]


# ----------------------------------------------------------------------------
# Random-coefficient density
# ----------------------------------------------------------------------------

def log_density_alpha(alpha, parts, layout):
    """Sum over groups of ``log N(alpha_i; xi, Sigma)`` with gradients.

    Parameters
    ----------
    alpha : ndarray, shape (S, w)
    parts : ThetaParts
    layout : ParameterLayout

    Returns
    -------
    value : float
    grad_theta : ndarray, shape (layout.size,)
        Nonzero only on the ``xi`` and ``chol`` blocks.
    grad_alpha : ndarray, shape (S, w)
    """
    alpha = np.atleast_2d(np.asarray(alpha, dtype=float))
    n, w = alpha.shape
    grad_theta = np.zeros(layout.size)
    if w == 0:
        return 0.0, grad_theta, np.zeros_like(alpha)
    if w != layout.dim_alpha:
        raise StructuralError(f"alpha has {w} columns, layout expects {layout.dim_alpha}")
    L = parts.chol
    resid = alpha - parts.xi
    u = solve_triangular(L, resid.T, lower=True)           # (w, S)
    su = solve_triangular(L, u, lower=True, trans="T")      # Sigma^{-1} resid, (w, S)
    value = -0.5 * n * w * LOG_2PI - 0.5 * n * parts.logdet - 0.5 * np.sum(u * u)
    grad_alpha = -su.T
    grad_theta[layout.xi] = su.sum(axis=1)
    grad_L = np.tril(su @ u.T)
    grad_L[np.diag_indices(w)] -= n / np.diag(L)
    grad_theta[layout.chol] = _chol_coord_grad(grad_L, L, layout)
    return float(value), grad_theta, grad_alpha
