"""Linear-Gaussian hierarchical model with the likelihood interface of a choice model.

The log-likelihood is exactly quadratic in the random coefficients::

    y_it = z_it' beta + x_it' alpha_i + e_it,    e_it ~ N(0, noise^2)

so the second-order expansion used by CVI is exact and the conditional
posterior of each ``alpha_i`` is available in closed form.  It serves as a
known-answer model for the inference engines.
"""
from __future__ import annotations

import numpy as np
from scipy import sparse

from .errors import DomainError, StructuralError
from .params import LOG_2PI, ParameterLayout


def _design(a, n):
    a = np.asarray(a, dtype=float)
    a = a[:, None] if a.ndim == 1 else a
    if a.ndim != 2 or a.shape[0] != n:
        raise StructuralError("design matrices need one row per observation")
    return a


class GaussianSurrogate:
    """Quadratic-likelihood stand-in for :class:`cvilogit.choice.ChoiceModel`.

    Parameters
    ----------
    y : ndarray, shape (N,)
    z : ndarray, shape (N, n_beta)
        Fixed-effect design.
    x : ndarray, shape (N, w)
        Random-effect design.
    group : ndarray of int, shape (N,)
    n_groups : int
    noise : float
        Known observation standard deviation.
    """

    spec = None

    def __init__(self, y, z, x, group, n_groups, noise=1.0):
        self.y = np.asarray(y, dtype=float)
        n = self.y.size
        self.z = _design(z, n)
        self.x = _design(x, n)
        self.group = np.asarray(group, dtype=int)
        if noise <= 0:
            raise DomainError("noise must be positive")
        if self.group.shape != (n,) or (n and self.group.max() >= n_groups):
            raise StructuralError("group codes inconsistent with n_groups")
        self.noise = float(noise)
        self._n_groups = int(n_groups)
        self.layout = ParameterLayout(self.z.shape[1], self.x.shape[1])
        self.G = sparse.csr_matrix((np.ones(n), (self.group, np.arange(n))),
                                   shape=(self._n_groups, n))

    @property
    def n_groups(self):
        return self._n_groups

    def _resid(self, parts, alpha):
        alpha = np.asarray(alpha, dtype=float).reshape(self._n_groups, -1)
        return self.y - self.z @ parts.beta - np.sum(self.x * alpha[self.group], axis=1)

    def loglik(self, parts, alpha):
        r = self._resid(parts, alpha)
        s2 = self.noise ** 2
        return float(-0.5 * r.size * (LOG_2PI + np.log(s2)) - 0.5 * np.sum(r * r) / s2)

    def loglik_and_grads(self, parts, alpha, want_alpha=True):
        r = self._resid(parts, alpha)
        s2 = self.noise ** 2
        value = float(-0.5 * r.size * (LOG_2PI + np.log(s2)) - 0.5 * np.sum(r * r) / s2)
        grad = np.zeros(self.layout.size)
        grad[self.layout.beta] = self.z.T @ r / s2
        ga = np.asarray(self.G @ (self.x * r[:, None])) / s2 if want_alpha else None
        return value, grad, ga

    def local_terms(self, parts, alpha):
        r = self._resid(parts, alpha)
        s2 = self.noise ** 2
        w = self.layout.dim_alpha
        g = np.asarray(self.G @ (self.x * r[:, None])) / s2
        outer = (self.x[:, :, None] * self.x[:, None, :]).reshape(r.size, -1)
        H = np.asarray(self.G @ outer).reshape(self._n_groups, w, w) / s2
        return g, H


def simulate_surrogate(n_groups, n_occasions, beta, xi, sigma, noise=1.0, rng=None):
    """Draw data from the linear-Gaussian model with standard normal designs.

    Returns
    -------
    model : GaussianSurrogate
    alpha : ndarray, shape (S, w)
    """
    rng = np.random.default_rng(rng)
    beta = np.asarray(beta, dtype=float)
    xi = np.asarray(xi, dtype=float)
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    w = xi.size
    n = n_groups * n_occasions
    alpha = xi + rng.standard_normal((n_groups, w)) @ np.linalg.cholesky(sigma).T if w else np.zeros((n_groups, 0))
    z = rng.standard_normal((n, beta.size))
    x = rng.standard_normal((n, w))
    group = np.repeat(np.arange(n_groups), n_occasions)
    y = z @ beta + np.sum(x * alpha[group], axis=1) + noise * rng.standard_normal(n)
    return GaussianSurrogate(y, z, x, group, n_groups, noise), alpha
