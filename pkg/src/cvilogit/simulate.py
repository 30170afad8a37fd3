"""Synthetic panels drawn from the three mixed logit models.

The presets :func:`simulation1`, :func:`simulation2` and :func:`simulation3`
reproduce the simulation designs used to benchmark the estimators.  In all
three, item 0 is the reference; each other item ``j`` has three
``U(0, 1)`` fixed covariates with item-specific coefficients and random
covariates ``(1, U, U)``, so each group's coefficient vector has
``3 * (J - 1) = 9`` entries.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .choice import ChoiceDataset, ChoiceModel, ModelSpec
from .errors import DomainError, StructuralError
from .params import ThetaParts, pack

# true values used by the simulation presets
SIM_BETA = np.array([[-0.10, 0.35, -0.15],
                     [-0.15, 0.30, 0.40],
                     [0.40, -0.15, 0.58]])
SIM_XI_PATTERN = np.array([-0.9640, 0.4002, -0.3788, 0.2409])
SIM_BUNDLES = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1],
                        [1, 0, 1, 0], [1, 0, 0, 1], [0, 1, 1, 0], [0, 1, 0, 1]])
SIM_GAMMA = np.array([0.0976, 0.4304, 0.2055, 0.0898])
SIM_NESTS = ((0, 1), (2, 3))
SIM_TAU = np.array([0.3, 0.7])
SIGMA_SEED = 20240607


def generate_sigma_lkj(w, rng, eta=1.0):
    """Random correlation matrix from the LKJ(eta) distribution (onion method).

    The result has an exact unit diagonal, so it doubles as a covariance
    matrix with unit marginal variances.
    """
    if w < 1:
        raise DomainError("dimension must be at least 1")
    if eta <= 0:
        raise DomainError("LKJ shape must be positive")
    rng = np.random.default_rng(rng)
    R = np.eye(w)
    if w == 1:
        return R
    b = eta + (w - 2) / 2.0
    r12 = 2.0 * rng.beta(b, b) - 1.0
    R[0, 1] = R[1, 0] = r12
    for k in range(2, w):
        b -= 0.5
        y = rng.beta(k / 2.0, b)
        u = rng.standard_normal(k)
        u /= np.linalg.norm(u)
        z = np.linalg.cholesky(R[:k, :k]) @ (np.sqrt(y) * u)
        R[:k, k] = z
        R[k, :k] = z
    return R


@dataclass
class DgpSpec:
    """Data-generating process of a simulated panel.

    Parameters
    ----------
    spec : ModelSpec
    n_groups, n_occasions : int
        ``S`` groups with ``T`` training occasions each.
    n_test : int
        Extra held-out occasions per group.
    n_fixed, n_random : int
        Covariates per item.  With ``random_intercept`` the first random
        covariate is the constant 1 and the rest are ``U(0, 1)``; fixed
        covariates are all ``U(0, 1)``.
    beta, xi, sigma, gamma, tau : array_like
        True parameter values (``gamma`` over non-singleton bundles only).
    availability : float
        Probability that each non-reference alternative is offered.
    seed : int
    """

    spec: ModelSpec
    n_groups: int
    n_occasions: int
    beta: np.ndarray
    xi: np.ndarray
    sigma: np.ndarray
    n_fixed: int = 3
    n_random: int = 3
    gamma: np.ndarray = field(default_factory=lambda: np.zeros(0))
    tau: np.ndarray = field(default_factory=lambda: np.zeros(0))
    n_test: int = 0
    random_intercept: bool = True
    availability: float = 1.0
    seed: int = 0

    def __post_init__(self):
        lay = self.layout
        self.beta = np.asarray(self.beta, dtype=float).ravel()
        self.xi = np.asarray(self.xi, dtype=float).ravel()
        self.sigma = np.asarray(self.sigma, dtype=float)
        self.gamma = np.asarray(self.gamma, dtype=float).ravel()
        self.tau = np.asarray(self.tau, dtype=float).ravel()
        w = lay.dim_alpha
        if (self.beta.size != lay.n_beta or self.xi.size != w or self.sigma.shape != (w, w)
                or self.gamma.size != lay.n_gamma or self.tau.size != lay.n_tau):
            raise StructuralError("true parameters do not match the model layout")
        if not np.allclose(self.sigma, self.sigma.T):
            raise DomainError("sigma must be symmetric")
        if np.linalg.eigvalsh(self.sigma).min() < -1e-12:
            raise DomainError("sigma must be positive semi-definite")
        if np.any(self.tau <= 0):
            raise DomainError("nesting parameters must be positive")
        if not 0 < self.availability <= 1:
            raise DomainError("availability must lie in (0, 1]")

    @property
    def layout(self):
        return self.spec.layout(self.n_fixed, self.n_random)

    def true_theta(self):
        """True values packed as an unconstrained parameter vector (needs PD ``sigma``)."""
        return pack(self.layout, self.beta, self.xi, self.sigma, self.gamma,
                    self.tau if self.tau.size else None)

    def true_parts(self):
        return ThetaParts(beta=self.beta, xi=self.xi, chol=None, sigma=self.sigma,
                          sigma_inv=None, logdet=np.nan, gamma=self.gamma,
                          tau=self.tau, eta=np.log(self.tau))

    def to_dict(self):
        return {"spec": self.spec.to_dict(), "n_groups": self.n_groups,
                "n_occasions": self.n_occasions, "n_test": self.n_test,
                "n_fixed": self.n_fixed, "n_random": self.n_random,
                "beta": self.beta.tolist(), "xi": self.xi.tolist(),
                "sigma": self.sigma.tolist(), "gamma": self.gamma.tolist(),
                "tau": self.tau.tolist(), "random_intercept": self.random_intercept,
                "availability": self.availability, "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["spec"] = ModelSpec.from_dict(d["spec"])
        return cls(**d)


@dataclass
class SimulatedPanel:
    """Training and held-out datasets plus the latent truth."""

    train: ChoiceDataset
    test: ChoiceDataset
    alpha: np.ndarray
    dgp: DgpSpec


def _sqrt_psd(sigma):
    lam, vec = np.linalg.eigh(sigma)
    return vec * np.sqrt(np.maximum(lam, 0.0))


def simulate_dataset(dgp, rng=None):
    """Draw a panel from ``dgp``.

    Random coefficients are drawn once per group and shared by the training
    and held-out occasions.  Outcomes are sampled by inverse CDF from the
    model's choice probabilities.

    Parameters
    ----------
    dgp : DgpSpec
    rng : int or numpy.random.Generator, optional
        Defaults to ``dgp.seed``.

    Returns
    -------
    SimulatedPanel
    """
    rng = np.random.default_rng(dgp.seed if rng is None else rng)
    spec = dgp.spec
    S, J, R = dgp.n_groups, spec.n_items, spec.n_choice
    T = dgp.n_occasions + dgp.n_test
    w = dgp.layout.dim_alpha
    alpha = dgp.xi + rng.standard_normal((S, w)) @ _sqrt_psd(dgp.sigma).T
    n = S * T
    xf = np.zeros((n, J, dgp.n_fixed))
    xr = np.zeros((n, J, dgp.n_random))
    xf[:, 1:, :] = rng.random((n, J - 1, dgp.n_fixed))
    if dgp.random_intercept and dgp.n_random:
        xr[:, 1:, 0] = 1.0
        xr[:, 1:, 1:] = rng.random((n, J - 1, dgp.n_random - 1))
    else:
        xr[:, 1:, :] = rng.random((n, J - 1, dgp.n_random))
    avail = np.ones((n, R), dtype=bool)
    if dgp.availability < 1:
        avail[:, 1:] = rng.random((n, R - 1)) < dgp.availability
    group = np.repeat(np.arange(S), T)
    occasion = np.tile(np.arange(T), S)
    fixed_names = [f"z{k + 1}" for k in range(dgp.n_fixed)]
    random_names = [f"x{k + 1}" for k in range(dgp.n_random)]
    if dgp.random_intercept and dgp.n_random:
        random_names = ["asc"] + random_names[:-1]
    data = ChoiceDataset(xf, xr, avail, np.zeros(n, dtype=int), group, np.arange(S), occasion,
                         fixed_names, random_names)
    probs = ChoiceModel(spec, data).probabilities(dgp.true_parts(), alpha)
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(n) * cdf[:, -1]
    choice = np.minimum((cdf < u[:, None]).sum(axis=1), R - 1)
    # guard against landing on a zero-probability (unavailable) entry through rounding
    choice = np.where(avail[np.arange(n), choice], choice, 0)
    data.choice = choice
    train_rows = np.flatnonzero(occasion < dgp.n_occasions)
    test_rows = np.flatnonzero(occasion >= dgp.n_occasions)
    return SimulatedPanel(data.take(train_rows), data.take(test_rows), alpha, dgp)


def _preset(spec, n_groups, n_occasions, n_test, sigma_seed, seed, **extra):
    w = 3 * (spec.n_items - 1)
    sigma = generate_sigma_lkj(w, np.random.default_rng(sigma_seed))
    return DgpSpec(spec=spec, n_groups=n_groups, n_occasions=n_occasions,
                   beta=SIM_BETA.ravel(), xi=np.resize(SIM_XI_PATTERN, w), sigma=sigma,
                   n_fixed=3, n_random=3, n_test=n_test, seed=seed, **extra)


def simulation1(n_groups=100, n_occasions=100, n_test=30, sigma_seed=SIGMA_SEED, seed=0):
    """Mixed multinomial logit design with four alternatives."""
    spec = ModelSpec.standard(4, beta_mode="alternative")
    return _preset(spec, n_groups, n_occasions, n_test, sigma_seed, seed)


def simulation2(n_groups=100, n_occasions=100, n_test=30, sigma_seed=SIGMA_SEED, seed=0):
    """Bundle design: items A-D plus bundles {A,C}, {A,D}, {B,C}, {B,D}."""
    spec = ModelSpec.bundle(SIM_BUNDLES, beta_mode="alternative")
    return _preset(spec, n_groups, n_occasions, n_test, sigma_seed, seed, gamma=SIM_GAMMA)


def simulation3(n_groups=100, n_occasions=100, n_test=30, sigma_seed=SIGMA_SEED, seed=0):
    """Nested design with nests {0, 1} and {2, 3}."""
    spec = ModelSpec.nested(4, SIM_NESTS, beta_mode="alternative")
    return _preset(spec, n_groups, n_occasions, n_test, sigma_seed, seed, tau=SIM_TAU)


PRESETS = {"simulation1": simulation1, "simulation2": simulation2, "simulation3": simulation3}


def with_seed(dgp, seed):
    """Replicate of ``dgp`` with a new data seed and the same true parameters."""
    return replace(dgp, seed=seed)
