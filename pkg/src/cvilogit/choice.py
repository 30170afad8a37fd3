"""Choice datasets, model structures and logit likelihood derivatives.

All three model variants share one linear utility representation.  For an
occasion ``t`` with choice alternatives ``r = 0..R-1`` built from items
``j = 0..J-1`` through a binary membership matrix ``M``::

    v_tr = F_tr' beta + D_tr' alpha_i + gamma_r

where ``D_tr`` stacks ``M[r, j] * x_random[t, j]`` over the non-reference
items ``j = 1..J-1`` and ``F_tr`` is the analogous fixed-effect design.  The
standard model is the special case ``M = I``; the nested model uses ``M = I``
with nest-level scaling in the likelihood.  Derivatives with respect to
``alpha`` are therefore ``D' s`` and ``-D' Q D`` where ``s`` and ``Q`` are the
first and second derivatives of the per-occasion log-likelihood in ``v``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.special import logsumexp

from .errors import DatasetError, DomainError, NumericalError, StructuralError
from .params import ParameterLayout, ThetaParts, unpack

VARIANTS = ("standard", "bundle", "nested")
BETA_MODES = ("shared", "alternative")


# ----------------------------------------------------------------------------
# Model structure
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Structure of a choice model.

    Parameters
    ----------
    variant : {"standard", "bundle", "nested"}
    n_items : int
        Number of base alternatives ``J`` (items, for bundle models).
    membership : array_like of shape (R, J), optional
        Bundle membership matrix, ``membership[r, j] = 1`` iff item ``j`` is
        part of choice alternative ``r``.  Row 0 must be the reference item
        on its own.  Ignored unless ``variant == "bundle"``.
    nests : sequence of sequences of int, optional
        Disjoint cover of ``0..J-1``.  Ignored unless ``variant == "nested"``.
    beta_mode : {"shared", "alternative"}
        Whether fixed coefficients are shared across alternatives or specific
        to each non-reference item.
    """

    variant: str
    n_items: int
    membership: np.ndarray = None
    nests: tuple = None
    beta_mode: str = "shared"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise StructuralError(f"unknown model variant {self.variant!r}")
        if self.beta_mode not in BETA_MODES:
            raise StructuralError(f"unknown beta mode {self.beta_mode!r}")
        J = int(self.n_items)
        if J < 2:
            raise StructuralError("a choice model needs at least two alternatives")
        object.__setattr__(self, "n_items", J)
        if self.variant == "bundle":
            if self.membership is None:
                raise StructuralError("bundle model requires a membership matrix")
            M = np.array(self.membership, dtype=float)
            if M.ndim != 2 or M.shape[1] != J:
                raise StructuralError(f"membership must have {J} columns")
            if not np.all((M == 0) | (M == 1)):
                raise StructuralError("membership entries must be 0 or 1")
            if np.any(M.sum(axis=1) == 0):
                raise StructuralError("every bundle must contain an item")
            if len({tuple(row) for row in M}) != len(M):
                raise StructuralError("duplicate bundles in membership matrix")
            ref = np.zeros(J)
            ref[0] = 1
            if not np.array_equal(M[0], ref):
                raise StructuralError("bundle 0 must be the reference item alone")
        else:
            M = np.eye(J)
        M.setflags(write=False)
        object.__setattr__(self, "membership", M)
        if self.variant == "nested":
            if self.nests is None:
                raise StructuralError("nested model requires a nest partition")
            nests = tuple(tuple(int(j) for j in nest) for nest in self.nests)
            flat = sorted(j for nest in nests for j in nest)
            if any(len(n) == 0 for n in nests) or flat != list(range(J)):
                raise StructuralError("nests must be non-empty, disjoint and cover all items")
            object.__setattr__(self, "nests", nests)
        else:
            object.__setattr__(self, "nests", None)

    @classmethod
    def standard(cls, n_items, beta_mode="shared"):
        return cls("standard", n_items, beta_mode=beta_mode)

    @classmethod
    def bundle(cls, membership, beta_mode="shared"):
        membership = np.asarray(membership)
        return cls("bundle", membership.shape[1], membership=membership, beta_mode=beta_mode)

    @classmethod
    def nested(cls, n_items, nests, beta_mode="shared"):
        return cls("nested", n_items, nests=nests, beta_mode=beta_mode)

    @property
    def n_choice(self):
        """Number of choice alternatives ``R`` (``J`` unless bundled)."""
        return self.membership.shape[0]

    @property
    def gamma_mask(self):
        """Flags for alternatives carrying a free complementary effect."""
        if self.variant != "bundle":
            return np.zeros(self.n_choice, dtype=bool)
        return self.membership.sum(axis=1) > 1

    @property
    def n_nests(self):
        return len(self.nests) if self.nests else 0

    @property
    def nest_of(self):
        out = np.zeros(self.n_items, dtype=int)
        for k, nest in enumerate(self.nests or ()):
            out[list(nest)] = k
        return out

    def n_beta(self, n_fixed):
        return n_fixed if self.beta_mode == "shared" else n_fixed * (self.n_items - 1)

    def layout(self, n_fixed, n_random):
        """Parameter layout for ``n_fixed`` fixed and ``n_random`` random covariates."""
        return ParameterLayout(
            n_beta=self.n_beta(n_fixed),
            dim_alpha=n_random * (self.n_items - 1),
            n_gamma=int(self.gamma_mask.sum()),
            n_tau=self.n_nests,
        )

    def to_dict(self):
        out = {"variant": self.variant, "n_items": self.n_items, "beta_mode": self.beta_mode}
        if self.variant == "bundle":
            out["membership"] = self.membership.astype(int).tolist()
        if self.variant == "nested":
            out["nests"] = [list(n) for n in self.nests]
        return out

    @classmethod
    def from_dict(cls, d):
        return cls(d["variant"], d["n_items"], membership=d.get("membership"),
                   nests=d.get("nests"), beta_mode=d.get("beta_mode", "shared"))

    def __eq__(self, other):
        return isinstance(other, ModelSpec) and self.to_dict() == other.to_dict()

    __hash__ = None


# ----------------------------------------------------------------------------
# Data
# ----------------------------------------------------------------------------

@dataclass(eq=False)
class ChoiceDataset:
    """Grouped panel of choice occasions.

    Covariates are per item and already differenced against the reference
    item 0, so ``x_fixed[:, 0]`` and ``x_random[:, 0]`` are zero.

    Attributes
    ----------
    x_fixed : ndarray, shape (N, J, w_f)
    x_random : ndarray, shape (N, J, w_r)
    available : ndarray of bool, shape (N, R)
    choice : ndarray of int, shape (N,)
        0-based index of the chosen alternative.
    group : ndarray of int, shape (N,)
        Group code of each occasion, indexing ``group_ids``.
    group_ids : ndarray, shape (S,)
        Group labels.  Groups without occasions are allowed.
    occasion_ids : ndarray, shape (N,)
    fixed_names, random_names : list of str
    """

    x_fixed: np.ndarray
    x_random: np.ndarray
    available: np.ndarray
    choice: np.ndarray
    group: np.ndarray
    group_ids: np.ndarray = None
    occasion_ids: np.ndarray = None
    fixed_names: list = field(default=None)
    random_names: list = field(default=None)

    def __post_init__(self):
        self.x_fixed = np.asarray(self.x_fixed, dtype=float)
        self.x_random = np.asarray(self.x_random, dtype=float)
        self.available = np.asarray(self.available, dtype=bool)
        self.choice = np.asarray(self.choice, dtype=int)
        self.group = np.asarray(self.group, dtype=int)
        n = self.choice.shape[0]
        if self.group_ids is None:
            self.group_ids = np.arange(self.group.max() + 1 if n else 0)
        self.group_ids = np.asarray(self.group_ids)
        if self.occasion_ids is None:
            self.occasion_ids = np.arange(n)
        self.occasion_ids = np.asarray(self.occasion_ids)
        if self.fixed_names is None:
            self.fixed_names = [f"x{k + 1}" for k in range(self.x_fixed.shape[-1])]
        if self.random_names is None:
            self.random_names = [f"x{k + 1}" for k in range(self.x_random.shape[-1])]
        self.validate()

    def validate(self):
        n = self.n_occasions
        if self.x_fixed.ndim != 3 or self.x_random.ndim != 3:
            raise StructuralError("covariate arrays must be three-dimensional")
        J = self.x_fixed.shape[1]
        if self.x_fixed.shape[:2] != (n, J) or self.x_random.shape[:2] != (n, J):
            raise StructuralError("covariate arrays disagree on (occasions, items)")
        if self.available.ndim != 2 or self.available.shape[0] != n:
            raise StructuralError("availability must be (occasions, alternatives)")
        if self.group.shape != (n,) or self.occasion_ids.shape != (n,):
            raise StructuralError("group and occasion ids must have one entry per occasion")
        if n and (self.group.min() < 0 or self.group.max() >= len(self.group_ids)):
            raise StructuralError("group codes out of range")
        if len(self.fixed_names) != self.n_fixed or len(self.random_names) != self.n_random:
            raise StructuralError("covariate names do not match covariate arrays")
        bad = np.flatnonzero((self.choice < 0) | (self.choice >= self.n_choice))
        if bad.size:
            raise DatasetError(f"chosen alternative out of range at occasion {bad[0]}")
        bad = np.flatnonzero(~self.available[np.arange(n), self.choice])
        if bad.size:
            raise DatasetError(f"chosen alternative unavailable at occasion {bad[0]}")
        bad = np.flatnonzero(~self.available[:, 0])
        if bad.size:
            raise DatasetError(f"reference alternative unavailable at occasion {bad[0]}")
        if np.any(self.x_fixed[:, 0] != 0) or np.any(self.x_random[:, 0] != 0):
            raise DatasetError("reference-item covariates must be zero after differencing")
        if not (np.all(np.isfinite(self.x_fixed)) and np.all(np.isfinite(self.x_random))):
            raise DatasetError("non-finite covariate values")

    @property
    def n_occasions(self):
        return self.choice.shape[0]

    @property
    def n_groups(self):
        return len(self.group_ids)

    @property
    def n_items(self):
        return self.x_fixed.shape[1]

    @property
    def n_choice(self):
        return self.available.shape[1]

    @property
    def n_fixed(self):
        return self.x_fixed.shape[2]

    @property
    def n_random(self):
        return self.x_random.shape[2]

    def occasions_per_group(self):
        return np.bincount(self.group, minlength=self.n_groups)

    def group_matrix(self):
        """Sparse ``(S, N)`` indicator that sums occasion rows into groups."""
        n = self.n_occasions
        return sparse.csr_matrix((np.ones(n), (self.group, np.arange(n))),
                                 shape=(self.n_groups, n))

    def take(self, rows):
        """Dataset restricted to the given occasion rows (groups are kept)."""
        rows = np.asarray(rows)
        return ChoiceDataset(self.x_fixed[rows], self.x_random[rows], self.available[rows],
                             self.choice[rows], self.group[rows], self.group_ids,
                             self.occasion_ids[rows], list(self.fixed_names),
                             list(self.random_names))

    def group_subset(self, i):
        """One-group dataset holding the occasions of group code ``i``."""
        rows = np.flatnonzero(self.group == i)
        return ChoiceDataset(self.x_fixed[rows], self.x_random[rows], self.available[rows],
                             self.choice[rows], np.zeros(rows.size, dtype=int),
                             self.group_ids[[i]], self.occasion_ids[rows],
                             list(self.fixed_names), list(self.random_names))

    def check_spec(self, spec):
        if self.n_items != spec.n_items or self.n_choice != spec.n_choice:
            raise StructuralError(
                f"dataset has {self.n_items} items / {self.n_choice} alternatives, "
                f"model expects {spec.n_items} / {spec.n_choice}")


# ----------------------------------------------------------------------------
# Stand-alone probability helpers
# ----------------------------------------------------------------------------

def softmax(v, available=None):
    """Softmax over the last axis with unavailable entries excluded."""
    v = np.asarray(v, dtype=float)
    if available is not None:
        v = np.where(available, v, -np.inf)
    m = np.max(v, axis=-1, keepdims=True)
    if np.any(~np.isfinite(m)):
        raise StructuralError("empty choice set")
    e = np.exp(v - m)
    return e / e.sum(axis=-1, keepdims=True)


def _nested_parts(v, tau, nest_of, n_nests):
    """Nest inclusive values and log-probabilities for utilities ``v`` (-inf = unavailable).

    Returns ``vs, incl, log_denom, log_p, pi`` with ``incl`` of shape (N, K)
    (``-inf`` for empty nests) and ``pi`` the within-nest probabilities.
    """
    tau_b = tau[nest_of]
    vs = v / tau_b
    member = nest_of[:, None] == np.arange(n_nests)[None, :]          # (J, K)
    masked = np.where(member[None, :, :], vs[:, :, None], -np.inf)     # (N, J, K)
    with np.errstate(divide="ignore", invalid="ignore"):
        incl = logsumexp(masked, axis=1)                                # (N, K)
        scaled = np.where(np.isfinite(incl), tau * incl, -np.inf)
        log_denom = logsumexp(scaled, axis=1)                           # (N,)
        pi = np.exp(vs - incl[:, nest_of])
    avail = np.isfinite(v)
    pi = np.where(avail, pi, 0.0)
    # an available item's nest is never empty, so only unavailable entries see -inf here
    incl_b = np.where(avail, incl[:, nest_of], 0.0)
    log_p = np.where(avail, vs + (tau_b - 1.0) * incl_b - log_denom[:, None], -np.inf)
    return vs, incl, log_denom, log_p, pi


def choice_probabilities(spec, v, tau=None, available=None):
    """Choice probabilities over the last axis of ``v``.

    Parameters
    ----------
    spec : ModelSpec
    v : array_like, shape (..., R)
    tau : array_like, shape (K,), optional
        Nesting parameters (nested models only).
    available : array_like of bool, shape (..., R), optional
    """
    v = np.asarray(v, dtype=float)
    if v.shape[-1] == 0:
        raise StructuralError("empty choice set")
    if available is None:
        available = np.ones(v.shape, dtype=bool)
    available = np.broadcast_to(np.asarray(available, dtype=bool), v.shape)
    if not np.all(available.any(axis=-1)):
        raise StructuralError("empty choice set")
    if not np.all(np.isfinite(v[available])):
        raise NumericalError("non-finite utility")
    if spec.variant != "nested":
        return softmax(v, available)
    tau = np.asarray(tau, dtype=float)
    if tau.shape != (spec.n_nests,):
        raise StructuralError(f"expected {spec.n_nests} nesting parameters")
    if np.any(~(tau > 0)):
        raise DomainError("nesting parameters must be positive")
    shape = v.shape
    flat = np.where(available, v, -np.inf).reshape(-1, shape[-1])
    _, _, _, log_p, _ = _nested_parts(flat, tau, spec.nest_of, spec.n_nests)
    p = np.where(np.isfinite(flat), np.exp(log_p), 0.0)
    return p.reshape(shape)


def nearest_psd(A):
    """Nearest symmetric positive semi-definite matrix by eigenvalue clamping.

    Accepts a single matrix or a stack of matrices along the leading axes.
    The input is symmetrized before the eigendecomposition; inputs that are
    already PSD are returned symmetrized and otherwise unchanged.
    """
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise NumericalError("non-finite entry in matrix")
    sym = 0.5 * (A + np.swapaxes(A, -1, -2))
    if sym.shape[-1] == 0:
        return sym
    lam, vec = np.linalg.eigh(sym)
    neg = np.any(lam < 0, axis=-1)
    if not np.any(neg):
        return sym
    lam = np.maximum(lam, 0.0)
    proj = (vec * lam[..., None, :]) @ np.swapaxes(vec, -1, -2)
    proj = 0.5 * (proj + np.swapaxes(proj, -1, -2))
    return np.where(neg[..., None, None], proj, sym)


# ----------------------------------------------------------------------------
# Likelihood bound to a dataset
# ----------------------------------------------------------------------------

class ChoiceModel:
    """Log-likelihood of one model structure on one dataset.

    Builds the design tensors once; all methods are pure functions of the
    parameter values passed in.

    Parameters
    ----------
    spec : ModelSpec
    data : ChoiceDataset
    """

    def __init__(self, spec, data):
        data.check_spec(spec)
        self.spec = spec
        self.data = data
        self.layout = spec.layout(data.n_fixed, data.n_random)
        M = spec.membership
        n = data.n_occasions
        xr = np.einsum("rj,njk->nrjk", M, data.x_random)[:, :, 1:, :]
        self.D = np.ascontiguousarray(xr.reshape(n, spec.n_choice, -1))
        if spec.beta_mode == "shared":
            self.F = np.einsum("rj,njk->nrk", M, data.x_fixed)
        else:
            xf = np.einsum("rj,njk->nrjk", M, data.x_fixed)[:, :, 1:, :]
            self.F = np.ascontiguousarray(xf.reshape(n, spec.n_choice, -1))
        self.gamma_rows = np.flatnonzero(spec.gamma_mask)
        self.available = data.available
        self.choice = data.choice
        self.onehot = np.zeros((n, spec.n_choice))
        self.onehot[np.arange(n), data.choice] = 1.0
        self.G = data.group_matrix()
        if spec.variant == "nested":
            self.nest_of = spec.nest_of
            self.same_nest = self.nest_of[:, None] == self.nest_of[None, :]

    @property
    def n_groups(self):
        return self.data.n_groups

    def parts(self, theta):
        return unpack(theta, self.layout)

    def _alpha_rows(self, alpha):
        alpha = np.asarray(alpha, dtype=float)
        w = self.layout.dim_alpha
        if alpha.ndim == 1:
            alpha = np.broadcast_to(alpha, (self.n_groups, alpha.size))
        if alpha.shape != (self.n_groups, w):
            raise StructuralError(f"alpha must have shape ({self.n_groups}, {w})")
        return alpha[self.data.group]

    def utilities(self, parts, alpha):
        """Utilities ``(N, R)``; unavailable alternatives are ``-inf``."""
        v = self.F @ parts.beta if self.F.shape[2] else np.zeros(self.available.shape)
        if self.D.shape[2]:
            v = v + np.einsum("nrw,nw->nr", self.D, self._alpha_rows(alpha))
        if self.gamma_rows.size:
            v[:, self.gamma_rows] += parts.gamma
        return np.where(self.available, v, -np.inf)

    def _check(self, values, what):
        bad = ~np.isfinite(values)
        if np.any(bad):
            idx = int(np.flatnonzero(bad.reshape(values.shape[0], -1).any(axis=1))[0])
            raise NumericalError(f"non-finite {what}", index=idx)

    def _evaluate(self, parts, alpha, order):
        """Per-occasion log-likelihood plus derivatives in ``v`` up to ``order``.

        Returns a dict with ``ll`` (N,), ``p`` (N, R) and, as requested, ``s``
        (N, R) for the first derivative, ``Q`` (N, R, R) for the second
        derivative and ``dtau`` (N, K) for the derivative in ``tau``.
        """
        v = self.utilities(parts, alpha)
        n = v.shape[0]
        rows = np.arange(n)
        out = {}
        if self.spec.variant != "nested":
            m = v.max(axis=1, keepdims=True)
            lse = m[:, 0] + np.log(np.exp(v - m).sum(axis=1))
            ll = v[rows, self.choice] - lse
            p = np.exp(v - lse[:, None])
            out.update(ll=ll, p=p)
            if order >= 1:
                out["s"] = self.onehot - p
            if order >= 2:
                out["Q"] = p[:, :, None] * p[:, None, :] - np.einsum("nr,rc->nrc", p, np.eye(p.shape[1]))
            self._check(ll, "log-likelihood")
            return out
        tau = parts.tau
        nest_of = self.nest_of
        vs, incl, log_denom, log_p, pi = _nested_parts(v, tau, nest_of, self.spec.n_nests)
        k = nest_of[self.choice]
        tk = tau[k]
        ll = v[rows, self.choice] / tk + (tk - 1.0) * incl[rows, k] - log_denom
        self._check(ll, "log-likelihood")
        p = np.where(self.available, np.exp(log_p), 0.0)
        out.update(ll=ll, p=p)
        in_k = nest_of[None, :] == k[:, None]                                   # (N, R)
        if order >= 1:
            out["s"] = self.onehot / tk[:, None] + ((tk - 1.0) / tk)[:, None] * pi * in_k - p
            # d ll / d tau_l
            vfin = np.where(self.available, v, 0.0)
            member = (nest_of[:, None] == np.arange(self.spec.n_nests)[None, :]).astype(float)
            vbar = (pi * vfin) @ member                                         # (N, K)
            nonempty = np.isfinite(incl)
            incl0 = np.where(nonempty, incl, 0.0)
            p_nest = np.where(nonempty, np.exp(np.where(nonempty, tau * incl0, -np.inf)
                                               - log_denom[:, None]), 0.0)
            dtau = -p_nest * (incl0 - vbar / tau)
            own = (-v[rows, self.choice] / tk ** 2 + incl[rows, k]
                   - (tk - 1.0) * vbar[rows, k] / tk ** 2)
            dtau[rows, k] += own
            out["dtau"] = dtau
        if order >= 2:
            pik = pi * in_k
            coef = (tk - 1.0) / tk ** 2
            eye = np.eye(v.shape[1])
            t1 = coef[:, None, None] * (pik[:, :, None] * eye - pik[:, :, None] * pik[:, None, :])
            tau_b = tau[nest_of]
            same = self.same_nest[None, :, :]
            jp = (p[:, :, None] * (same * pi[:, None, :] - p[:, None, :])
                  + (p / tau_b)[:, :, None] * (eye - pi[:, None, :]) * same)
            out["Q"] = t1 - jp
        return out

    # -- public API ------------------------------------------------------

    def probabilities(self, parts, alpha):
        return self._evaluate(parts, alpha, 0)["p"]

    def loglik_occasions(self, parts, alpha):
        return self._evaluate(parts, alpha, 0)["ll"]

    def loglik(self, parts, alpha):
        return float(np.sum(self.loglik_occasions(parts, alpha)))

    def loglik_groups(self, parts, alpha):
        return self.G @ self.loglik_occasions(parts, alpha)

    def loglik_and_grads(self, parts, alpha, want_alpha=True):
        """Total log-likelihood with gradients in ``theta`` and ``alpha``.

        Returns
        -------
        value : float
        grad_theta : ndarray, shape (layout.size,)
            Nonzero on the ``beta``, ``gamma`` and ``eta`` blocks only.
        grad_alpha : ndarray, shape (S, w) or None
        """
        ev = self._evaluate(parts, alpha, 1)
        s = ev["s"]
        lay = self.layout
        grad = np.zeros(lay.size)
        if lay.n_beta:
            grad[lay.beta] = np.einsum("nrk,nr->k", self.F, s)
        if lay.n_gamma:
            grad[lay.gamma] = s[:, self.gamma_rows].sum(axis=0)
        if lay.n_tau:
            grad[lay.eta] = ev["dtau"].sum(axis=0) * parts.tau
        ga = None
        if want_alpha:
            ga = np.asarray(self.G @ np.einsum("nrw,nr->nw", self.D, s))
        return float(ev["ll"].sum()), grad, ga

    def local_terms(self, parts, alpha):
        """Per-group gradient ``g`` (S, w) and negative Hessian ``H`` (S, w, w) in ``alpha``.

        For nested models ``H`` is projected onto the PSD cone.
        """
        ev = self._evaluate(parts, alpha, 2)
        D = self.D
        w = D.shape[2]
        g = np.asarray(self.G @ np.einsum("nrw,nr->nw", D, ev["s"]))
        QD = np.einsum("nrc,ncw->nrw", ev["Q"], D)
        Hn = -np.einsum("nrw,nrv->nwv", D, QD)
        H = np.asarray(self.G @ Hn.reshape(Hn.shape[0], -1)).reshape(self.n_groups, w, w)
        H = 0.5 * (H + np.swapaxes(H, 1, 2))
        if self.spec.variant == "nested":
            H = nearest_psd(H)
        return g, H

    def raw_hessian(self, parts, alpha):
        """Per-group negative Hessian without PSD projection."""
        ev = self._evaluate(parts, alpha, 2)
        D = self.D
        w = D.shape[2]
        QD = np.einsum("nrc,ncw->nrw", ev["Q"], D)
        Hn = -np.einsum("nrw,nrv->nwv", D, QD)
        return np.asarray(self.G @ Hn.reshape(Hn.shape[0], -1)).reshape(self.n_groups, w, w)


# ----------------------------------------------------------------------------
# Functional wrappers for single groups
# ----------------------------------------------------------------------------

def _as_parts(theta_parts, spec, group):
    if isinstance(theta_parts, ThetaParts):
        return theta_parts
    return unpack(theta_parts, spec.layout(group.n_fixed, group.n_random))


def utilities(spec, theta_parts, alpha_i, group):
    """Utilities ``(T, R)`` for the occasions of a one-group dataset."""
    model = ChoiceModel(spec, group)
    return model.utilities(_as_parts(theta_parts, spec, group), np.atleast_2d(alpha_i))


def group_log_likelihood(spec, theta_parts, alpha_i, group):
    """Sum of per-occasion log-likelihoods of a one-group dataset."""
    model = ChoiceModel(spec, group)
    return model.loglik(_as_parts(theta_parts, spec, group), np.atleast_2d(alpha_i))


def grad_alpha(spec, theta_parts, alpha_i, group):
    """Gradient of :func:`group_log_likelihood` in ``alpha_i``."""
    model = ChoiceModel(spec, group)
    _, _, ga = model.loglik_and_grads(_as_parts(theta_parts, spec, group),
                                      np.atleast_2d(alpha_i))
    return ga[0]


def hess_alpha(spec, theta_parts, alpha_i, group):
    """Negative Hessian of :func:`group_log_likelihood` in ``alpha_i`` (unprojected)."""
    model = ChoiceModel(spec, group)
    return model.raw_hessian(_as_parts(theta_parts, spec, group), np.atleast_2d(alpha_i))[0]


def grad_theta_loglik(spec, theta, alpha, dataset):
    """Gradient of the total log-likelihood in the packed parameter vector."""
    model = ChoiceModel(spec, dataset)
    return model.loglik_and_grads(model.parts(theta), alpha, want_alpha=False)[1]
