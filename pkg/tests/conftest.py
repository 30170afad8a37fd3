import numpy as np
import pytest

from cvilogit.choice import ChoiceDataset, ModelSpec
from cvilogit.params import PriorSpec
from cvilogit.vi import FactorGaussian, FitArtifact, LocalGaussians, ScheduleConfig

BUNDLE_M = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 0], [0, 1, 1]])


def make_specs(beta_mode="shared"):
    return {
        "standard": ModelSpec.standard(4, beta_mode=beta_mode),
        "bundle": ModelSpec.bundle(BUNDLE_M, beta_mode=beta_mode),
        "nested": ModelSpec.nested(5, [[0, 1], [2, 3, 4]], beta_mode=beta_mode),
    }


def random_dataset(spec, rng, n_groups=2, n_occ=6, n_fixed=2, n_random=2, p_avail=0.8):
    """Small dataset with random covariates, choice sets and outcomes."""
    J, R = spec.n_items, spec.n_choice
    n = n_groups * n_occ
    xf = rng.normal(size=(n, J, n_fixed))
    xr = rng.normal(size=(n, J, n_random))
    xf[:, 0] = 0.0
    xr[:, 0] = 0.0
    avail = rng.random((n, R)) < p_avail
    avail[:, 0] = True
    choice = np.array([rng.choice(np.flatnonzero(a)) for a in avail])
    group = np.repeat(np.arange(n_groups), n_occ)
    return ChoiceDataset(xf, xr, avail, choice, group, np.arange(n_groups))


def central_diff(f, x, h=1e-5):
    """Central finite-difference gradient of a scalar function of an array."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.size)
    for k in range(x.size):
        e = np.zeros(x.size)
        e[k] = h
        out[k] = (f(x + e.reshape(x.shape)) - f(x - e.reshape(x.shape))) / (2 * h)
    return out.reshape(x.shape)


def central_jac(f, x, h=1e-5):
    """Jacobian of a vector function by central differences, shape (x.size, out.size)."""
    x = np.asarray(x, dtype=float)
    rows = []
    for k in range(x.size):
        e = np.zeros(x.size)
        e[k] = h
        rows.append((np.ravel(f(x + e.reshape(x.shape))) - np.ravel(f(x - e.reshape(x.shape))))
                    / (2 * h))
    return np.array(rows)


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-8))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def exact_conditional(model, parts):
    """Closed-form posterior of each alpha_i given theta in the linear-Gaussian model."""
    s2 = model.noise ** 2
    r = model.y - model.z @ parts.beta
    means, covs = [], []
    for i in range(model.n_groups):
        rows = model.group == i
        X = model.x[rows]
        prec = X.T @ X / s2 + np.linalg.inv(parts.sigma)
        V = np.linalg.inv(prec)
        means.append(V @ (X.T @ r[rows] / s2 + np.linalg.solve(parts.sigma, parts.xi)))
        covs.append(V)
    return np.array(means), np.array(covs)


def point_fit(spec, layout, theta, alpha, group_ids, d=0.0, local_sd=0.0):
    """Artifact whose approximation is (nearly) a point mass at ``(theta, alpha)``."""
    alpha = np.asarray(alpha, dtype=float)
    S, w = alpha.shape
    q = FactorGaussian(theta, np.zeros((theta.size, 1)), np.full(theta.size, d))
    factor = np.broadcast_to(local_sd * np.eye(w), (S, w, w)).copy()
    return FitArtifact("cvi", spec, layout, PriorSpec(), ScheduleConfig(n_sim=50), 0, q,
                       LocalGaussians(alpha, factor), np.asarray(group_ids))


# acceptance criteria outcomes, reported once at the end of the run
ACCEPTANCE = {}


class criterion:
    """Context manager recording the outcome of one acceptance criterion."""

    def __init__(self, number, title):
        self.number, self.title = number, title
        self.details = []

    def note(self, text):
        self.details.append(text)

    def __enter__(self):
        return self

    def __exit__(self, kind, err, tb):
        status = "PASS" if kind is None else "FAIL"
        detail = "; ".join(self.details)
        if err is not None:
            detail = (detail + "; " if detail else "") + str(err).splitlines()[0][:200]
        line = f"criterion {self.number:>2} {status}: {self.title}" + (f" ({detail})" if detail else "")
        ACCEPTANCE[self.number] = line
        print(line)
        return False


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
