"""Reading and writing datasets, fitted artifacts, configurations and reports.

Long-format CSV schema, one row per (group, occasion, alternative)::

    group, occasion, alt, available, chosen, f_<name>..., r_<name>...

``alt`` is 1-based and alternative 1 is the reference.  Covariates are per
item.  For bundle data (more alternatives than items) the rows ``alt = 1..J``
carry the covariates of items ``1..J`` and the remaining rows leave them
empty.  Floats are written with 17 significant digits so that a save/load
round trip is exact.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .choice import ChoiceDataset, ModelSpec
from .errors import DatasetError, StructuralError
from .params import ParameterLayout, PriorSpec
from .vi import FactorGaussian, FitArtifact, LocalGaussians, ScheduleConfig, Trace

KEY_COLUMNS = ["group", "occasion", "alt", "available", "chosen"]
FLOAT_FORMAT = "%.17g"


# ----------------------------------------------------------------------------
# Datasets
# ----------------------------------------------------------------------------

def dataset_to_frame(data):
    """Long-format table of a dataset."""
    N, R, J = data.n_occasions, data.n_choice, data.n_items
    alt = np.tile(np.arange(R), N)
    occ = np.repeat(np.arange(N), R)
    out = {"group": data.group_ids[data.group][occ],
           "occasion": data.occasion_ids[occ],
           "alt": alt + 1,
           "available": data.available.ravel().astype(int),
           "chosen": (data.choice[occ] == alt).astype(int)}
    has_cov = alt < J
    for prefix, names, x in (("f_", data.fixed_names, data.x_fixed),
                             ("r_", data.random_names, data.x_random)):
        for k, name in enumerate(names):
            col = np.full(N * R, np.nan)
            col[has_cov] = x[occ[has_cov], alt[has_cov], k]
            out[prefix + name] = col
    return pd.DataFrame(out)


def save_dataset(data, path):
    dataset_to_frame(data).to_csv(path, index=False, float_format=FLOAT_FORMAT)


def _parse_ids(values):
    values = np.asarray(values).astype(str)
    try:
        as_int = values.astype(np.int64)
        if np.array_equal(as_int.astype(str), values):
            return as_int
    except ValueError:
        pass
    return values


def dataset_from_frame(df, n_items=None, difference=False):
    """Validated :class:`ChoiceDataset` from a long-format table.

    Parameters
    ----------
    df : pandas.DataFrame
    n_items : int, optional
        Number of items ``J``; defaults to the number of alternatives.
    difference : bool
        Subtract the reference item's covariates from every item.  Without
        it the reference rows must already be zero.

    Raises
    ------
    DatasetError
        With the offending data-row numbers (1-based, header excluded).
    """
    missing = [c for c in KEY_COLUMNS if c not in df.columns]
    if missing:
        raise StructuralError(f"missing columns: {', '.join(missing)}")
    fcols = [c for c in df.columns if c.startswith("f_")]
    rcols = [c for c in df.columns if c.startswith("r_")]
    extra = [c for c in df.columns if c not in KEY_COLUMNS + fcols + rcols]
    if extra:
        raise StructuralError(f"unexpected columns: {', '.join(extra)}")
    rownum = np.arange(1, len(df) + 1)
    alt = df["alt"].to_numpy()
    try:
        alt = alt.astype(np.int64)
    except (TypeError, ValueError):
        raise DatasetError("non-integer alternative ids") from None
    R = int(alt.max()) if len(df) else 0
    J = R if n_items is None else int(n_items)
    if J > R:
        raise StructuralError(f"{J} items but only {R} alternatives")
    bad = np.flatnonzero(alt < 1)
    if bad.size:
        raise DatasetError("alternative ids must be >= 1", rownum[bad])
    avail = df["available"].to_numpy().astype(int)
    chosen = df["chosen"].to_numpy().astype(int)
    bad = np.flatnonzero(~np.isin(avail, (0, 1)) | ~np.isin(chosen, (0, 1)))
    if bad.size:
        raise DatasetError("available and chosen flags must be 0 or 1", rownum[bad])
    gvals = df["group"].astype(str).to_numpy()
    ovals = df["occasion"].astype(str).to_numpy()
    keys = pd.MultiIndex.from_arrays([gvals, ovals])
    occ_code, occ_keys = pd.factorize(keys, sort=False)
    dup = pd.DataFrame({"o": occ_code, "a": alt}).duplicated(keep=False).to_numpy()
    if dup.any():
        raise DatasetError("duplicate (group, occasion, alt) rows", rownum[dup])
    N = len(occ_keys)
    n_chosen = np.bincount(occ_code, weights=chosen, minlength=N)
    for cond, msg in ((n_chosen == 0, "occasion without a chosen alternative"),
                      (n_chosen > 1, "occasion with more than one chosen alternative")):
        if cond.any():
            first = np.flatnonzero(cond)[0]
            rows = rownum[(occ_code == first) & ((chosen == 1) | (n_chosen[first] == 0))]
            raise DatasetError(msg, rows)
    bad = np.flatnonzero((chosen == 1) & (avail == 0))
    if bad.size:
        raise DatasetError("chosen alternative is unavailable", rownum[bad])
    available = np.zeros((N, R), dtype=bool)
    available[occ_code, alt - 1] = avail == 1
    ref_ok = np.zeros(N, dtype=bool)
    ref_ok[occ_code[(alt == 1) & (avail == 1)]] = True
    if not ref_ok.all():
        first = np.flatnonzero(~ref_ok)[0]
        raise DatasetError("reference alternative missing or unavailable",
                           rownum[occ_code == first])
    choice = np.zeros(N, dtype=int)
    choice[occ_code[chosen == 1]] = alt[chosen == 1] - 1
    xs = []
    for cols in (fcols, rcols):
        x = np.zeros((N, J, len(cols)))
        item_rows = alt <= J
        vals = df.loc[item_rows, cols].to_numpy(dtype=float) if cols else np.zeros((item_rows.sum(), 0))
        # covariates of unavailable items may be missing
        usable = available[occ_code[item_rows], alt[item_rows] - 1]
        bad = ~np.isfinite(vals).all(axis=1) & usable
        if bad.any():
            raise DatasetError("missing covariate value", rownum[item_rows][bad])
        x[occ_code[item_rows], alt[item_rows] - 1] = np.where(np.isfinite(vals), vals, 0.0)
        if difference:
            x = x - x[:, :1, :]
        xs.append(x)
    gcodes, gids = pd.factorize(pd.Index([k[0] for k in occ_keys]), sort=False)
    occ_ids = _parse_ids([k[1] for k in occ_keys])
    return ChoiceDataset(xs[0], xs[1], available, choice, gcodes, _parse_ids(gids),
                         occ_ids, [c[2:] for c in fcols], [c[2:] for c in rcols])


def load_dataset(path, n_items=None, difference=False):
    """Read a long-format CSV; see :func:`dataset_from_frame`."""
    df = pd.read_csv(path, float_precision="round_trip", dtype={"group": str, "occasion": str})
    return dataset_from_frame(df, n_items=n_items, difference=difference)


def split_train_test(data, frac=0.8, rng=None):
    """Random split of each group's occasions into training and test sets."""
    rng = np.random.default_rng(rng)
    u = rng.random(data.n_occasions)
    train = np.zeros(data.n_occasions, dtype=bool)
    for g in range(data.n_groups):
        rows = np.flatnonzero(data.group == g)
        k = int(round(frac * rows.size))
        train[rows[np.argsort(u[rows])[:k]]] = True
    return data.take(np.flatnonzero(train)), data.take(np.flatnonzero(~train))


# ----------------------------------------------------------------------------
# Fitted artifacts
# ----------------------------------------------------------------------------

def _ids_to_json(ids):
    return [x.item() if hasattr(x, "item") else x for x in np.asarray(ids).tolist()]


def artifact_to_dict(fit):
    """JSON-ready document of a fit (the trace is stored separately)."""
    q = fit.q
    doc = {
        "format": "cvilogit-artifact-1",
        "method": fit.method,
        "spec": fit.spec.to_dict() if fit.spec is not None else None,
        "layout": fit.layout.to_dict(),
        "prior": fit.prior.to_dict(),
        "schedule": fit.schedule.to_dict(),
        "seed": fit.seed,
        "n_iter": fit.n_iter,
        "stopped": fit.stopped,
        "kappa": fit.kappa,
        "q_theta": {"mu": q.mu.tolist(), "B": q.B.tolist(),
                    "B_mask": q.mask.astype(int).tolist(), "d": q.d.tolist()},
        "group_ids": _ids_to_json(fit.group_ids),
        "local": {"mean": fit.local.mean.tolist(), "factor": fit.local.factor.tolist()},
        "vartheta": None if fit.vartheta is None else np.asarray(fit.vartheta).tolist(),
        "centers": None if fit.centers is None else np.asarray(fit.centers).tolist(),
        "final_smoothed_elbo": fit.trace.smoothed[-1] if len(fit.trace) else None,
    }
    return doc


def artifact_from_dict(doc):
    lay = ParameterLayout(**doc["layout"])
    qd = doc["q_theta"]
    B = np.array(qd["B"], dtype=float).reshape(lay.size, -1)
    q = FactorGaussian(np.array(qd["mu"], dtype=float), B, np.array(qd["d"], dtype=float))
    S = len(doc["group_ids"])
    mean = np.array(doc["local"]["mean"], dtype=float).reshape(S, lay.dim_alpha)
    factor = np.array(doc["local"]["factor"], dtype=float).reshape(S, lay.dim_alpha, -1)
    arr = lambda v: None if v is None else np.array(v, dtype=float)
    centers = arr(doc.get("centers"))
    return FitArtifact(
        method=doc["method"],
        spec=None if doc["spec"] is None else ModelSpec.from_dict(doc["spec"]),
        layout=lay, prior=PriorSpec(**doc["prior"]),
        schedule=ScheduleConfig.from_dict(doc["schedule"]), seed=doc["seed"], q=q,
        local=LocalGaussians(mean, factor), group_ids=np.array(doc["group_ids"]),
        vartheta=arr(doc.get("vartheta")),
        centers=None if centers is None else centers.reshape(S, lay.dim_alpha),
        kappa=doc.get("kappa"), n_iter=doc.get("n_iter", 0), stopped=doc.get("stopped", False),
        trace=Trace())


def save_artifact(fit, path, trace_path=None):
    with open(path, "w") as fh:
        json.dump(artifact_to_dict(fit), fh, indent=1)
        fh.write("\n")
    if trace_path is not None:
        save_trace(fit.trace, trace_path)


def load_artifact(path, trace_path=None):
    with open(path) as fh:
        fit = artifact_from_dict(json.load(fh))
    if trace_path is not None:
        fit.trace = load_trace(trace_path)
    return fit


def save_trace(trace, path):
    pd.DataFrame(trace.table()).to_csv(path, index=False, float_format=FLOAT_FORMAT)


def load_trace(path):
    df = pd.read_csv(path, float_precision="round_trip")
    return Trace(elbo=df["elbo_sample"].tolist(), smoothed=df["smoothed_elbo"].tolist(),
                 kappa=df["kappa"].astype(int).tolist(), wall_ms=df["wall_ms"].tolist())


# ----------------------------------------------------------------------------
# Configuration
# ----------------------------------------------------------------------------

@dataclass
class FitConfig:
    """Settings of a fit run.

    ``model`` is a :class:`ModelSpec` document; for bundle data it fixes the
    number of items used to parse the dataset.
    """

    model: dict
    method: str = "cvi"
    prior: PriorSpec = field(default_factory=PriorSpec)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    seed: int = 0
    difference: bool = False

    def __post_init__(self):
        if self.method not in ("cvi", "davi"):
            raise StructuralError(f"unknown method {self.method!r}")

    @property
    def spec(self):
        return ModelSpec.from_dict(self.model)

    @classmethod
    def from_dict(cls, d):
        known = {"model", "method", "prior", "schedule", "seed", "difference"}
        unknown = set(d) - known
        if unknown:
            raise StructuralError(f"unknown config keys: {', '.join(sorted(unknown))}")
        prior = d.get("prior", {})
        if isinstance(prior, str):
            prior = {"sigma_prior": prior}
        return cls(model=d["model"], method=d.get("method", "cvi"), prior=PriorSpec(**prior),
                   schedule=ScheduleConfig(**d.get("schedule", {})), seed=int(d.get("seed", 0)),
                   difference=bool(d.get("difference", False)))

    def to_dict(self):
        return {"model": self.model, "method": self.method, "prior": self.prior.to_dict(),
                "schedule": self.schedule.to_dict(), "seed": self.seed,
                "difference": self.difference}


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def load_fit_config(path):
    return FitConfig.from_dict(read_json(path))


def write_table(df, path):
    """Write a report table as CSV with round-trip floats."""
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT)
