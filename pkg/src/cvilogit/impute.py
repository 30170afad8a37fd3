"""Gap filling for scanner-panel covariates before building choice sets.

Continuous covariates (such as log price) take the mean of the same item at
the same store on the same day, then in the same week; rows still missing
are marked unavailable.  Indicator covariates (display, feature) take the
maximum over the same keys and default to 0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StructuralError


@dataclass(frozen=True)
class ImputationPolicy:
    """Column roles for :func:`impute`."""

    continuous: tuple = ()
    indicators: tuple = ()
    store: str = "store"
    day: str = "day"
    week: str = "week"
    item: str = "alt"
    available: str = "available"


def _fill(df, col, policy, how):
    out = df[col].copy()
    for period in (policy.day, policy.week):
        if not out.isna().any():
            break
        keys = [df[policy.store], df[period], df[policy.item]]
        filler = df[col].groupby(keys).transform(how)
        out = out.fillna(filler)
    return out


def impute(table, policy):
    """Fill covariate gaps in a long-format table.

    Fill values come from the originally observed entries only, so the
    operation is idempotent.

    Parameters
    ----------
    table : pandas.DataFrame
        Must hold the store, day, week and item key columns.
    policy : ImputationPolicy

    Returns
    -------
    pandas.DataFrame
        A copy with gaps filled and an ``available`` column (created as all
        ones when absent) set to 0 where a continuous covariate stayed missing.
    """
    need = [policy.store, policy.day, policy.week, policy.item]
    need += list(policy.continuous) + list(policy.indicators)
    missing = [c for c in need if c not in table.columns]
    if missing:
        raise StructuralError(f"missing columns: {', '.join(missing)}")
    out = table.copy()
    if policy.available not in out.columns:
        out[policy.available] = 1
    unavailable = np.zeros(len(out), dtype=bool)
    for col in policy.continuous:
        out[col] = _fill(table, col, policy, "mean")
        unavailable |= out[col].isna().to_numpy()
    for col in policy.indicators:
        out[col] = _fill(table, col, policy, "max").fillna(0)
    avail = out[policy.available].to_numpy().astype(int)
    out[policy.available] = np.where(unavailable, 0, avail)
    return out


def drop_unavailable_reference(table, occasion_keys, item="alt", reference=1,
                               available="available"):
    """Drop occasions whose reference item is missing or unavailable."""
    ref = table[(table[item] == reference) & (table[available] == 1)]
    ok = ref[list(occasion_keys)].drop_duplicates()
    return table.merge(ok, on=list(occasion_keys), how="inner")
