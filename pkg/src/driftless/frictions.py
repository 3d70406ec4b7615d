"""Trading frictions: generalized costs, marginal rates and marginal cost.

The cost model is proportional-on-mid-notional, gamma * |a| * H per
instrument, with an optional hard per-step vega cap expressed as infinite
cost.  Marginal rates gamma+/- are the one-sided derivatives at zero
trade; both are stored as non-negative magnitudes, so the marginal cost is
m(a) = a+ . gamma+ + a- . |gamma-| >= 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CostSpec:
    """Proportional trading cost description.

    ``gamma_prop`` is a scalar rate applied to every instrument (fraction
    of traded mid notional); ``vega_cap`` is an optional per-step limit on
    total traded vega; ``mode`` selects the cost term used in objectives:
    none (frictionless), marginal, or full.
    """

    gamma_prop: float = 0.0
    vega_cap: float | None = None
    mode: str = "marginal"

    def __post_init__(self):
        if self.gamma_prop < 0:
            raise ValueError("gamma_prop must be >= 0")
        if self.vega_cap is not None and self.vega_cap <= 0:
            raise ValueError("vega_cap must be positive when present")
        if self.mode not in ("full", "marginal", "none"):
            raise ValueError(f"unknown cost mode {self.mode!r}")

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(
                {"gamma": self.gamma_prop, "vega_cap": self.vega_cap, "mode": self.mode},
                fh,
                indent=2,
            )

    @classmethod
    def from_dict(cls, d):
        return cls(
            gamma_prop=d.get("gamma", 0.0),
            vega_cap=d.get("vega_cap"),
            mode=d.get("mode", "marginal"),
        )

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def cost(spec, a, mids, vegas=None):
    """Full cost of trading ``a`` at mid prices ``mids``.

    Returns +inf when the vega cap is breached; c(0) = 0 always.
    Arrays broadcast, so this also evaluates whole (path, step) batches.
    """
    a = np.asarray(a, dtype=float)
    mids = np.asarray(mids, dtype=float)
    base = spec.gamma_prop * np.abs(a) * np.abs(mids)
    total = base.sum(axis=-1)
    if spec.vega_cap is not None and vegas is not None:
        traded_vega = (np.abs(a) * np.asarray(vegas, dtype=float)).sum(axis=-1)
        total = np.where(traded_vega <= spec.vega_cap, total, np.inf)
    return total


def marginal_rates(spec, mids):
    """One-sided marginal rates (gamma+, gamma-) at zero trade.

    The cap is inactive at a = 0, so both sides equal gamma * H, returned
    as non-negative magnitudes.
    """
    rate = spec.gamma_prop * np.abs(np.asarray(mids, dtype=float))
    return rate, rate.copy()


def marginal_cost(spec, a, mids):
    """Positively homogeneous first-order cost m(a) = a+ g+ + a- |g-|."""
    a = np.asarray(a, dtype=float)
    g_plus, g_minus = marginal_rates(spec, mids)
    pos = np.maximum(a, 0.0)
    neg = np.maximum(-a, 0.0)
    return (pos * g_plus + neg * g_minus).sum(axis=-1)
