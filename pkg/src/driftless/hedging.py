"""Deep hedging of target payoffs, entropy tilts and robustness reports.

Hedging under the reweighted measure yields indifference prices: with
statistical arbitrage removed the certainty equivalent of an empty
portfolio is zero, so -CE(Z) prices the claim Z.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import GridDomainError, TiltError
from .oce import oce_sup
from .trainer import evaluate_policy, forward, train


@dataclass(frozen=True)
class PayoffSpec:
    """Target claim: digital or vanilla at a relative strike, or a custom
    per-path table.  ``side`` is +1 long, -1 short."""

    kind: str  # digital_call | vanilla_call | vanilla_put | custom_table
    rel_strike: float = 1.0
    maturity_steps: int = 0
    side: int = -1
    table: tuple = ()

    def __post_init__(self):
        if self.kind not in ("digital_call", "vanilla_call", "vanilla_put", "custom_table"):
            raise ValueError(f"unknown payoff kind {self.kind!r}")
        if self.kind != "custom_table" and self.rel_strike <= 0:
            raise ValueError("strike must be positive")
        if self.side not in (-1, 1):
            raise ValueError("side must be +1 or -1")

    @classmethod
    def from_dict(cls, d):
        return cls(
            kind=d["kind"],
            rel_strike=d.get("rel_strike", 1.0),
            maturity_steps=d.get("maturity_steps", 0),
            side=d.get("side", -1),
            table=tuple(d.get("table", ())),
        )

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def payoff(spec, bundle):
    """Per-path payoff Z in units of S_0.

    Digitals pay on a strict S/S_0 > k comparison (at-the-money ties pay
    nothing).
    """
    if spec.kind == "custom_table":
        z = np.asarray(spec.table, dtype=float)
        if z.shape[0] != bundle.n_paths:
            raise ValueError("custom table length must equal n_paths")
        return z
    t = spec.maturity_steps
    if not 0 <= t <= bundle.n_steps:
        raise GridDomainError("payoff maturity beyond the simulation horizon")
    s = bundle.spots[:, t]
    k = spec.rel_strike
    if spec.kind == "digital_call":
        z = (s > k).astype(float)
    elif spec.kind == "vanilla_call":
        z = np.maximum(s - k, 0.0)
    else:
        z = np.maximum(k - s, 0.0)
    return spec.side * z


@dataclass
class HedgeResult:
    policy: object
    y_star: float
    certainty_equivalent: float
    pnl: np.ndarray  # per path, Z + G - C (no cash offset)
    stats: dict = field(default_factory=dict)

    def to_json(self, path):
        doc = {
            "policy": self.policy.to_dict(),
            "y_star": self.y_star,
            "certainty_equivalent": self.certainty_equivalent,
            "stats": self.stats,
        }
        with open(path, "w") as fh:
            json.dump(doc, fh)


def _pnl_stats(pnl):
    return {
        "mean": float(np.mean(pnl)),
        "std": float(np.std(pnl)),
        "q01": float(np.quantile(pnl, 0.01)),
        "q99": float(np.quantile(pnl, 0.99)),
    }


def deep_hedge(bundle, returns, weights, z, spec, utility, config):
    """Train a hedge for the claim ``z`` under the given path weights.

    The certainty equivalent of the hedged position is the trained
    objective value; under statarb-free weights -CE is an indifference
    price for the claim.
    """
    z = np.asarray(z, dtype=float)
    sol = train(bundle, returns, spec, utility, config, payoff=z, weights=weights)
    res = evaluate_policy(
        bundle, returns, spec, utility, sol.policy, sol.y_star, payoff=z,
        weights=weights,
    )
    pnl = z + res["gains"] - res["costs"]
    return HedgeResult(
        policy=sol.policy,
        y_star=sol.y_star,
        certainty_equivalent=sol.objective_value,
        pnl=pnl,
        stats=_pnl_stats(pnl),
    )


def decompose_check(bundle, returns, utility, z, config, q_weights, spec=None):
    """Check the hedge decomposition a*_P = a*_Q + a*_0 on trained policies.

    Trains the statistical hedge (P weights, claim), the clean hedge
    (Q* weights, claim) and the pure statarb policy (P weights, empty
    portfolio); reports per-state action residuals and the PnL comparison
    of the clean hedge vs the statistical hedge with statarb subtracted.
    """
    from .frictions import CostSpec
    from .market import feature_matrix

    if spec is None:
        spec = CostSpec(gamma_prop=0.0, mode="none")
    z = np.asarray(z, dtype=float)

    hedge_p = deep_hedge(bundle, returns, None, z, spec, utility, config)
    hedge_q = deep_hedge(bundle, returns, q_weights, z, spec, utility, config)
    sol_0 = train(bundle, returns, spec, utility, config)

    feats = feature_matrix(bundle)
    a_p = forward(hedge_p.policy, feats)
    a_q = forward(hedge_q.policy, feats)
    a_0 = forward(sol_0.policy, feats)

    resid = np.linalg.norm(a_p - a_q - a_0, axis=-1)
    norm_p = np.linalg.norm(a_p, axis=-1)

    g_0 = np.einsum("pti,pti->p", a_0, returns.dh)
    pnl_p_minus_0 = hedge_p.pnl - g_0

    return {
        "median_residual": float(np.median(resid)),
        "median_norm_p": float(np.median(norm_p)),
        "statarb_ce": sol_0.objective_value,
        "pnl_q": hedge_q.pnl,
        "pnl_p_minus_statarb": pnl_p_minus_0,
        "hedge_p": hedge_p,
        "hedge_q": hedge_q,
    }


def tilt(bundle, direction, c, tol=1e-6):
    """Exponential tilt w ~ exp(-theta direction) hitting relative entropy c.

    theta >= 0 is found by bisection on the achieved entropy
    E[w log w] of the mean-1 weights.  c = 0 returns uniform weights.
    """
    if c < 0:
        raise ValueError("target entropy must be >= 0")
    n = bundle.n_paths
    if c == 0:
        return np.ones(n)
    d = np.asarray(direction, dtype=float)
    if not np.all(np.isfinite(d)):
        raise ValueError("tilt direction must be finite")
    if np.ptp(d) < 1e-14:
        raise TiltError("direction is (nearly) constant: entropy target unreachable")

    def entropy(theta):
        z = -theta * d
        z -= z.max()
        w = np.exp(z)
        w /= w.mean()
        return float(np.mean(w * np.log(w))), w

    hi = 1.0
    e_hi, _ = entropy(hi)
    tries = 0
    while e_hi < c:
        hi *= 2.0
        e_hi, _ = entropy(hi)
        tries += 1
        if tries > 200:
            raise TiltError(f"entropy target {c} unreachable for this direction")
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        e_mid, w = entropy(mid)
        if abs(e_mid - c) <= tol:
            return w
        if e_mid < c:
            lo = mid
        else:
            hi = mid
    e_fin, w = entropy(0.5 * (lo + hi))
    if abs(e_fin - c) > tol:
        raise TiltError(f"bisection failed to reach entropy {c} (got {e_fin})")
    return w


def robustness_eval(bundle, returns, hedge_p, hedge_q, z, spec, utility, c_list,
                    direction=None):
    """Certainty-equivalent degradation of two fixed hedges under tilts.

    For each target entropy c, reweights the sample against ``direction``
    (default: the statistical hedge's own PnL) and evaluates both hedges'
    CE via a fresh sup over the cash offset.  Degradation is
    CE(uniform) - CE(tilted).
    """
    if direction is None:
        direction = hedge_p.pnl
    base_p, _ = oce_sup(hedge_p.pnl, None, utility)
    base_q, _ = oce_sup(hedge_q.pnl, None, utility)
    out = {
        "base_ce_p": base_p,
        "base_ce_q": base_q,
        "entries": [],
    }
    for c in c_list:
        w = tilt(bundle, direction, c)
        ce_p, _ = oce_sup(hedge_p.pnl, w, utility)
        ce_q, _ = oce_sup(hedge_q.pnl, w, utility)
        out["entries"].append(
            {
                "c": float(c),
                "ce_p": ce_p,
                "ce_q": ce_q,
                "delta_p": base_p - ce_p,
                "delta_q": base_q - ce_q,
                "tilted_mean_p": float(np.mean(w * hedge_p.pnl)),
                "tilted_mean_q": float(np.mean(w * hedge_q.pnl)),
            }
        )
    return out
