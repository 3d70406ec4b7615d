import numpy as np
import pytest

from driftless.frictions import CostSpec, cost, marginal_cost, marginal_rates


def test_zero_action_costs_nothing():
    spec = CostSpec(gamma_prop=0.001)
    assert cost(spec, np.zeros(3), np.full(3, 0.05)) == 0.0


def test_proportional_arithmetic():
    spec = CostSpec(gamma_prop=0.001)
    assert cost(spec, np.array([10.0]), np.array([0.05])) == pytest.approx(0.0005)


def test_vega_cap_infinite():
    spec = CostSpec(gamma_prop=0.001, vega_cap=1.0)
    c = cost(spec, np.array([3.0]), np.array([0.05]), vegas=np.array([0.5]))
    assert np.isinf(c)


def test_marginal_rates_zero_spec():
    gp, gm = marginal_rates(CostSpec(gamma_prop=0.0), np.full(2, 0.05))
    assert np.all(gp == 0) and np.all(gm == 0)


def test_marginal_rates_value():
    gp, gm = marginal_rates(CostSpec(gamma_prop=0.001), np.full(4, 0.05))
    assert np.allclose(gp, 5e-5)
    assert np.allclose(gm, 5e-5)


def test_one_sided_difference_matches_rate():
    spec = CostSpec(gamma_prop=0.001)
    mids = np.array([0.04, 0.07])
    gp, _ = marginal_rates(spec, mids)
    for i in range(2):
        for eps in (1e-3, 1e-6):
            e = np.zeros(2)
            e[i] = eps
            assert (cost(spec, e, mids) - 0.0) / eps == pytest.approx(gp[i])


def test_marginal_cost_zero():
    spec = CostSpec(gamma_prop=0.01)
    assert marginal_cost(spec, np.zeros(2), np.ones(2)) == 0.0


def test_marginal_cost_signed_legs():
    # gamma+ = gamma- = 0.01 and 0.02 per instrument via mids 1 and 2
    spec = CostSpec(gamma_prop=0.01)
    a = np.array([2.0, -3.0])
    mids = np.array([1.0, 2.0])
    assert marginal_cost(spec, a, mids) == pytest.approx(0.02 + 0.06)


def test_marginal_below_full_cost():
    rng = np.random.default_rng(5)
    spec = CostSpec(gamma_prop=0.002)
    for _ in range(1000):
        a = rng.normal(size=3) * 10
        mids = np.abs(rng.normal(size=3)) + 0.01
        assert marginal_cost(spec, a, mids) <= cost(spec, a, mids) + 1e-15


def test_positive_homogeneity():
    rng = np.random.default_rng(6)
    spec = CostSpec(gamma_prop=0.003)
    a = rng.normal(size=4)
    mids = np.abs(rng.normal(size=4)) + 0.05
    for lam in (0.5, 2.0, 7.3):
        assert marginal_cost(spec, lam * a, mids) == pytest.approx(
            lam * marginal_cost(spec, a, mids), rel=1e-12
        )


def test_cost_convex_midpoint():
    rng = np.random.default_rng(7)
    spec = CostSpec(gamma_prop=0.001, vega_cap=5.0)
    mids = np.abs(rng.normal(size=3)) + 0.02
    vegas = np.abs(rng.normal(size=3))
    for _ in range(200):
        a, b = rng.normal(size=(2, 3)) * 3
        ca = cost(spec, a, mids, vegas)
        cb = cost(spec, b, mids, vegas)
        cm = cost(spec, 0.5 * (a + b), mids, vegas)
        assert cm <= 0.5 * (ca + cb) + 1e-12


def test_json_round_trip(tmp_path):
    spec = CostSpec(gamma_prop=0.001, vega_cap=None, mode="marginal")
    p = tmp_path / "cost.json"
    spec.to_json(p)
    back = CostSpec.from_json(p)
    assert back == spec
    assert '"gamma"' in p.read_text()


def test_negative_rate_rejected():
    with pytest.raises(ValueError):
        CostSpec(gamma_prop=-0.1)
