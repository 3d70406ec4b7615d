import numpy as np
import pytest

from driftless.errors import ArbitrageError, SingularSystemError
from driftless.surface import (
    CallGrid,
    DlvGrid,
    DlvSurface,
    dlv_from_prices,
    intrinsic_row,
    prices_from_dlv,
    read_surface_csv,
    solve_tridiagonal,
    write_surface_csv,
)


def small_grid():
    return DlvGrid(
        strikes=(0.9, 1.0, 1.1),
        maturities=(20 / 252, 40 / 252, 60 / 252),
        boundary_lo=0.5,
        boundary_hi=1.6,
    )


def wide_grid():
    return DlvGrid(
        strikes=tuple(np.arange(0.85, 1.151, 0.05)),
        maturities=(20 / 252, 40 / 252, 60 / 252),
        boundary_lo=0.5,
        boundary_hi=1.45,
    )


def dense_solve(lower, diag, upper, rhs):
    n = len(diag)
    a = np.zeros((n, n))
    a[np.arange(n), np.arange(n)] = diag
    a[np.arange(1, n), np.arange(n - 1)] = lower
    a[np.arange(n - 1), np.arange(1, n)] = upper
    return np.linalg.solve(a, rhs)


class TestSolveTridiagonal:
    def test_identity(self):
        rhs = np.array([1.0, -2.0, 3.5])
        x = solve_tridiagonal(
            np.zeros(2), np.ones(3), np.zeros(2), rhs
        )
        assert np.array_equal(x, rhs)

    def test_n3_against_dense(self):
        lower = np.array([-1.0, 2.0])
        diag = np.array([4.0, 5.0, 6.0])
        upper = np.array([1.0, -1.5])
        rhs = np.array([1.0, 2.0, 3.0])
        x = solve_tridiagonal(lower, diag, upper, rhs)
        assert np.allclose(x, dense_solve(lower, diag, upper, rhs), atol=1e-14)

    def test_random_diagonally_dominant_residual(self):
        rng = np.random.default_rng(3)
        n = 50
        lower = rng.normal(size=n - 1)
        upper = rng.normal(size=n - 1)
        diag = 3.0 + np.abs(rng.normal(size=n))
        diag[1:] += np.abs(lower)
        diag[:-1] += np.abs(upper)
        rhs = rng.normal(size=n)
        x = solve_tridiagonal(lower, diag, upper, rhs)
        resid = (
            diag * x
            + np.concatenate(([0.0], lower * x[:-1]))
            + np.concatenate((upper * x[1:], [0.0]))
            - rhs
        )
        assert np.max(np.abs(resid)) < 1e-10

    def test_matches_dense_up_to_n200(self):
        rng = np.random.default_rng(9)
        for n in (5, 50, 200):
            lower = rng.normal(size=n - 1)
            upper = rng.normal(size=n - 1)
            diag = 2.0 + np.abs(lower.sum() * 0) + np.abs(rng.normal(size=n))
            diag[1:] += np.abs(lower)
            diag[:-1] += np.abs(upper)
            rhs = rng.normal(size=n)
            x = solve_tridiagonal(lower, diag, upper, rhs)
            ref = dense_solve(lower, diag, upper, rhs)
            assert np.allclose(x, ref, rtol=1e-12, atol=1e-12)

    def test_zero_pivot_raises(self):
        with pytest.raises(SingularSystemError):
            solve_tridiagonal(
                np.zeros(1), np.array([0.0, 1.0]), np.zeros(1), np.ones(2)
            )


class TestGrid:
    def test_strikes_must_increase(self):
        with pytest.raises(ValueError):
            DlvGrid(strikes=(1.0, 0.9), maturities=(0.1,))

    def test_boundaries_bracket(self):
        with pytest.raises(ValueError):
            DlvGrid(strikes=(0.9, 1.0), maturities=(0.1,), boundary_lo=0.95)

    def test_roundtrip_dict(self):
        g = small_grid()
        assert DlvGrid.from_dict(g.to_dict()) == g


class TestPricesFromDlv:
    def test_zero_vol_is_intrinsic(self):
        g = small_grid()
        cg = prices_from_dlv(DlvSurface(g, np.zeros((3, 3))))
        intrinsic = intrinsic_row(g)
        for j in range(cg.prices.shape[0]):
            assert np.allclose(cg.prices[j], intrinsic, atol=1e-15)

    def test_flat_surface_matches_dense_oracle(self):
        g = wide_grid()
        sigma = np.full((3, 7), 0.2)
        cg = prices_from_dlv(DlvSurface(g, sigma))
        # replicate the implicit scheme with a dense solver
        xs = np.asarray(g.all_strikes)
        taus = [0.0] + list(g.maturities)
        c_prev = np.maximum(1.0 - xs, 0.0)
        for j in range(3):
            dtau = taus[j + 1] - taus[j]
            n = len(g.strikes)
            a = np.zeros((n, n))
            rhs = c_prev[1:-1].copy()
            for i in range(n):
                x = xs[i + 1]
                dx_lo = xs[i + 1] - xs[i]
                dx_hi = xs[i + 2] - xs[i + 1]
                s2 = sigma[j, i] ** 2
                alpha = 0.5 * dtau * x * x * s2 / dx_lo
                beta = 0.5 * dtau * x * x * s2 / dx_hi
                a[i, i] = 1.0 + alpha + beta
                if i > 0:
                    a[i, i - 1] = -alpha
                else:
                    rhs[i] += alpha * (1.0 - xs[0])
                if i < n - 1:
                    a[i, i + 1] = -beta
            interior = np.linalg.solve(a, rhs)
            assert np.allclose(cg.prices[j + 1, 1:-1], interior, atol=1e-12)
            c_prev = np.concatenate(([1.0 - xs[0]], interior, [0.0]))

    def test_monotone_in_maturity_100_random_surfaces(self):
        g = small_grid()
        rng = np.random.default_rng(11)
        for _ in range(100):
            sigma = rng.uniform(0.05, 1.5, size=(3, 3))
            cg = prices_from_dlv(DlvSurface(g, sigma))
            assert np.all(np.diff(cg.prices, axis=0) >= -1e-12)

    def test_butterfly_convexity(self):
        g = small_grid()
        rng = np.random.default_rng(12)
        for _ in range(20):
            sigma = rng.uniform(0.05, 1.0, size=(3, 3))
            cg = prices_from_dlv(DlvSurface(g, sigma))
            xs = np.asarray(g.all_strikes)
            for j in range(1, 4):
                c = cg.prices[j]
                delta = np.diff(c) / np.diff(xs)
                assert np.all(np.diff(delta) >= -1e-12)


class TestDlvFromPrices:
    def test_intrinsic_prices_give_zero_vol(self):
        g = small_grid()
        intrinsic = intrinsic_row(g)
        prices = np.tile(intrinsic, (4, 1))
        s = dlv_from_prices(CallGrid(g, prices))
        assert np.array_equal(s.sigma, np.zeros((3, 3)))

    def test_round_trip_sigma(self):
        g = small_grid()
        rng = np.random.default_rng(21)
        sigma = rng.uniform(0.05, 1.2, size=(3, 3))
        cg = prices_from_dlv(DlvSurface(g, sigma))
        back = dlv_from_prices(cg)
        assert np.allclose(back.sigma, sigma, atol=1e-9)

    def test_round_trip_prices(self):
        g = wide_grid()
        rng = np.random.default_rng(22)
        sigma = rng.uniform(0.05, 0.9, size=(3, 7))
        cg = prices_from_dlv(DlvSurface(g, sigma))
        again = prices_from_dlv(dlv_from_prices(cg))
        assert np.allclose(again.prices, cg.prices, atol=1e-9)

    def test_calendar_arbitrage_names_node(self):
        g = small_grid()
        sigma = np.full((3, 3), 0.3)
        cg = prices_from_dlv(DlvSurface(g, sigma))
        prices = cg.prices.copy()
        prices[2, 2] = prices[1, 2] - 1e-3  # negative calendar change at (2, 2)
        with pytest.raises(ArbitrageError) as err:
            dlv_from_prices(CallGrid(g, prices))
        assert err.value.node is not None
        assert err.value.node[0] == 2


class TestSurfaceCsv:
    def test_round_trip(self, tmp_path):
        g = small_grid()
        rng = np.random.default_rng(31)
        sigma = rng.uniform(0.1, 0.5, size=(3, 3))
        path = tmp_path / "sigma.csv"
        taus_days = [t * 252 for t in g.maturities]
        write_surface_csv(path, taus_days, g.strikes, sigma)
        taus2, strikes2, vals = read_surface_csv(path)
        assert np.allclose(taus2, taus_days)
        assert np.allclose(strikes2, g.strikes)
        assert np.array_equal(vals, sigma)
        header = path.read_text().splitlines()[0]
        assert header == "tau_days,strike,value"
