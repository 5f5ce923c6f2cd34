import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from msheston.errors import OutOfBand
from msheston.pricer import GroupParams, price_strikes
from msheston.quadrature import QuadratureSpec
from msheston.vol_surface import (
    VolPoint,
    VolSurface,
    bs_call,
    implied_vol,
    model_surface,
)

from .helpers import mp_bs_call


class TestBsCall:
    def test_vanishing_vol_limit(self):
        price = bs_call(100.0, 90.0, 1.0, 1e-12, 0.05)
        assert price == pytest.approx(100.0 - 90.0 * math.exp(-0.05), abs=1e-12)

    def test_atm_forward_identity(self):
        # spot = strike * e^{-rT} and vol*sqrt(T) = 0.2:
        # price = spot * (2 N(0.1) - 1)
        rate, expiry = 0.07, 4.0
        strike = 100.0
        spot = strike * math.exp(-rate * expiry)
        vol = 0.2 / math.sqrt(expiry)
        expected = spot * (2.0 * norm.cdf(0.1) - 1.0)
        assert bs_call(spot, strike, expiry, vol, rate) == pytest.approx(
            expected, rel=1e-12
        )

    def test_against_high_precision(self):
        val = bs_call(100.0, 100.0, 1.0, 0.2, 0.05)
        assert val == pytest.approx(mp_bs_call(100.0, 100.0, 1.0, 0.2, 0.05), rel=1e-13)

    def test_monotone_in_vol(self):
        prices = [bs_call(100, 110, 0.5, v, 0.02) for v in (0.1, 0.2, 0.4, 0.8)]
        assert all(a < b for a, b in zip(prices, prices[1:]))

    def test_dividend_yield_forward_adjustment(self):
        with_div = bs_call(100.0, 100.0, 2.0, 0.3, 0.05, dividend_yield=0.03)
        equivalent = bs_call(100.0 * math.exp(-0.03 * 2.0), 100.0, 2.0, 0.3, 0.05)
        assert with_div == pytest.approx(equivalent, rel=1e-14)


class TestImpliedVol:
    def test_round_trip(self):
        price = bs_call(100.0, 105.0, 0.7, 0.2, 0.03)
        vol = implied_vol(price, 100.0, 105.0, 0.7, 0.03)
        assert vol == pytest.approx(0.2, abs=1e-10)

    def test_upper_band_violation(self):
        with pytest.raises(OutOfBand) as excinfo:
            implied_vol(100.0, 100.0, 100.0, 1.0, 0.05)
        assert excinfo.value.bound == "upper"

    def test_lower_band_violation(self):
        intrinsic = 100.0 - 80.0 * math.exp(-0.05)
        with pytest.raises(OutOfBand) as excinfo:
            implied_vol(intrinsic, 100.0, 80.0, 1.0, 0.05)
        assert excinfo.value.bound == "lower"

    def test_benchmark_heston_price_regression(self, table1_heston):
        # pinned after the first verified build: self-oracle round trip of the
        # baseline benchmark price
        bd = price_strikes([100.0], 1.0, 100.0, table1_heston)[0]
        vol = implied_vol(bd.total, 100.0, 100.0, 1.0, 0.05)
        assert vol == pytest.approx(0.4811216010424218, abs=1e-9)
        assert bs_call(100.0, 100.0, 1.0, vol, 0.05) == pytest.approx(
            bd.total, abs=1e-10
        )

    @given(
        vol=st.floats(0.01, 3.0),
        moneyness=st.floats(0.5, 1.8),
        expiry=st.floats(0.05, 5.0),
    )
    @settings(max_examples=80, deadline=None)
    def test_round_trip_property(self, vol, moneyness, expiry):
        spot, rate = 100.0, 0.02
        strike = spot * moneyness
        price = bs_call(spot, strike, expiry, vol, rate)
        lower = max(spot - strike * math.exp(-rate * expiry), 0.0)
        if price <= lower + 1e-12 or price >= spot - 1e-12:
            return  # numerically at the band edge; inversion contract excludes
        got = implied_vol(price, spot, strike, expiry, rate)
        assert bs_call(spot, strike, expiry, got, rate) == pytest.approx(
            price, abs=1e-10
        )


class TestSurfaceContainer:
    def test_rejects_duplicate_strikes(self):
        pts = (
            VolPoint(1.0, 100.0, 0.2, "market"),
            VolPoint(1.0, 100.0, 0.21, "market"),
        )
        with pytest.raises(ValueError, match="duplicate"):
            VolSurface(spot=100.0, points=pts, rates={1.0: 0.05}, dividend_yields={})

    def test_orders_points(self):
        pts = (
            VolPoint(1.0, 110.0, 0.2, "market"),
            VolPoint(0.5, 100.0, 0.25, "market"),
            VolPoint(1.0, 90.0, 0.22, "market"),
        )
        surf = VolSurface(
            spot=100.0,
            points=pts,
            rates={0.5: 0.05, 1.0: 0.05},
            dividend_yields={},
        )
        assert surf.expiries() == [0.5, 1.0]
        assert surf.strikes(1.0) == [90.0, 110.0]

    def test_csv_round_trip_exact(self):
        pts = tuple(
            VolPoint(t, k, v, "heston_model")
            for t, k, v in (
                (0.25, 90.0, 0.2391847362), (0.25, 100.0, 0.2210398471),
                (1.0, 100.0, 0.2501938475),
            )
        )
        surf = VolSurface(
            spot=100.0, points=pts, rates={0.25: 0.05, 1.0: 0.05},
            dividend_yields={},
        )
        text = surf.to_csv()
        back = VolSurface.from_csv(text, spot=100.0, rates=0.05)
        assert back.points == surf.points


class TestModelSurface:
    def test_zero_coefficients_reproduce_baseline_surface(self, table1_heston):
        expiries = [0.5, 1.0]
        strikes = [90.0, 100.0, 110.0]
        a = model_surface(expiries, strikes, table1_heston, GroupParams.zero())
        b = model_surface(expiries, strikes, table1_heston, None)
        assert a.points == b.points
        assert all(pt.source == "heston_model" for pt in a.points)

    def test_four_coefficients_move_surface_in_distinct_directions(
        self, figure1_heston
    ):
        spec = QuadratureSpec(abs_tol=1e-9, rel_tol=1e-8)
        strikes = list(np.linspace(80.0, 120.0, 9))
        base = model_surface([1.0], strikes, figure1_heston, None, spec)
        base_vols = np.array([pt.implied_vol for pt in base.points])

        deltas = []
        size = 0.005
        for i in range(4):
            coeffs = [0.0] * 4
            coeffs[i] = size
            surf = model_surface(
                [1.0], strikes, figure1_heston, GroupParams(*coeffs), spec
            )
            assert not surf.errors
            vols = np.array([pt.implied_vol for pt in surf.points])
            assert np.all(np.abs(vols - base_vols) > 0.0)
            deltas.append(vols - base_vols)

        tol = 10.0 * 1e-8
        for i in range(4):
            for j in range(i + 1, 4):
                gap = np.max(np.abs(deltas[i] - deltas[j]))
                assert gap > tol, (i, j, gap)

    def test_perturbation_linearity_to_first_order(self, figure1_heston):
        strikes = [90.0, 100.0, 110.0]
        base = model_surface([1.0], strikes, figure1_heston, None)
        base_vols = np.array([pt.implied_vol for pt in base.points])

        def delta(scale):
            surf = model_surface(
                [1.0], strikes, figure1_heston, GroupParams(0, 0, scale, 0)
            )
            return np.array([pt.implied_vol for pt in surf.points]) - base_vols

        d1 = delta(0.005)
        d2 = delta(0.01)
        mismatch = np.max(np.abs(d2 - 2.0 * d1) / np.abs(d2))
        assert mismatch < 0.10

    def test_no_arbitrage_shape_of_produced_surface(self, table1_heston):
        strikes = list(np.linspace(70.0, 140.0, 15))
        surf = model_surface([1.0], strikes, table1_heston, None)
        prices = np.array(
            [
                bs_call(100.0, pt.strike, 1.0, pt.implied_vol, table1_heston.r)
                for pt in surf.points
            ]
        )
        assert np.all(np.diff(prices) < 0)
        assert np.all(np.diff(prices, 2) > -1e-8)

    def test_extreme_coefficients_collect_errors(self, figure1_heston):
        surf = model_surface(
            [0.1], [100.0], figure1_heston, GroupParams(0.0, 0.0, 0.45, 0.0)
        )
        # the huge skew coefficient drives the short-dated price out of band
        assert surf.errors or surf.points
        if surf.errors:
            assert surf.errors[0][0] == 0.1
