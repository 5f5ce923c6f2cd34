"""Black-Scholes pricing, implied-volatility inversion, and surface assembly.

Implied volatility is the common coordinate in which market data, the
baseline model, and the corrected model are compared, so the inversion here
favors unconditional convergence over speed: a bracketing bisection on
[1e-4, 5.0] refined by safeguarded Newton steps, stopping when the price is
reproduced to 1e-10.

Dividends enter as a continuous yield through the forward adjustment
``spot * exp(-q*T)``, applied identically on the Black-Scholes side and on
the model-pricing side so implied vols stay comparable.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

from scipy.stats import norm

from .errors import NonConvergence, OutOfBand
from .kernel import HestonParams
from .pricer import GroupParams, price_strikes
from .quadrature import QuadratureSpec

VOL_BRACKET = (1e-4, 5.0)
PRICE_TOL = 1e-10

_SOURCES = ("market", "heston_model", "multiscale_model")


@dataclass(frozen=True)
class VolPoint:
    expiry: float
    strike: float
    implied_vol: float
    source: str

    def __post_init__(self):
        if not self.expiry > 0:
            raise ValueError("expiry must be positive")
        if not self.strike > 0:
            raise ValueError("strike must be positive")
        if not self.implied_vol > 0:
            raise ValueError("implied_vol must be positive")
        if self.source not in _SOURCES:
            raise ValueError(f"unknown source {self.source!r}")


@dataclass(frozen=True)
class VolSurface:
    """Implied vols grouped by expiry, with the valuation metadata.

    ``rates`` and ``dividend_yields`` map expiry (years) to the per-expiry
    level; within each expiry strikes are strictly increasing.
    """

    spot: float
    points: tuple
    rates: dict
    dividend_yields: dict
    errors: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if not self.spot > 0:
            raise ValueError("spot must be positive")
        ordered = tuple(sorted(self.points, key=lambda pt: (pt.expiry, pt.strike)))
        object.__setattr__(self, "points", ordered)
        seen = {}
        for pt in ordered:
            if pt.expiry not in self.rates:
                raise ValueError(f"no rate for expiry {pt.expiry}")
            key = (pt.expiry, pt.strike)
            if key in seen:
                raise ValueError(
                    f"duplicate strike {pt.strike} at expiry {pt.expiry}"
                )
            seen[key] = True

    @property
    def n_points(self) -> int:
        return len(self.points)

    def expiries(self) -> list:
        out = []
        for pt in self.points:
            if not out or out[-1] != pt.expiry:
                out.append(pt.expiry)
        return out

    def strikes(self, expiry: float) -> list:
        return [pt.strike for pt in self.points if pt.expiry == expiry]

    def vols(self, expiry: float) -> list:
        return [pt.implied_vol for pt in self.points if pt.expiry == expiry]

    def rate(self, expiry: float) -> float:
        return self.rates[expiry]

    def dividend_yield(self, expiry: float) -> float:
        return self.dividend_yields.get(expiry, 0.0)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["expiry_years", "strike", "implied_vol", "source"])
        for pt in self.points:
            writer.writerow([repr(pt.expiry), repr(pt.strike), repr(pt.implied_vol), pt.source])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, spot: float, rates, dividend_yields=None) -> "VolSurface":
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if header != ["expiry_years", "strike", "implied_vol", "source"]:
            raise ValueError(f"unexpected surface header {header!r}")
        points = []
        for row in reader:
            if not row:
                continue
            points.append(
                VolPoint(float(row[0]), float(row[1]), float(row[2]), row[3])
            )
        if isinstance(rates, (int, float)):
            rates = {pt.expiry: float(rates) for pt in points}
        if dividend_yields is None:
            dividend_yields = {}
        elif isinstance(dividend_yields, (int, float)):
            dividend_yields = {pt.expiry: float(dividend_yields) for pt in points}
        return cls(
            spot=spot,
            points=tuple(points),
            rates=dict(rates),
            dividend_yields=dict(dividend_yields),
        )


def bs_call(
    spot: float,
    strike: float,
    expiry: float,
    vol: float,
    rate: float,
    dividend_yield: float = 0.0,
) -> float:
    """Black-Scholes call on a continuous-dividend forward; increasing in vol."""
    if min(spot, strike, expiry, vol) <= 0:
        raise ValueError("spot, strike, expiry, and vol must be positive")
    s_eff = spot * math.exp(-dividend_yield * expiry)
    sq = vol * math.sqrt(expiry)
    d1 = (math.log(s_eff / strike) + (rate + 0.5 * vol * vol) * expiry) / sq
    d2 = d1 - sq
    return float(
        s_eff * norm.cdf(d1) - strike * math.exp(-rate * expiry) * norm.cdf(d2)
    )


def bs_vega(spot, strike, expiry, vol, rate, dividend_yield=0.0) -> float:
    s_eff = spot * math.exp(-dividend_yield * expiry)
    sq = vol * math.sqrt(expiry)
    d1 = (math.log(s_eff / strike) + (rate + 0.5 * vol * vol) * expiry) / sq
    return float(s_eff * norm.pdf(d1) * math.sqrt(expiry))


def implied_vol(
    price: float,
    spot: float,
    strike: float,
    expiry: float,
    rate: float,
    dividend_yield: float = 0.0,
) -> float:
    """Invert Black-Scholes for a call price inside its no-arbitrage band.

    Bisection on the vol bracket with Newton refinement wherever vega is
    informative; converges unconditionally and reproduces ``price`` through
    ``bs_call`` to 1e-10 absolute.

    Raises
    ------
    OutOfBand
        If the price is at or outside the band; ``bound`` says which side.
    NonConvergence
        If no bracket vol reproduces the price to tolerance (prices implying
        vols outside [1e-4, 5.0]).
    """
    s_eff = spot * math.exp(-dividend_yield * expiry)
    lower = max(s_eff - strike * math.exp(-rate * expiry), 0.0)
    upper = s_eff
    if price <= lower:
        raise OutOfBand(
            f"price {price} at or below intrinsic bound {lower}", bound="lower"
        )
    if price >= upper:
        raise OutOfBand(
            f"price {price} at or above spot bound {upper}", bound="upper"
        )

    lo, hi = VOL_BRACKET

    def f(v):
        return bs_call(spot, strike, expiry, v, rate, dividend_yield) - price

    f_lo, f_hi = f(lo), f(hi)
    if abs(f_lo) <= PRICE_TOL:
        return lo
    if abs(f_hi) <= PRICE_TOL:
        return hi
    if f_lo > 0 or f_hi < 0:
        raise NonConvergence(
            "price lies within the no-arbitrage band but implies a vol "
            f"outside [{lo}, {hi}]",
            estimate=lo if f_lo > 0 else hi,
            error_bound=abs(f_lo) if f_lo > 0 else abs(f_hi),
        )

    mid = 0.5 * (lo + hi)
    for _ in range(200):
        f_mid = f(mid)
        if abs(f_mid) <= PRICE_TOL:
            return mid
        if f_mid > 0:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-15 * max(1.0, hi):
            break
        vega = bs_vega(spot, strike, expiry, mid, rate, dividend_yield)
        newton = mid - f_mid / vega if vega > 1e-14 else None
        mid = newton if newton is not None and lo < newton < hi else 0.5 * (lo + hi)
    f_mid = f(mid)
    if abs(f_mid) <= PRICE_TOL:
        return mid
    raise NonConvergence(
        "implied vol iteration stalled", estimate=mid, error_bound=abs(f_mid)
    )


def model_surface(
    expiries,
    strikes_per_expiry,
    p: HestonParams,
    v: GroupParams | None,
    spec: QuadratureSpec | None = None,
    spot: float = 100.0,
    dividend_yields=None,
    k_i: float | None = None,
) -> VolSurface:
    """Implied-vol surface of the (corrected) model on an expiry/strike grid.

    ``strikes_per_expiry`` is either one strike list shared by all expiries
    or a mapping expiry -> strikes.  With ``v`` zero or None the surface is
    the pure baseline-model surface.  Points whose model price cannot be
    inverted (possible for extreme correction sizes) are collected into
    ``surface.errors`` instead of failing the grid.
    """
    if dividend_yields is None:
        dividend_yields = {}
    elif isinstance(dividend_yields, (int, float)):
        dividend_yields = {float(t): float(dividend_yields) for t in expiries}
    source = (
        "heston_model" if v is None or v.is_zero else "multiscale_model"
    )
    points = []
    errors = []
    rates = {}
    for expiry in expiries:
        strikes = (
            strikes_per_expiry[expiry]
            if isinstance(strikes_per_expiry, dict)
            else strikes_per_expiry
        )
        q_div = dividend_yields.get(expiry, 0.0)
        spot_eff = spot * math.exp(-q_div * expiry)
        rates[expiry] = p.r
        breakdowns = price_strikes(
            strikes, expiry, spot_eff, p, v=v, spec=spec, k_i=k_i
        )
        for strike, bd in zip(strikes, breakdowns):
            try:
                vol = implied_vol(
                    bd.total, spot, strike, expiry, p.r, dividend_yield=q_div
                )
            except (OutOfBand, NonConvergence) as exc:
                errors.append((expiry, strike, type(exc).__name__, str(exc)))
                continue
            points.append(VolPoint(expiry, strike, vol, source))
    return VolSurface(
        spot=spot,
        points=tuple(points),
        rates=rates,
        dividend_yields=dict(dividend_yields),
        errors=tuple(errors),
    )
