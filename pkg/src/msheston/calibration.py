"""Constrained nonlinear least squares against market implied vols.

Two nested fits share one machinery: the baseline fit over
``(kappa, rho, sigma, theta, z)`` and the corrected-model fit that appends
the four correction coefficients, seeded from the baseline optimum with the
coefficients at zero (the corrected model embeds the baseline at v = 0, so
its fitted objective can only improve).

Internals optimize in a transformed space: log for the positive parameters,
atanh for the correlation, identity with a symmetric box for the correction
coefficients.  Iterates therefore stay feasible without constraint
machinery; the reported results are always in natural units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import least_squares

from .errors import NonConvergence, NonFinite, OutOfBand
from .kernel import HestonParams
from .pricer import GroupParams, price_strikes
from .quadrature import QuadratureSpec
from .vol_surface import VolSurface, implied_vol

THETA_NAMES = ("kappa", "rho", "sigma", "theta", "z")
V_NAMES = ("v1e", "v2e", "v3e", "v4e")

DEFAULT_BOUNDS = {
    "kappa": (1e-3, 50.0),
    "rho": (-0.999, 0.999),
    "sigma": (1e-3, 5.0),
    "theta": (1e-4, 4.0),
    "z": (1e-4, 4.0),
    "v1e": (-0.5, 0.5),
    "v2e": (-0.5, 0.5),
    "v3e": (-0.5, 0.5),
    "v4e": (-0.5, 0.5),
}

# Residual assigned to a quote whose model price cannot be inverted; large in
# vol units yet finite, so the search is steered away without blowing up.
OUT_OF_BAND_RESIDUAL = 1.0


def _default_quadrature() -> QuadratureSpec:
    return QuadratureSpec(abs_tol=1e-8, rel_tol=1e-7)


@dataclass
class CalibProblem:
    """Market data plus the knobs of the least-squares formulation."""

    market: VolSurface
    weights: dict | None = None
    bounds: dict = field(default_factory=lambda: dict(DEFAULT_BOUNDS))
    feller_mode: str = "penalize"
    quadrature: QuadratureSpec = field(default_factory=_default_quadrature)
    k_i: float = 1.5
    feller_penalty_weight: float = 10.0

    def __post_init__(self):
        if self.feller_mode not in ("penalize", "enforce"):
            raise ValueError(f"unknown feller_mode {self.feller_mode!r}")
        if self.weights is not None:
            for key, w in self.weights.items():
                if w < 0:
                    raise ValueError(f"negative weight for {key}")

    def weight(self, expiry: float, strike: float) -> float:
        if self.weights is None:
            return 1.0
        return float(self.weights.get((expiry, strike), 1.0))

    def require_enough_quotes(self, n_params: int):
        if self.market.n_points < n_params:
            raise ValueError(
                f"{self.market.n_points} quotes cannot identify "
                f"{n_params} free parameters"
            )


@dataclass(frozen=True)
class CalibResult:
    """A fitted parameter set with its objective and per-expiry diagnostics."""

    heston: HestonParams
    group: GroupParams | None
    objective: float
    per_expiry_rss: tuple
    iterations: int
    converged: bool
    start_point: tuple
    feller_satisfied: bool

    def rss_map(self) -> dict:
        return dict(self.per_expiry_rss)


# -- parameter transforms ------------------------------------------------------


def _transform(name: str, value: float) -> float:
    if name == "rho":
        return math.atanh(value)
    if name in V_NAMES:
        return value
    return math.log(value)


def _untransform(name: str, value: float) -> float:
    if name == "rho":
        return math.tanh(value)
    if name in V_NAMES:
        return value
    return math.exp(value)


def _pack(p: HestonParams, v: GroupParams | None) -> np.ndarray:
    vals = [_transform(n, getattr(p, n)) for n in THETA_NAMES]
    if v is not None:
        vals += [getattr(v, n) for n in V_NAMES]
    return np.array(vals)


def _unpack(x: np.ndarray, r: float, multiscale: bool):
    natural = {
        name: _untransform(name, x[i]) for i, name in enumerate(THETA_NAMES)
    }
    p = HestonParams(
        kappa=natural["kappa"],
        theta=natural["theta"],
        sigma=natural["sigma"],
        rho=natural["rho"],
        z=natural["z"],
        r=r,
        allow_feller_violation=True,
    )
    if not multiscale:
        return p, None
    v = GroupParams(*(float(x[5 + i]) for i in range(4)))
    return p, v


def _transformed_bounds(bounds: dict, multiscale: bool):
    names = THETA_NAMES + (V_NAMES if multiscale else ())
    lo, hi = [], []
    for name in names:
        b_lo, b_hi = bounds.get(name, DEFAULT_BOUNDS[name])
        lo.append(_transform(name, b_lo))
        hi.append(_transform(name, b_hi))
    return np.array(lo), np.array(hi)


# -- objective -----------------------------------------------------------------


def _quote_residuals(p: HestonParams, v: GroupParams | None, prob: CalibProblem):
    """Weighted (sigma_mkt - sigma_model) per quote, in market point order."""
    market = prob.market
    residuals = np.empty(market.n_points)
    idx = 0
    for expiry in market.expiries():
        strikes = market.strikes(expiry)
        vols_mkt = market.vols(expiry)
        rate = market.rate(expiry)
        q_div = market.dividend_yield(expiry)
        spot_eff = market.spot * math.exp(-q_div * expiry)
        p_exp = p if p.r == rate else p.replace(r=rate)
        breakdowns = price_strikes(
            strikes, expiry, spot_eff, p_exp, v=v,
            spec=prob.quadrature, k_i=prob.k_i,
        )
        for strike, vol_mkt, bd in zip(strikes, vols_mkt, breakdowns):
            w = math.sqrt(prob.weight(expiry, strike))
            try:
                vol_model = implied_vol(
                    bd.total, market.spot, strike, expiry, rate,
                    dividend_yield=q_div,
                )
                residuals[idx] = w * (vol_mkt - vol_model)
            except (OutOfBand, NonConvergence):
                residuals[idx] = w * OUT_OF_BAND_RESIDUAL
            idx += 1
    return residuals


def objective_heston(theta, prob: CalibProblem) -> np.ndarray:
    """Per-quote residual vector of the baseline model at ``theta``.

    ``theta`` is either a HestonParams or a natural-space vector in the order
    (kappa, rho, sigma, theta, z).  Total by construction: uninvertible model
    points contribute the finite out-of-band penalty residual.
    """
    p = _as_heston(theta, prob)
    return _quote_residuals(p, None, prob)


def objective_multiscale(phi, prob: CalibProblem) -> np.ndarray:
    """Per-quote residual vector of the corrected model at ``phi``.

    ``phi`` is a (HestonParams, GroupParams) pair or a natural-space vector
    (kappa, rho, sigma, theta, z, v1e, v2e, v3e, v4e).
    """
    if isinstance(phi, tuple) and isinstance(phi[0], HestonParams):
        p, v = phi
    else:
        arr = np.asarray(phi, dtype=float)
        p = _as_heston(arr[:5], prob)
        v = GroupParams(*arr[5:9])
    return _quote_residuals(p, v, prob)


def _as_heston(theta, prob: CalibProblem) -> HestonParams:
    if isinstance(theta, HestonParams):
        return theta
    kappa, rho, sigma, theta_v, z = np.asarray(theta, dtype=float)
    rate = prob.market.rate(prob.market.expiries()[0])
    return HestonParams(
        kappa=kappa, theta=theta_v, sigma=sigma, rho=rho, z=z, r=rate,
        allow_feller_violation=True,
    )


def _feller_penalty(p: HestonParams, prob: CalibProblem) -> float:
    return prob.feller_penalty_weight * max(0.0, p.sigma**2 - 2.0 * p.kappa * p.theta)


def _per_expiry_rss(p, v, prob) -> tuple:
    """Unweighted mean squared residual per expiry (the marginal report)."""
    unweighted = replace(prob, weights=None)
    residuals = _quote_residuals(p, v, unweighted)
    rows = []
    idx = 0
    for expiry in prob.market.expiries():
        n = len(prob.market.strikes(expiry))
        block = residuals[idx : idx + n]
        rows.append((expiry, float(np.mean(block**2))))
        idx += n
    return tuple(rows)


def _run_fit(prob, x0, lo, hi, rate, multiscale, max_nfev, tols):
    def fun(x):
        p, v = _unpack(x, rate, multiscale)
        res = _quote_residuals(p, v, prob)
        return np.append(res, _feller_penalty(p, prob))

    res0 = fun(x0)
    if not np.all(np.isfinite(res0)):
        raise NonFinite("objective is non-finite at the start point")
    fit = least_squares(
        fun,
        x0,
        bounds=(lo, hi),
        method="trf",
        diff_step=1e-6,
        xtol=tols,
        ftol=tols,
        gtol=tols,
        max_nfev=max_nfev,
    )
    cost0 = float(res0 @ res0)
    cost1 = float(fit.fun @ fit.fun)
    if cost1 <= cost0:
        return fit.x, cost1, int(fit.nfev), bool(fit.status > 0)
    # a failed line search should never beat the start point; keep the start
    return x0, cost0, int(fit.nfev), False


def _finish(prob, x, rate, multiscale, iterations, converged, start_natural):
    p, v = _unpack(x, rate, multiscale)
    residuals = _quote_residuals(p, v, prob)
    objective = float(residuals @ residuals)
    feller_ok = p.feller_satisfied
    if prob.feller_mode == "enforce" and not feller_ok:
        converged = False
    return CalibResult(
        heston=p,
        group=v,
        objective=objective,
        per_expiry_rss=_per_expiry_rss(p, v, prob),
        iterations=iterations,
        converged=converged,
        start_point=tuple(start_natural),
        feller_satisfied=feller_ok,
    )


def _restart_points(x0, lo, hi, n, seed):
    """Latin-hypercube jitter around the start, in transformed coordinates."""
    rng = np.random.default_rng(seed)
    dim = len(x0)
    points = []
    perm = np.array([rng.permutation(n) for _ in range(dim)])
    for i in range(n):
        u = (perm[:, i] + rng.random(dim)) / n  # stratified in (0,1)
        step = 0.4 * (u - 0.5)
        x = np.clip(x0 + step, lo + 1e-12, hi - 1e-12)
        points.append(x)
    return points


def calibrate_heston(
    prob: CalibProblem,
    start: HestonParams,
    n_restarts: int = 0,
    restart_seed: int = 0,
    max_nfev: int = 400,
    tol: float = 1e-14,
) -> CalibResult:
    """Fit the five baseline parameters by trust-region least squares.

    Finite-difference Jacobians use a 1e-6 relative step.  Optional
    Latin-hypercube restarts around ``start`` guard against local minima;
    the best final objective wins.  Deterministic for fixed inputs.
    """
    prob.require_enough_quotes(5)
    rate = prob.market.rate(prob.market.expiries()[0])
    x0 = _pack(start, None)
    lo, hi = _transformed_bounds(prob.bounds, multiscale=False)
    if np.any(x0 < lo) or np.any(x0 > hi):
        raise ValueError("start point violates bounds")
    starts = [x0] + _restart_points(x0, lo, hi, n_restarts, restart_seed)
    best = None
    total_nfev = 0
    for xs in starts:
        x, cost, nfev, ok = _run_fit(
            prob, xs, lo, hi, rate, False, max_nfev, tol
        )
        total_nfev += nfev
        if best is None or cost < best[1]:
            best = (x, cost, ok)
    start_natural = [getattr(start, n) for n in THETA_NAMES]
    return _finish(prob, best[0], rate, False, total_nfev, best[2], start_natural)


def calibrate_multiscale(
    prob: CalibProblem,
    heston_result: CalibResult,
    n_restarts: int = 0,
    restart_seed: int = 0,
    max_nfev: int = 600,
    tol: float = 1e-14,
) -> CalibResult:
    """Two-stage corrected-model fit seeded from the baseline optimum.

    The start point is the fitted baseline parameters with all four
    correction coefficients at zero, so the starting objective equals the
    baseline optimum and the fit can only improve on it (up to solver
    tolerance).
    """
    if not heston_result.converged:
        raise ValueError("baseline result did not converge; refusing to seed")
    prob.require_enough_quotes(9)
    rate = prob.market.rate(prob.market.expiries()[0])
    x0 = _pack(heston_result.heston, GroupParams.zero())
    lo, hi = _transformed_bounds(prob.bounds, multiscale=True)
    x0 = np.clip(x0, lo, hi)
    starts = [x0] + _restart_points(x0, lo, hi, n_restarts, restart_seed)
    best = None
    total_nfev = 0
    for xs in starts:
        x, cost, nfev, ok = _run_fit(prob, xs, lo, hi, rate, True, max_nfev, tol)
        total_nfev += nfev
        if best is None or cost < best[1]:
            best = (x, cost, ok)
    start_natural = [getattr(heston_result.heston, n) for n in THETA_NAMES] + [
        0.0,
        0.0,
        0.0,
        0.0,
    ]
    return _finish(prob, best[0], rate, True, total_nfev, best[2], start_natural)


# -- reporting -----------------------------------------------------------------


def residual_report(result: CalibResult, prob: CalibProblem) -> list:
    """Per-expiry marginal mean squared residuals, shortest expiry first.

    Rows are dicts with days (ACT/365), quote count, and the mean squared
    implied-vol residual of the fitted model at that expiry.
    """
    rows = []
    for expiry, rss in result.per_expiry_rss:
        rows.append(
            {
                "days": round(expiry * 365.0),
                "expiry_years": expiry,
                "n_quotes": len(prob.market.strikes(expiry)),
                "mean_sq_residual": rss,
            }
        )
    return rows


def residual_ratio_report(
    heston_result: CalibResult,
    multiscale_result: CalibResult,
    prob: CalibProblem,
) -> list:
    """Side-by-side per-expiry residuals of the two fits plus their ratio."""
    h_map = heston_result.rss_map()
    m_map = multiscale_result.rss_map()
    rows = []
    for expiry in prob.market.expiries():
        h, mval = h_map[expiry], m_map[expiry]
        rows.append(
            {
                "days": round(expiry * 365.0),
                "expiry_years": expiry,
                "n_quotes": len(prob.market.strikes(expiry)),
                "heston_mean_sq": h,
                "multiscale_mean_sq": mval,
                "ratio": h / mval if mval > 0 else math.inf,
            }
        )
    return rows


def format_residual_table(rows: list) -> str:
    """Fixed-width rendering of a residual-ratio report."""
    header = f"{'days':>6} {'n':>4} {'heston_msr':>14} {'multiscale_msr':>14} {'ratio':>8}"
    lines = [header]
    for row in rows:
        lines.append(
            f"{row['days']:>6d} {row['n_quotes']:>4d} "
            f"{row['heston_mean_sq']:>14.6e} {row['multiscale_mean_sq']:>14.6e} "
            f"{row['ratio']:>8.2f}"
        )
    return "\n".join(lines)
