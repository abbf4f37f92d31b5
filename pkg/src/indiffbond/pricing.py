"""Indifference bid/ask prices, yield spreads and term-structure sweeps."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import cir as cir_model
from .params import (GAMMA_FLOOR, AgentKind, CirParams, MarketParams, ParameterError,
                     SolverSettings, ValidatedConfig, validate)
from .pde import SolverError, ValueSurface, march

DEFAULT_MATURITIES = (0.05, 0.25, 0.5, 1.0, 2.0, 3.0, 5.0, 7.0, 10.0, 15.0, 20.0, 30.0, 50.0)


class PricingError(RuntimeError):
    """A solver failure annotated with the maturity that triggered it."""

    def __init__(self, T: float, cause: Exception):
        self.T = T
        super().__init__(f"maturity T={T:g}: {cause}")


def _check_gamma(config: ValidatedConfig) -> None:
    if config.market.risk_aversion < GAMMA_FLOOR:
        raise ParameterError(
            f"risk_aversion {config.market.risk_aversion:g} is below {GAMMA_FLOOR:g}: the "
            "surface log-ratio cancels catastrophically; use classical_comparison with "
            "a larger gamma or the classical price directly")


def _check_same_grid(a: ValueSurface, b: ValueSurface) -> None:
    if a.values.shape != b.values.shape or a.T != b.T:
        raise ValueError("value surfaces were computed on different grids")


def indifference_bid(u: ValueSurface, wb: ValueSurface, lambda0: float,
                     config: ValidatedConfig) -> float:
    """Buyer's price e^{-rT} - log(w^b / u) / (gamma (1 - rho^2)) at intensity lambda0."""
    _check_gamma(config)
    _check_same_grid(u, wb)
    ratio = wb.at(lambda0) / u.at(lambda0)
    return config.discount - math.log(ratio) / (config.market.risk_aversion * config.one_minus_rho2)


def indifference_ask(u: ValueSurface, ws: ValueSurface, lambda0: float,
                     config: ValidatedConfig) -> float:
    """Seller's price e^{-rT} - log(u / w^s) / (gamma (1 - rho^2)) at intensity lambda0."""
    _check_gamma(config)
    _check_same_grid(u, ws)
    ratio = u.at(lambda0) / ws.at(lambda0)
    return config.discount - math.log(ratio) / (config.market.risk_aversion * config.one_minus_rho2)


def yield_spread(price: float, T: float, r: float) -> float:
    """Continuously compounded yield in excess of r."""
    if not price > 0.0:
        raise ValueError(f"price must be positive, got {price}")
    if not T > 0.0:
        raise ValueError("T must be positive; use short_end_spreads for T -> 0")
    return -math.log(price) / T - r


def short_end_spreads(lambda0: float, risk_aversion: float) -> tuple[float, float]:
    """T -> 0 limits of the bid and ask spreads.

    Expanding the value functions to first order in T gives
    lambda0 (e^gamma - 1) / gamma for the buyer and lambda0 (1 - e^-gamma) / gamma
    for the seller, independently of the correlation.
    """
    g = risk_aversion
    return lambda0 * math.expm1(g) / g, -lambda0 * math.expm1(-g) / g


@dataclass(frozen=True)
class PricePair:
    T: float
    bid: float
    ask: float
    classical: float
    r: float

    @property
    def bid_spread(self) -> float:
        return yield_spread(self.bid, self.T, self.r)

    @property
    def ask_spread(self) -> float:
        return yield_spread(self.ask, self.T, self.r)

    @property
    def classical_spread(self) -> float:
        return yield_spread(self.classical, self.T, self.r)

    def violations(self, tol: float = 1e-12) -> list[str]:
        """Broken price invariants; an empty list means the pair is admissible."""
        cap = math.exp(-self.r * self.T)
        out = []
        if not 0.0 < self.bid <= cap + tol:
            out.append(f"bid {self.bid:.12g} outside (0, e^-rT={cap:.12g}]")
        if not 0.0 < self.ask <= cap + tol:
            out.append(f"ask {self.ask:.12g} outside (0, e^-rT={cap:.12g}]")
        if not self.bid <= self.ask + tol:
            out.append(f"bid {self.bid:.12g} above ask {self.ask:.12g}")
        return out


@dataclass(frozen=True)
class SpreadRecord:
    T: float
    bid_price: float
    ask_price: float
    classical_price: float
    bid_spread: float
    ask_spread: float
    classical_spread: float


@dataclass(frozen=True)
class SpreadCurve:
    lambda0: float
    market: MarketParams
    records: tuple[SpreadRecord, ...] = field(default_factory=tuple)
    # worst w^s <= u <= w^b breach over all marched surfaces of the curve
    ordering_gap: float = float("-inf")

    @property
    def maturities(self) -> list[float]:
        return [rec.T for rec in self.records]

    def column(self, name: str) -> list[float]:
        return [getattr(rec, name) for rec in self.records]

    def violations(self, tol: float = 1e-12, spread_floor: float = -1e-10) -> list[str]:
        """Price bounds, bid <= ask and spread sign, checked at every maturity."""
        out = []
        r = self.market.risk_free_rate
        for rec in self.records:
            pair = PricePair(rec.T, rec.bid_price, rec.ask_price, rec.classical_price, r)
            out.extend(f"T={rec.T:g}: {msg}" for msg in pair.violations(tol))
            for name in ("bid_spread", "ask_spread"):
                if getattr(rec, name) < spread_floor:
                    out.append(f"T={rec.T:g}: {name} {getattr(rec, name):.3e} is negative")
        return out

    def to_csv(self, path) -> None:
        cols = ("T", "bid_price", "ask_price", "classical_price",
                "bid_spread", "ask_spread", "classical_spread")
        with open(path, "w", newline="") as fh:
            fh.write(",".join(cols) + "\n")
            for rec in self.records:
                fh.write(",".join(f"{getattr(rec, c):.12g}" for c in cols) + "\n")


def solve_surfaces(config: ValidatedConfig) -> dict[AgentKind, ValueSurface]:
    return {agent: march(config, agent) for agent in AgentKind}


def ordering_gap(surfaces: dict[AgentKind, ValueSurface]) -> float:
    """Largest breach of w^s <= u <= w^b over every node; <= 0 means none.

    The three surfaces coincide at tau = 0 and at zero intensity, so the
    strict inequalities can only be checked up to rounding.
    """
    u = surfaces[AgentKind.MERTON].values
    wb = surfaces[AgentKind.BUYER].values
    ws = surfaces[AgentKind.SELLER].values
    return float(max(np.max(ws - u), np.max(u - wb)))


def _price_slice(lambdas, T, market, cir, settings) -> tuple[list[PricePair], float]:
    config = validate(market, cir, settings.grid(T))
    _check_gamma(config)
    try:
        surfaces = solve_surfaces(config)
    except SolverError as exc:
        raise PricingError(T, exc) from exc
    u, wb, ws = (surfaces[k] for k in (AgentKind.MERTON, AgentKind.BUYER, AgentKind.SELLER))
    r = market.risk_free_rate
    pairs = [PricePair(T=T,
                       bid=indifference_bid(u, wb, lam, config),
                       ask=indifference_ask(u, ws, lam, config),
                       classical=cir_model.classical_price(lam, T, r, cir),
                       r=r)
             for lam in lambdas]
    return pairs, ordering_gap(surfaces)


def price_pairs(lambdas, T: float, market: MarketParams, cir: CirParams,
                settings: SolverSettings = SolverSettings()) -> list[PricePair]:
    """Bid, ask and classical prices for several intensities at one maturity.

    The three surfaces depend on T through c = e^{-rT}, so they are marched
    afresh for every maturity and shared across the requested intensities.
    """
    return _price_slice(lambdas, T, market, cir, settings)[0]


def _record(pair: PricePair) -> SpreadRecord:
    return SpreadRecord(pair.T, pair.bid, pair.ask, pair.classical,
                        pair.bid_spread, pair.ask_spread, pair.classical_spread)


def spread_curves(maturities, lambdas, market: MarketParams, cir: CirParams,
                  settings: SolverSettings = SolverSettings(),
                  workers: int = 1) -> list[SpreadCurve]:
    """One spread curve per intensity in ``lambdas``, sharing the marches."""
    maturities = [float(T) for T in maturities]
    if not maturities or any(T <= 0.0 for T in maturities):
        raise ValueError("maturities must be positive")
    if any(b <= a for a, b in zip(maturities, maturities[1:])):
        raise ValueError("maturities must be strictly increasing")
    lambdas = [float(lam) for lam in lambdas]

    def job(T):
        return _price_slice(lambdas, T, market, cir, settings)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            slices = list(pool.map(job, maturities))
    else:
        slices = [job(T) for T in maturities]
    gap = max(g for _, g in slices)
    return [SpreadCurve(lam, market, tuple(_record(pairs[k]) for pairs, _ in slices), gap)
            for k, lam in enumerate(lambdas)]


def spread_curve(maturities, lambda0: float, market: MarketParams, cir: CirParams,
                 settings: SolverSettings = SolverSettings(), workers: int = 1) -> SpreadCurve:
    return spread_curves(maturities, [lambda0], market, cir, settings, workers)[0]


@dataclass(frozen=True)
class ComparisonRow:
    T: float
    bid_spread: float
    ask_spread: float
    classical_spread: float

    @property
    def bid_gap(self) -> float:
        return self.bid_spread - self.classical_spread

    @property
    def ask_gap(self) -> float:
        return self.ask_spread - self.classical_spread

    @property
    def bid_rel_gap(self) -> float:
        return abs(self.bid_gap) / abs(self.classical_spread)

    @property
    def ask_rel_gap(self) -> float:
        return abs(self.ask_gap) / abs(self.classical_spread)


def classical_comparison(lambda0: float, maturities, market: MarketParams, cir: CirParams,
                         settings: SolverSettings = SolverSettings(),
                         workers: int = 1) -> list[ComparisonRow]:
    """Indifference spreads next to the classical reduced-form spread.

    The two only coincide in the small risk-aversion limit when the stock
    has zero excess return, so ``market.excess_return`` must be 0.
    """
    if market.excess_return != 0.0:
        raise ParameterError(
            "classical comparison needs excess_return = 0: only then does the pricing "
            "measure of the small risk-aversion limit coincide with the physical one")
    curve = spread_curve(maturities, lambda0, market, cir, settings, workers)
    return [ComparisonRow(rec.T, rec.bid_spread, rec.ask_spread, rec.classical_spread)
            for rec in curve.records]
