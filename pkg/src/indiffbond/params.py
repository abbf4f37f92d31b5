"""Parameter containers for the indifference pricing engine.

Everything here is immutable once built. ``validate`` is the single entry
point that checks ranges and computes the derived scalars shared by the
solver, the pricing layer and the oracles.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

GAMMA_MAX = 10.0
# Below this the log-ratio of value surfaces loses all significant digits.
GAMMA_FLOOR = 1e-6

BOTTOM_BOUNDARY_MODES = ("dirichlet", "upwind")


class ParameterError(ValueError):
    """Raised when a parameter block violates one of its invariants."""


class FellerWarning(UserWarning):
    """The CIR intensity may touch zero (2 alpha lambda_bar <= phi^2)."""


@dataclass(frozen=True)
class MarketParams:
    """Stock and investor preferences.

    ``excess_return`` is the drift in excess of the risk-free rate; use
    :meth:`from_raw_drift` when the quoted drift still includes ``r``.
    """

    excess_return: float
    volatility: float
    risk_free_rate: float
    correlation: float
    risk_aversion: float

    @classmethod
    def from_raw_drift(cls, drift: float, volatility: float, risk_free_rate: float,
                       correlation: float, risk_aversion: float) -> "MarketParams":
        return cls(drift - risk_free_rate, volatility, risk_free_rate,
                   correlation, risk_aversion)

    @property
    def theta(self) -> float:
        """Residual power rho^2 / (1 - rho^2) of the reaction term."""
        rho2 = self.correlation * self.correlation
        return rho2 / (1.0 - rho2)

    @property
    def sharpe_term(self) -> float:
        """mu^2 / (2 sigma^2)."""
        return self.excess_return ** 2 / (2.0 * self.volatility ** 2)


@dataclass(frozen=True)
class CirParams:
    """CIR intensity d lambda = alpha (lambda_bar - lambda) dt + phi sqrt(lambda) dW."""

    alpha: float
    lambda_bar: float
    phi: float

    @property
    def feller(self) -> bool:
        return 2.0 * self.alpha * self.lambda_bar > self.phi ** 2


@dataclass(frozen=True)
class GridSpec:
    """Discretisation of [y_min, y_max] x [0, T].

    ``N`` counts interior intensity nodes and the time axis has ``M + 1``
    steps, so ``dy = (y_max - y_min) / (N + 1)`` and ``dt = T / (M + 1)``.
    """

    T: float
    N: int = 400
    M: int = 999
    y_min: float = 0.0
    y_max: float = 1.0
    bottom_boundary: str = "dirichlet"
    upwind_interior: bool = False

    @classmethod
    def for_maturity(cls, T: float, N: int = 400, max_dt: float = 0.01,
                     **kwargs) -> "GridSpec":
        """Grid whose time step does not exceed ``max_dt``."""
        steps = max(2, math.ceil(T / max_dt - 1e-9))
        return cls(T=T, N=N, M=steps - 1, **kwargs)

    @property
    def dy(self) -> float:
        return (self.y_max - self.y_min) / (self.N + 1)

    @property
    def dt(self) -> float:
        return self.T / (self.M + 1)


@dataclass(frozen=True)
class SolverSettings:
    """Maturity-independent discretisation choices used by curve sweeps."""

    # N = 400 leaves visible interior error in the T = 50 spreads
    N: int = 800
    max_dt: float = 0.01
    y_min: float = 0.0
    y_max: float = 1.0
    bottom_boundary: str = "dirichlet"
    upwind_interior: bool = False

    def grid(self, T: float) -> GridSpec:
        return GridSpec.for_maturity(
            T, N=self.N, max_dt=self.max_dt, y_min=self.y_min, y_max=self.y_max,
            bottom_boundary=self.bottom_boundary, upwind_interior=self.upwind_interior)


class AgentKind(enum.Enum):
    """Which of the three reaction-diffusion problems to solve."""

    MERTON = "merton"
    BUYER = "buyer"
    SELLER = "seller"

    def source_scale(self, gamma_c: float) -> float:
        if self is AgentKind.BUYER:
            return math.exp(gamma_c)
        if self is AgentKind.SELLER:
            return math.exp(-gamma_c)
        return 1.0


@dataclass(frozen=True)
class ValidatedConfig:
    market: MarketParams
    cir: CirParams
    grid: GridSpec
    theta: float
    sharpe_term: float
    discount: float
    dy: float
    dt: float
    feller: bool

    @property
    def gamma_c(self) -> float:
        return self.market.risk_aversion * self.discount

    @property
    def one_minus_rho2(self) -> float:
        return 1.0 - self.market.correlation ** 2


def _finite(name: str, value) -> float:
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ParameterError(f"{name} must be a real number, got {value!r}") from None
    if not math.isfinite(value):
        raise ParameterError(f"{name} must be finite, got {value!r}")
    return value


def _check_market(market: MarketParams) -> None:
    _finite("excess_return", market.excess_return)
    if not _finite("volatility", market.volatility) > 0.0:
        raise ParameterError(f"volatility must be > 0, got {market.volatility}")
    if not _finite("risk_free_rate", market.risk_free_rate) >= 0.0:
        raise ParameterError(f"risk_free_rate must be >= 0, got {market.risk_free_rate}")
    if not abs(_finite("correlation", market.correlation)) < 1.0:
        raise ParameterError(
            f"correlation must lie strictly inside (-1, 1), got {market.correlation}")
    gamma = _finite("risk_aversion", market.risk_aversion)
    if not 0.0 < gamma <= GAMMA_MAX:
        raise ParameterError(f"risk_aversion must lie in (0, {GAMMA_MAX}], got {gamma}")


def _check_cir(cir: CirParams) -> None:
    for name in ("alpha", "lambda_bar", "phi"):
        value = _finite(name, getattr(cir, name))
        if not value > 0.0:
            raise ParameterError(f"CIR {name} must be > 0, got {value}")


def _check_grid(grid: GridSpec) -> None:
    if not _finite("T", grid.T) > 0.0:
        raise ParameterError(f"maturity T must be > 0, got {grid.T}")
    if not isinstance(grid.N, int) or grid.N < 3:
        raise ParameterError(f"N must be an integer >= 3, got {grid.N!r}")
    if not isinstance(grid.M, int) or grid.M < 1:
        raise ParameterError(f"M must be an integer >= 1, got {grid.M!r}")
    if _finite("y_min", grid.y_min) != 0.0:
        # the bottom boundary value is the zero-intensity solution
        raise ParameterError(f"y_min must be 0, got {grid.y_min}")
    if not _finite("y_max", grid.y_max) > grid.y_min:
        raise ParameterError(f"y_max must exceed y_min, got {grid.y_max} <= {grid.y_min}")
    if grid.bottom_boundary not in BOTTOM_BOUNDARY_MODES:
        raise ParameterError(
            f"bottom_boundary must be one of {BOTTOM_BOUNDARY_MODES}, got {grid.bottom_boundary!r}")


def validate(market: MarketParams, cir: CirParams, grid: GridSpec) -> ValidatedConfig:
    """Check every parameter block and attach the derived scalars.

    Raises :class:`ParameterError` naming the first violated invariant.
    A Feller violation only warns: the intensity then stays non-negative
    but may reach zero.
    """
    _check_market(market)
    _check_cir(cir)
    _check_grid(grid)
    if not cir.feller:
        warnings.warn(
            f"Feller condition fails: 2*alpha*lambda_bar = {2 * cir.alpha * cir.lambda_bar:g}"
            f" <= phi^2 = {cir.phi ** 2:g}", FellerWarning, stacklevel=2)
    return ValidatedConfig(
        market=market,
        cir=cir,
        grid=grid,
        theta=market.theta,
        sharpe_term=market.sharpe_term,
        discount=math.exp(-market.risk_free_rate * grid.T),
        dy=grid.dy,
        dt=grid.dt,
        feller=cir.feller,
    )


# Reference calibration: CLI defaults and the acceptance suite use it.
REFERENCE_MARKET = MarketParams(excess_return=0.09, volatility=0.15, risk_free_rate=0.03,
                                correlation=-0.10, risk_aversion=0.01)
REFERENCE_CIR = CirParams(alpha=0.20, lambda_bar=0.06, phi=0.03)
