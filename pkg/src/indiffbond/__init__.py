"""Utility indifference pricing of defaultable zero-coupon bonds.

The default intensity follows a CIR diffusion correlated with a traded
stock. Exponential-utility value functions solve semilinear
reaction-diffusion equations that are marched with an implicit finite
difference scheme; bid and ask prices follow from their log-ratios.
"""

from .cir import classical_price, classical_spread, survival_factors, survival_prob
from .params import (REFERENCE_CIR, REFERENCE_MARKET, AgentKind, CirParams, FellerWarning, GridSpec,
                     MarketParams, ParameterError, SolverSettings, ValidatedConfig, validate)
from .pde import (PositivityError, SolverBreakdownError, SolverError, ValueSurface, march,
                  thomas_solve)
from .pricing import (DEFAULT_MATURITIES, PricePair, PricingError, SpreadCurve,
                      classical_comparison, indifference_ask, indifference_bid, price_pairs,
                      short_end_spreads, spread_curve, spread_curves, yield_spread)

__all__ = [
    "AgentKind", "CirParams", "DEFAULT_MATURITIES", "FellerWarning", "GridSpec", "MarketParams",
    "REFERENCE_CIR", "REFERENCE_MARKET", "ParameterError", "PositivityError", "PricePair",
    "PricingError", "SolverBreakdownError", "SolverError", "SolverSettings", "SpreadCurve",
    "ValidatedConfig", "ValueSurface", "classical_comparison", "classical_price",
    "classical_spread", "indifference_ask", "indifference_bid", "march", "price_pairs",
    "short_end_spreads", "spread_curve", "spread_curves", "survival_factors", "survival_prob",
    "thomas_solve", "validate", "yield_spread",
]
