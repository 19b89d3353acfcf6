"""Quantile-regression tools for first-price and ascending auctions.

Simulation of independent-private-value auctions from quantile-regression
specifications, augmented (quantile-level local polynomial) estimation of the
bid and private-value quantile regressions, plug-in functionals (expected
revenue, optimal reserve, CRRA risk aversion, cdf/pdf), bootstrap
specification and exogeneity tests, and a Monte Carlo harness.
"""

from ._ipsolve import active_backend
from .model import (AuctionRecord, AuctionSample, CrraParams, QuantileSpec,
                    bid_quantile_crra, bid_quantile_from_value, get_spec,
                    sim62_spec, trig_quantile, value_from_bid_quantile,
                    value_quantile)
from .simulate import (SimConfig, simulate_ascending, simulate_elliptical_rc,
                       simulate_first_price)
from .solver import (AqrConfig, AqrFit, aqr_fit, aqr_objective,
                     ascending_value_fit, elliptical_rc_fit,
                     homogenized_two_step, standard_qr)

__all__ = [
    "AqrConfig", "AqrFit", "AuctionRecord", "AuctionSample", "CrraParams",
    "QuantileSpec", "SimConfig", "active_backend", "aqr_fit", "aqr_objective",
    "ascending_value_fit", "bid_quantile_crra", "bid_quantile_from_value",
    "elliptical_rc_fit", "get_spec", "homogenized_two_step", "sim62_spec",
    "simulate_ascending", "simulate_elliptical_rc", "simulate_first_price",
    "standard_qr", "trig_quantile", "value_from_bid_quantile",
    "value_quantile",
]

__version__ = "0.1.0"
