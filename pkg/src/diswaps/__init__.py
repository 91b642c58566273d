"""Discretisation-invariant swaps: pay-offs, exact pricing, hedging and verification."""
from .payoffs import (
    ClassicPayoff,
    ClassicPayoffKind,
    DiPayoff,
    classic_eval,
    combine,
    evaluate,
    lv_payoff,
    moment_payoff,
    realised_leg,
    straddle_payoff,
)
from .simulate import ModelKind, ModelSpec, Partition, make_partition, simulate_paths
from .swaps import MarketState, fair_value, moment_rate, straddle_rate

__version__ = "0.1.0"
