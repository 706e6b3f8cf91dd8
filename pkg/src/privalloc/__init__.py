"""Jointly private allocation by simulated ascending auctions."""

from privalloc.core import Market, Outcome, UnitDemandValuation
from privalloc.counter import BinaryCounter, CounterBank, CounterConfig, accuracy_bound
from privalloc.palloc import PAllocParams
from privalloc.pmatch import Billboard, MultiplicativeParams, PMatchParams

__all__ = [
    "Billboard",
    "BinaryCounter",
    "CounterBank",
    "CounterConfig",
    "Market",
    "MultiplicativeParams",
    "Outcome",
    "PAllocParams",
    "PMatchParams",
    "UnitDemandValuation",
    "accuracy_bound",
]
