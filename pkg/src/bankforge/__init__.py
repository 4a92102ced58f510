"""Memory banking engine: partition search, bank-resolution rewrites, GBT cost model."""

from bankforge.errors import BankforgeError
from bankforge.geometry import HyperplaneGeometry, SchemeMetrics
from bankforge.polytope import AffineAccess, IteratorDomain, SyncClass

__all__ = [
    "AffineAccess",
    "BankforgeError",
    "HyperplaneGeometry",
    "IteratorDomain",
    "SchemeMetrics",
    "SyncClass",
]

__version__ = "0.1.0"
