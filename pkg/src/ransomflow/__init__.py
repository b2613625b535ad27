"""Trace ransomware payments and operating expenses of a criminal group from leaked chats."""
from .addr import Address, CandidateAddress, ValidationFailure, extract_candidates, validate
from .heuristics import Params, RansomVerdict, classify_all, classify_ransom, cospend_clusters
from .ledger import Transaction, TxGraph, ingest, load_graph
from .valuation import RateTable, load_rates, usd_value

__version__ = "0.1.0"

__all__ = [
    "Address", "CandidateAddress", "ValidationFailure", "extract_candidates", "validate",
    "Params", "RansomVerdict", "classify_all", "classify_ransom", "cospend_clusters",
    "Transaction", "TxGraph", "ingest", "load_graph",
    "RateTable", "load_rates", "usd_value",
]
