"""Federated context brokering with a deterministic energy simulation harness."""

__version__ = "0.1.0"
