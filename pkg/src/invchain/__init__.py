"""Inventory traceability: a replicated content-addressed store whose
snapshots are anchored on a simulated smart-contract chain."""

__version__ = "0.1.0"
