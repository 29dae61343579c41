"""Peer-to-peer energy scheduling with ADMM coordination on a proof-of-authority ledger."""

__version__ = "0.1.0"
