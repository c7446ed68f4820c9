"""Desk-scale simulator for Byzantine-resilient clustered decentralized
federated learning: robust two-stage aggregation, reputation-weighted BFT
consensus, incentive accounting, and an in-process ledger."""

__version__ = "0.1.0"
