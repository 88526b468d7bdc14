"""Desk-scale simulator and training harness for downlink cell-free RSMA MIMO."""

__version__ = "0.1.0"
