"""Almgren-Chriss execution with a dark pool: costs, regularity audits, optimal single-update liquidation."""

__version__ = "0.1.0"
