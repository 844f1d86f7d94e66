"""Desk-scale engine for event-shock propagation over time-varying firm
graphs, with residual-based evaluation, reward alignment, and backtesting."""

__version__ = "0.1.0"
