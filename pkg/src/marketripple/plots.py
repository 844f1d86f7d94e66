"""Matplotlib figures rendered next to the delimited report files."""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .alignment import AlignmentTrace
from .portfolio import BacktestReport

FIGSIZE = (8.0, 4.5)
DPI = 120


def plot_alignment_trace(trace: AlignmentTrace, path: str) -> None:
    """Reward per step with the running baseline overlaid."""
    steps = [s.step for s in trace.steps]
    rewards = [s.reward for s in trace.steps]
    baselines = [s.baseline for s in trace.steps]
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.plot(steps, rewards, lw=0.6, alpha=0.5, label="reward")
    ax.plot(steps, baselines, lw=1.6, label="baseline (EMA)")
    ax.set_xlabel("step")
    ax.set_ylabel("reward")
    ax.set_title("Alignment trace")
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def plot_equity_curves(reports: Sequence[BacktestReport], path: str) -> None:
    """One equity curve per strategy, normalized to 1.0 at the start."""
    fig, ax = plt.subplots(figsize=FIGSIZE)
    for rep in reports:
        ax.plot(
            range(len(rep.equity) + 1),
            np.concatenate([[1.0], rep.equity]),
            lw=1.2,
            label=rep.strategy,
        )
    ax.set_xlabel("trading day")
    ax.set_ylabel("equity")
    ax.set_title("Equity curves")
    ax.legend(loc="upper left", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def plot_regression_scatter(
    phi: np.ndarray,
    y: np.ndarray,
    gamma0: float,
    gamma1: float,
    path: str,
    max_points: int = 4000,
) -> None:
    """Standardized residuals against propagator scores with the fitted line."""
    phi = np.asarray(phi)
    y = np.asarray(y)
    if phi.size > max_points:
        stride = int(np.ceil(phi.size / max_points))
        phi, y = phi[::stride], y[::stride]
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.scatter(phi, y, s=4, alpha=0.35, lw=0)
    if phi.size:
        xs = np.linspace(float(phi.min()), float(phi.max()), 50)
        ax.plot(xs, gamma0 + gamma1 * xs, color="C3", lw=1.5, label="fit")
        ax.legend(loc="best")
    ax.set_xlabel("propagator score")
    ax.set_ylabel("standardized residual")
    ax.set_title("Propagator-constrained regression")
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
