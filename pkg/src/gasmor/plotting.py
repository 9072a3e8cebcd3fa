"""Static figures written next to the CSV reports (SVG via matplotlib/Agg)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# 800 x 600 points
FIGSIZE = (800 / 72, 600 / 72)


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_error_curves(plot_data, path, title=None, eps=None):
    """Log-scale relative error versus reduced order, one line per reductor."""
    fig, ax = plt.subplots(figsize=FIGSIZE)
    for name, (orders, errors) in plot_data.items():
        e = np.asarray(errors, dtype=float)
        e = np.where(np.isfinite(e) & (e > 0), e, np.nan)
        ax.semilogy(orders, e, label=name, linewidth=1.6)
    if eps is not None:
        ax.axhline(eps, color="0.6", linestyle=":", linewidth=1)
    ax.set_xlabel("reduced order")
    ax.set_ylabel(r"relative $L_2 \otimes L_2$ output error")
    if title:
        ax.set_title(title)
    ax.grid(True, which="major", alpha=0.3)
    ax.legend(loc="upper right", ncol=2, frameon=False)
    return _finish(fig, path)


def plot_scenario(scenario, network, path, title=None):
    """Supply pressures (bar, left) and demand fluxes (kg/s, right) over time."""
    fig, (ax_p, ax_d) = plt.subplots(2, 1, sharex=True, figsize=FIGSIZE)
    t = np.linspace(0.0, scenario.horizon, 400)
    hours = t / 3600.0
    for n in network.supply_nodes:
        ax_p.plot(hours, [scenario.value(n, ti) / 1e5 for ti in t], label=n)
    for n in network.demand_nodes:
        ax_d.plot(hours, [scenario.value(n, ti) for ti in t], label=n)
    ax_p.set_ylabel("supply pressure [bar]")
    ax_d.set_ylabel("demand [kg/s]")
    ax_d.set_xlabel("time [h]")
    for ax in (ax_p, ax_d):
        ax.grid(True, alpha=0.3)
        ax.legend(loc="best", fontsize="small", ncol=3, frameon=False)
    if title:
        ax_p.set_title(title)
    return _finish(fig, path)


def plot_trajectory(trajectory, labels, path, title=None):
    fig, ax = plt.subplots(figsize=FIGSIZE)
    Y = trajectory.outputs_abs
    for j, name in enumerate(labels):
        ax.plot(trajectory.times / 3600.0, Y[:, j], label=name)
    ax.set_xlabel("time [h]")
    ax.set_ylabel("output")
    ax.set_yscale("symlog")
    ax.legend(loc="best", fontsize="small", ncol=3, frameon=False)
    if title:
        ax.set_title(title)
    return _finish(fig, path)
