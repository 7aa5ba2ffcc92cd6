import matplotlib.pyplot as plt
import numpy as np
import seaborn as sns


def _save(fig, filename):
    fig.tight_layout()
    fig.savefig(filename, dpi=150)
    plt.close(fig)


def plot_error_norm(report, filename, title=None):
    """||x_FOM(t) - x_ROM(t)||_2 over time."""
    sns.set_style("whitegrid")
    fig, ax = plt.subplots(figsize=(6, 3.5))
    sns.lineplot(x=report.t, y=report.error_norm, ax=ax, color="C3")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("error norm (pu)")
    if title:
        ax.set_title(title)
    _save(fig, filename)


def plot_cumulative(spectra, filename, thresholds=None):
    """Cumulative fraction of each spectrum, one panel per block."""
    thresholds = thresholds or {}
    sns.set_style("whitegrid")
    fig, axes = plt.subplots(1, len(spectra), figsize=(4.5 * len(spectra), 3.5), squeeze=False)
    for ax, (block, values) in zip(axes[0], spectra.items()):
        values = np.asarray(values, dtype=float)
        total = np.sum(values)
        fraction = np.cumsum(values) / total if total > 0 else np.zeros_like(values)
        order = np.arange(1, len(values) + 1)
        sns.lineplot(x=order, y=fraction, marker="o", ax=ax)
        if block in thresholds:
            ax.axhline(thresholds[block], color="grey", linestyle="--", linewidth=1)
        ax.set_title(block)
        ax.set_xlabel("order")
        ax.set_ylabel("cumulative fraction")
        ax.set_ylim(0, 1.05)
    _save(fig, filename)


def plot_traces(fom, rom, states, filename):
    """Full-order and recovered trajectories of a few states."""
    sns.set_style("whitegrid")
    names = list(fom.state_names)
    fig, axes = plt.subplots(len(states), 1, figsize=(6, 2.2 * len(states)), sharex=True, squeeze=False)
    for ax, state in zip(axes[:, 0], states):
        k = names.index(state)
        ax.plot(fom.t, fom.X[k], color="k", label="FOM")
        ax.plot(rom.t, rom.X[k], color="C1", linestyle="--", label="ROM")
        ax.set_ylabel(state)
    axes[0, 0].legend(loc="best", frameon=False)
    axes[-1, 0].set_xlabel("time (s)")
    _save(fig, filename)
