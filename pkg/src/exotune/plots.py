"""SVG figure emission: per-cell trace plots, loss curves, oracle heatmaps.

Trace plots show, per threshold cell, the mean motor angle and both
effort traces across that cell's episodes, with a shaded 95% band
computed as mean +/- 1.96 * s / sqrt(n) per step (sample standard
deviation, zero width when a cell has a single episode).
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .datastore import Dataset

plt.rcParams["svg.hashsalt"] = "exotune"

_SAVE_KWARGS = {"format": "svg", "metadata": {"Date": None}}

ANGLE_COLOR = "tab:red"
BICEPS_COLOR = "tab:blue"
TRICEPS_COLOR = "tab:purple"


def confidence_band(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-step mean and 95% half-width over episodes; values is (episodes, steps)."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] < 1:
        raise ValueError(f"expected (episodes, steps) array, got shape {values.shape}")
    mean = values.mean(axis=0)
    n = values.shape[0]
    if n == 1:
        return mean, np.zeros_like(mean)
    half = 1.96 * values.std(axis=0, ddof=1) / math.sqrt(n)
    return mean, half


def cell_traces(dataset: Dataset) -> dict[tuple[float, float], dict]:
    """Group a collected dataset by threshold cell.

    Returns, per (th_biceps, th_triceps), the per-step mean and 95%
    half-width of motor angle and both efforts, plus the episode count.
    Episodes within a cell must have equal length (true for anything
    grid_collect produced).
    """
    boundaries = np.flatnonzero(np.diff(dataset.episode_id)) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [len(dataset)]])
    by_cell: dict[tuple[float, float], list[slice]] = {}
    for start, end in zip(starts, ends):
        sl = slice(int(start), int(end))
        cell = (float(dataset.th_b[start]), float(dataset.th_t[start]))
        if not (
            np.all(dataset.th_b[sl] == cell[0]) and np.all(dataset.th_t[sl] == cell[1])
        ):
            raise ValueError(
                "cell traces need fixed thresholds per episode; "
                f"episode {int(dataset.episode_id[start])} varies"
            )
        by_cell.setdefault(cell, []).append(sl)
    out = {}
    for cell, slices in sorted(by_cell.items()):
        lengths = {sl.stop - sl.start for sl in slices}
        if len(lengths) != 1:
            raise ValueError(f"episodes in cell {cell} have unequal lengths {lengths}")
        stacks = {
            "angle": np.stack([dataset.p[sl] for sl in slices]),
            "biceps": np.stack([dataset.e_b[sl] for sl in slices]),
            "triceps": np.stack([dataset.e_t[sl] for sl in slices]),
        }
        out[cell] = {
            "episodes": len(slices),
            **{name: confidence_band(stack) for name, stack in stacks.items()},
        }
    return out


def plot_dataset_traces(dataset: Dataset, out_path) -> None:
    """One subplot per threshold cell: angle/effort means with 95% bands."""
    traces = cell_traces(dataset)
    rows = sorted({cell[0] for cell in traces})
    cols = sorted({cell[1] for cell in traces})
    fig, axes = plt.subplots(
        len(rows),
        len(cols),
        figsize=(3.2 * len(cols), 2.4 * len(rows)),
        squeeze=False,
        sharex=True,
        sharey=True,
    )
    for (th_b, th_t), data in traces.items():
        ax = axes[rows.index(th_b)][cols.index(th_t)]
        steps = np.arange(data["angle"][0].shape[0])
        for name, color in (
            ("angle", ANGLE_COLOR),
            ("biceps", BICEPS_COLOR),
            ("triceps", TRICEPS_COLOR),
        ):
            mean, half = data[name]
            ax.plot(steps, mean, color=color, linewidth=1.0, label=name)
            ax.fill_between(steps, mean - half, mean + half, color=color, alpha=0.2)
        ax.set_title(f"bi-th {th_b:g}, tri-th {th_t:g}", fontsize=8)
    for ax in axes[-1]:
        ax.set_xlabel("step")
    axes[0][0].legend(fontsize=7, loc="upper right")
    fig.suptitle(f"{dataset.header.task} task: angle and efforts per threshold cell")
    fig.tight_layout()
    fig.savefig(out_path, **_SAVE_KWARGS)
    plt.close(fig)


def plot_loss_curve(steps, losses, out_path, smooth_window: int = 100) -> None:
    steps = np.asarray(steps)
    losses = np.asarray(losses, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.plot(steps, losses, color="lightgray", linewidth=0.6, label="per step")
    if len(losses) >= smooth_window:
        kernel = np.ones(smooth_window) / smooth_window
        smooth = np.convolve(losses, kernel, mode="valid")
        ax.plot(
            steps[smooth_window - 1 :],
            smooth,
            color="tab:blue",
            linewidth=1.2,
            label=f"{smooth_window}-step mean",
        )
    ax.set_xlabel("training step")
    ax.set_ylabel("TD loss (batch sum)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, **_SAVE_KWARGS)
    plt.close(fig)


def plot_oracle_heatmap(rows, out_path) -> None:
    """rows: iterable of (th_biceps, th_triceps, mean_reward)."""
    rows = [(float(b), float(t), float(r)) for b, t, r in rows]
    if not rows:
        raise ValueError("empty oracle table")
    b_values = sorted({r[0] for r in rows})
    t_values = sorted({r[1] for r in rows})
    grid = np.full((len(b_values), len(t_values)), np.nan)
    for th_b, th_t, reward in rows:
        grid[b_values.index(th_b), t_values.index(th_t)] = reward
    fig, ax = plt.subplots(figsize=(1.0 + 0.8 * len(t_values), 1.0 + 0.8 * len(b_values)))
    im = ax.imshow(grid, origin="lower", cmap="viridis")
    ax.set_xticks(range(len(t_values)), [f"{v:g}" for v in t_values])
    ax.set_yticks(range(len(b_values)), [f"{v:g}" for v in b_values])
    ax.set_xlabel("triceps threshold")
    ax.set_ylabel("biceps threshold")
    best = max(rows, key=lambda r: r[2])
    ax.set_title(
        f"mean reward per static cell (best {best[2]:.4f} at "
        f"bi-th {best[0]:g}, tri-th {best[1]:g})",
        fontsize=9,
    )
    fig.colorbar(im, ax=ax, shrink=0.85)
    fig.tight_layout()
    fig.savefig(out_path, **_SAVE_KWARGS)
    plt.close(fig)
