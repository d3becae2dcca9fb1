"""Heatmap / line-plot rendering of grid results.

Presentation only: nothing here feeds back into computation.  Variance
channels are rendered as standard deviations so panels with different
sigma levels stay visually comparable; probability and mean channels are
rendered as-is.  2-D heatmap PNGs have exactly the grid's pixel
dimensions.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

_DPI = 100


def _channel_values(grid, channel: str):
    values = grid.column(channel)
    if channel.startswith("var_"):
        return values**0.5, f"sqrt({channel})"
    return values, channel


def render_heatmap(grid, channel: str, path, points=None) -> Path:
    """Render one channel of a grid result to a PNG.

    2-D grids become heatmaps whose pixel size equals the grid resolution,
    optionally with a dataset's points overlaid; 1-D grids become line
    plots.  Raises ``ValueError`` for unknown channels.
    """
    values, label = _channel_values(grid, channel)
    path = Path(path)
    if grid.points.shape[1] == 1:
        fig, ax = plt.subplots(figsize=(6, 3), dpi=_DPI)
        ax.plot(grid.points[:, 0], values, lw=1.5)
        if points is not None:
            ax.plot(points.inputs[:, 0], points.labels, ".", ms=2, alpha=0.4)
        ax.set_xlabel("x")
        ax.set_ylabel(label)
        fig.savefig(path)
        plt.close(fig)
        return path

    r1, r2 = grid.grid.resolution
    (x1lo, x1hi), (x2lo, x2hi) = grid.grid.bounds
    img = values.reshape(r1, r2)
    fig = plt.figure(figsize=(r1 / _DPI, r2 / _DPI), dpi=_DPI)
    ax = fig.add_axes([0.0, 0.0, 1.0, 1.0])
    ax.set_axis_off()
    ax.imshow(
        img.T,
        origin="lower",
        extent=(x1lo, x1hi, x2lo, x2hi),
        aspect="auto",
        interpolation="nearest",
    )
    if points is not None:
        colors = ["#1b1b1b", "#f5f5f5"]
        labels = points.labels.astype(int)
        for cls in np.unique(labels):
            sel = labels == cls
            ax.plot(
                points.inputs[sel, 0],
                points.inputs[sel, 1],
                ".",
                ms=1.5,
                color=colors[cls % len(colors)],
                alpha=0.6,
            )
        ax.set_xlim(x1lo, x1hi)
        ax.set_ylim(x2lo, x2hi)
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


DEFAULT_CHANNELS = {
    "two-moons": ("p_ale1", "p_inp1", "p_epi1", "var_inp0", "var_epi0"),
    "toy-regression": ("mu", "var_ale", "var_inp", "var_epi"),
}


def render_grid_result(result, out_dir, points=None) -> list[Path]:
    """Render the default channel set of one grid result into ``out_dir``."""
    out_dir = Path(out_dir)
    written = []
    for channel in DEFAULT_CHANNELS[result.task]:
        name = f"heat_{result.eu}_{result.iu}_s{repr(float(result.sigma))}_{channel}.png"
        written.append(render_heatmap(result, channel, out_dir / name, points=points))
    return written
