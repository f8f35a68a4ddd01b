"""Figure rendering for the report paths of the CLI.

Motion fields draw as an HSV map (hue = orientation, value = length) with a
sparse quiver overlay; per-pixel confidence vectors draw as
length-by-orientation probability grids.  All functions write PNG files via
the Agg backend and return the output path.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.colors import hsv_to_rgb

from .core import BASE_LENGTHS, D_MAX, MotionField
from .fuse import ConfidenceVolume, get_candidate_set

__all__ = [
    "field_to_rgb",
    "field_figure",
    "field_comparison_figure",
    "confidence_figure",
    "deblur_figure",
]


def field_to_rgb(field: MotionField, d_max: float = D_MAX) -> np.ndarray:
    hue = field.orientations() / 180.0
    val = np.clip((field.lengths() - 1.0) / (d_max - 1.0), 0.0, 1.0)
    hsv = np.stack([hue, np.ones_like(hue), 0.15 + 0.85 * val], axis=-1)
    return hsv_to_rgb(hsv)


def _quiver(ax, field: MotionField, step: int = 12):
    h, w = field.shape
    rr, cc = np.mgrid[step // 2 : h : step, step // 2 : w : step]
    uv = field.uv[rr, cc]
    ax.quiver(cc, rr, uv[..., 0], -uv[..., 1], color="white", scale=25 * 18,
              width=0.003, headwidth=2.5)


def field_figure(field: MotionField, path, title: str = "motion field"):
    fig, ax = plt.subplots(figsize=(5, 5 * field.height / field.width))
    ax.imshow(field_to_rgb(field))
    _quiver(ax, field)
    ax.set_title(title)
    ax.set_axis_off()
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def field_comparison_figure(estimated: MotionField, truth: MotionField, path):
    err = np.sqrt(((estimated.uv - truth.uv) ** 2).sum(-1))
    fig, axes = plt.subplots(1, 3, figsize=(13, 4.5))
    for ax, img, title in [
        (axes[0], field_to_rgb(estimated), "estimated"),
        (axes[1], field_to_rgb(truth), "ground truth"),
    ]:
        ax.imshow(img)
        ax.set_title(title)
        ax.set_axis_off()
    im = axes[2].imshow(err, cmap="magma")
    axes[2].set_title("|uv error|")
    axes[2].set_axis_off()
    fig.colorbar(im, ax=axes[2], fraction=0.046)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def confidence_figure(volume: ConfidenceVolume, pixels, path):
    """Length-by-orientation probability grid for each sample pixel."""
    cset = get_candidate_set(volume.set_id)
    n_orient = len(cset.orientations)
    fig, axes = plt.subplots(1, len(pixels), figsize=(4 * len(pixels), 2.6), squeeze=False)
    for ax, (r, c) in zip(axes[0], pixels):
        conf = volume.data[r, c]
        grid = np.empty((len(BASE_LENGTHS), n_orient))
        grid[0, :] = conf[0]  # the collapsed l=1 entry spans every orientation
        grid[1:, :] = conf[1:].reshape(len(BASE_LENGTHS) - 1, n_orient)
        im = ax.imshow(grid, aspect="auto", cmap="viridis")
        ax.set_title(f"pixel ({r}, {c})", fontsize=9)
        ax.set_xlabel("orientation")
        ax.set_ylabel("length")
        ax.set_xticks([0, n_orient - 1], ["0", f"{int(cset.orientations[-1])}"])
        ax.set_yticks([0, len(BASE_LENGTHS) - 1], ["1", "25"])
        fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def deblur_figure(blurry: np.ndarray, restored: np.ndarray, path,
                  sharp: np.ndarray | None = None,
                  titles: tuple = ("input", "restored", "reference")):
    panels = list(zip(titles, [blurry, restored]))
    if sharp is not None:
        panels.append((titles[2], sharp))
    fig, axes = plt.subplots(1, len(panels), figsize=(4.5 * len(panels), 4.5))
    for ax, (title, img) in zip(np.atleast_1d(axes), panels):
        ax.imshow(np.clip(img, 0, 1), cmap=None if np.ndim(img) == 3 else "gray",
                  vmin=0, vmax=1)
        ax.set_title(title)
        ax.set_axis_off()
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path
