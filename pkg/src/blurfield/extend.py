"""Extending base-set predictions to the 361-kernel set via image rotations.

Rotating an image by theta rotates the blur orientation at every pixel by
theta.  Predicting the base set on rotated copies of the image at
-6, -12, -18 and -24 degrees therefore reaches orientations 6k degrees past
each base orientation, densifying the 30-degree grid to 6 degrees: the
probability of (l, o + 6k) in the original image equals the probability of
(l, o) in the copy rotated by -6k.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import map_coordinates

from .core import base_candidate_set, extended_candidate_set
from .predict import PATCH_HALF, MotionDistribution, patch_centers

__all__ = [
    "EXTENSION_THETAS",
    "RotationMap",
    "rotate_image",
    "extend_distribution",
    "predict_extended",
]

EXTENSION_THETAS = (0, -6, -12, -18, -24)


@dataclass(frozen=True)
class RotationMap:
    """Forward map from original pixel coordinates to rotated-canvas coordinates."""

    theta_deg: float
    src_center: tuple[float, float]  # (row, col)
    dst_center: tuple[float, float]

    def forward(self, points: np.ndarray) -> np.ndarray:
        """Map (n, 2) (row, col) points into the rotated canvas (float)."""
        points = np.asarray(points, dtype=np.float64)
        rad = np.deg2rad(self.theta_deg)
        c, s = np.cos(rad), np.sin(rad)
        y = points[:, 0] - self.src_center[0]
        x = points[:, 1] - self.src_center[1]
        # rotation by theta in (x, y) = (col, row) coordinates
        xr = c * x - s * y
        yr = s * x + c * y
        return np.stack([yr + self.dst_center[0], xr + self.dst_center[1]], axis=1)


def rotate_image(image: np.ndarray, theta_deg: float) -> tuple[np.ndarray, RotationMap]:
    """Rotate about the image center with bilinear interpolation.

    The output canvas is enlarged to hold the rotated bounds; samples falling
    outside the source are filled by edge replication.  Returns the rotated
    image and the coordinate map, so patches of the original can be located
    in the rotated copy.
    """
    image = np.asarray(image, dtype=np.float64)
    if abs(theta_deg) >= 90:
        raise ValueError(f"|theta| must be < 90 degrees, got {theta_deg}")
    h, w = image.shape[:2]
    src_center = ((h - 1) / 2.0, (w - 1) / 2.0)
    if theta_deg == 0:
        return image.copy(), RotationMap(0.0, src_center, src_center)

    rad = np.deg2rad(theta_deg)
    c, s = abs(np.cos(rad)), abs(np.sin(rad))
    out_w = int(np.ceil(w * c + h * s))
    out_h = int(np.ceil(w * s + h * c))
    dst_center = ((out_h - 1) / 2.0, (out_w - 1) / 2.0)

    # inverse map: rotated canvas -> source coordinates
    yy, xx = np.mgrid[0:out_h, 0:out_w].astype(np.float64)
    yy -= dst_center[0]
    xx -= dst_center[1]
    cr, sr = np.cos(rad), np.sin(rad)
    src_x = cr * xx + sr * yy + src_center[1]
    src_y = -sr * xx + cr * yy + src_center[0]
    coords = np.stack([src_y, src_x])

    if image.ndim == 2:
        rotated = map_coordinates(image, coords, order=1, mode="nearest")
    else:
        rotated = np.stack(
            [map_coordinates(image[..., k], coords, order=1, mode="nearest")
             for k in range(image.shape[2])],
            axis=-1,
        )
    return rotated, RotationMap(float(theta_deg), src_center, dst_center)


def _branch_index_maps() -> list[tuple[np.ndarray, np.ndarray]]:
    """(source base indices, destination extended indices) per rotation branch."""
    base = base_candidate_set()
    ext = extended_candidate_set()
    n_base_orient = len(base.orientations)
    n_ext_orient = len(ext.orientations)
    maps = []
    li = np.arange(len(base) - 1) // n_base_orient
    oi = np.arange(len(base) - 1) % n_base_orient
    for k in range(len(EXTENSION_THETAS)):
        src = np.arange(1, len(base))
        dst = 1 + li * n_ext_orient + (oi * len(EXTENSION_THETAS) + k)
        maps.append((src, dst))
    return maps


def extend_distribution(preds: dict[int, MotionDistribution]) -> MotionDistribution:
    """Merge the five per-rotation base-set distributions into one extended one."""
    stack = np.empty((len(EXTENSION_THETAS), len(base_candidate_set())))
    for k, theta in enumerate(EXTENSION_THETAS):
        if theta not in preds:
            raise ValueError(f"missing prediction for rotation {theta} degrees")
        stack[k] = preds[theta].probs
    return MotionDistribution("extended", _extend_rows(stack[:, None, :])[0])


def _extend_rows(stack: np.ndarray) -> np.ndarray:
    """(5, n, 73) per-branch probabilities -> (n, 361) renormalized rows.

    The five copies of the l=1 entry average into the single extended l=1
    entry; a final renormalization makes the concatenation a distribution.
    """
    n = stack.shape[1]
    ext = np.empty((n, len(extended_candidate_set())))
    ext[:, 0] = stack[:, :, 0].mean(axis=0)
    for k, (src, dst) in enumerate(_branch_index_maps()):
        ext[:, dst] = stack[k][:, src]
    ext /= ext.sum(axis=1, keepdims=True)
    return ext


def predict_extended(image: np.ndarray, predictor, stride: int = 6):
    """Extended-set distribution per stride-grid patch center, row-major.

    Runs the predictor on the image and its four rotated copies, cropping
    each rotated pass at the mapped patch centers, then re-indexes the five
    base-set answers into the extended set.
    """
    image = np.asarray(image)
    centers = patch_centers(image.shape[0], image.shape[1], stride)
    stack = np.empty((len(EXTENSION_THETAS), len(centers), len(base_candidate_set())))
    for k, theta in enumerate(EXTENSION_THETAS):
        rotated, rmap = rotate_image(image, theta)
        mapped = np.rint(rmap.forward(centers)).astype(np.int64)
        mapped[:, 0] = np.clip(mapped[:, 0], PATCH_HALF, rotated.shape[0] - PATCH_HALF)
        mapped[:, 1] = np.clip(mapped[:, 1], PATCH_HALF, rotated.shape[1] - PATCH_HALF)
        stack[k] = predictor.predict_batch(rotated, mapped, theta=theta, orig_centers=centers)
    ext = _extend_rows(stack)
    return [
        ((int(r), int(c)), MotionDistribution("extended", p))
        for (r, c), p in zip(centers, ext)
    ]
