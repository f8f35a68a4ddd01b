"""Ground-truth motion fields, synthetic blur, and training-patch export.

Camera translation gives a constant field; camera roll about an axis point
gives tangential motion growing linearly with radius.  Blurring uses the
same per-pixel operator the deconvolver inverts, so synthetic pairs are
exactly consistent with the restoration model.
"""

from __future__ import annotations

import numpy as np

from .core import D_MAX, InvalidMotionError, MotionField, base_candidate_set, rasterize
from .deconv import NonUniformOperator
from .formats import quantize_u8, save_patch_dataset
from .predict import PATCH_SIZE

__all__ = [
    "field_translation",
    "field_rotation",
    "blur_with_field",
    "export_training_patches",
]


def field_translation(width: int, height: int, u: float, v: float,
                      d_max: float = D_MAX) -> MotionField:
    """Constant (u, v) motion everywhere."""
    length = float(np.hypot(u, v))
    if length > d_max:
        raise InvalidMotionError(f"motion length {length:.3f} exceeds d_max={d_max}")
    uv = np.broadcast_to(np.array([u, v], dtype=np.float64), (height, width, 2)).copy()
    return MotionField(uv, d_max=d_max)


def field_rotation(width: int, height: int, center: tuple[float, float],
                   omega: float, d_max: float = D_MAX) -> MotionField:
    """Tangential motion about ``center`` (x, y): length 1 + radius * |omega|.

    The +1 offset keeps the minimum at the identity kernel; orientation is
    perpendicular to the radius, canonicalized into [0, 180).
    """
    cx, cy = center
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    radius = np.hypot(dx, dy)
    if radius.max() * abs(omega) > d_max - 1:
        raise InvalidMotionError(
            f"omega {omega} sweeps {radius.max() * abs(omega):.2f} px at the far corner, "
            f"over the d_max - 1 = {d_max - 1} limit")
    length = np.clip(1.0 + radius * abs(omega), 1.0, d_max)
    angle = np.arctan2(dy, dx) + np.pi / 2.0
    uv = np.stack([length * np.cos(angle), length * np.sin(angle)], axis=-1)
    return MotionField(uv, d_max=d_max)


def blur_with_field(sharp: np.ndarray, motion_field: MotionField) -> np.ndarray:
    """Apply the per-pixel blur of ``motion_field`` to a sharp image."""
    return NonUniformOperator(motion_field).apply(sharp)


def export_training_patches(images, count: int, seed: int, out_path,
                            margin: int = 13) -> None:
    """Write a PTCH dataset of blurred 30x30x3 crops with kernel labels.

    Every base candidate kernel blurs the source images; crops stay
    ``margin`` pixels away from the borders so blur boundary effects never
    enter the data.  Labels are balanced to within one record.
    """
    images = [np.asarray(img, dtype=np.float64) for img in images]
    usable = []
    for img in images:
        if img.ndim == 2:
            img = np.repeat(img[:, :, None], 3, axis=2)
        if (img.shape[0] >= PATCH_SIZE + 2 * margin
                and img.shape[1] >= PATCH_SIZE + 2 * margin):
            usable.append(img)
    if not usable:
        raise ValueError(
            f"no source image is at least {PATCH_SIZE + 2 * margin} pixels on each side")

    candidates = base_candidate_set()
    per_label = [count // len(candidates)] * len(candidates)
    for k in range(count % len(candidates)):
        per_label[k] += 1

    rng = np.random.default_rng(seed)
    labels = np.empty(count, dtype=np.uint8)
    patches = np.empty((count, PATCH_SIZE, PATCH_SIZE, 3), dtype=np.uint8)
    blurred_cache: dict[tuple[int, int], np.ndarray] = {}
    row = 0
    for label, n_label in enumerate(per_label):
        for _ in range(n_label):
            img_idx = int(rng.integers(len(usable)))
            key = (img_idx, label)
            if key not in blurred_cache:
                u, v = candidates.uv[label]
                kern = rasterize(candidates.vectors[label])
                blurred_cache[key] = _blur_uniform(usable[img_idx], kern)
            blurred = blurred_cache[key]
            r0 = int(rng.integers(margin, blurred.shape[0] - PATCH_SIZE - margin + 1))
            c0 = int(rng.integers(margin, blurred.shape[1] - PATCH_SIZE - margin + 1))
            labels[row] = label
            patches[row] = quantize_u8(blurred[r0 : r0 + PATCH_SIZE, c0 : c0 + PATCH_SIZE])
            row += 1
    save_patch_dataset(labels, patches, out_path)


def _blur_uniform(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Single-kernel blur with replicate boundary, matching the operator."""
    side = kernel.shape[0]
    r = side // 2
    out = np.zeros_like(image)
    padded = np.pad(image, [(r, r), (r, r)] + [(0, 0)] * (image.ndim - 2), mode="edge")
    h, w = image.shape[:2]
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            wgt = kernel[r + dy, r + dx]
            if wgt:
                out += wgt * padded[r - dy : r - dy + h, r - dx : r - dx + w]
    return out
