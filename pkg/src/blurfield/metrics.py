"""Accuracy metrics for estimated motion fields and deblurred images.

Motion error is measured in Cartesian motion space (mse_motion and its PSNR
against the d_max^2 peak), in kernel space (mse_ker: per-element squared
difference of the center-aligned rasterized kernels), and image restoration
quality as plain PSNR with peak 1.0.  Exact matches report an infinite PSNR
sentinel (printed as "inf").
"""

from __future__ import annotations

import numpy as np

from .core import D_MAX, MotionField
from .deconv import _QUANT, _quantized_kernel

__all__ = ["mse_motion", "psnr_motion", "mse_ker", "psnr_image"]


def _check_dims(a: MotionField, b: MotionField):
    if a.shape != b.shape:
        raise ValueError(f"field size mismatch: {a.shape} vs {b.shape}")


def mse_motion(estimated: MotionField, truth: MotionField) -> float:
    """Mean squared (u, v) error, averaged over 2 * n_pixels."""
    _check_dims(estimated, truth)
    diff = estimated.uv - truth.uv
    return float((diff * diff).sum() / (2.0 * estimated.height * estimated.width))


def psnr_motion(estimated: MotionField, truth: MotionField, d_max: float = D_MAX) -> float:
    mse = mse_motion(estimated, truth)
    if mse == 0.0:
        return float("inf")
    return float(-10.0 * np.log10(mse / (d_max * d_max)))


def mse_ker(estimated: MotionField, truth: MotionField, support: int = 25) -> float:
    """Mean per-element squared kernel difference, averaged over pixels.

    Kernels rasterize center-aligned on a shared ``support``; the value
    scales with 1/support^2, so compare like with like.
    """
    _check_dims(estimated, truth)
    keys = np.rint(np.concatenate([estimated.uv, truth.uv], axis=-1) / _QUANT)
    keys = keys.reshape(-1, 4).astype(np.int64)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    per_pair = np.empty(len(uniq))
    for i, (eu, ev, tu, tv) in enumerate(uniq):
        ek = _quantized_kernel(int(eu), int(ev), support)
        tk = _quantized_kernel(int(tu), int(tv), support)
        per_pair[i] = ((ek - tk) ** 2).mean()
    return float(per_pair[inverse].mean())


def psnr_image(image: np.ndarray, truth: np.ndarray) -> float:
    """PSNR in dB with peak 1.0, mean squared error over all channels."""
    image = np.asarray(image, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if image.shape != truth.shape:
        raise ValueError(f"image size mismatch: {image.shape} vs {truth.shape}")
    mse = float(((image - truth) ** 2).mean())
    if mse == 0.0:
        return float("inf")
    return float(-10.0 * np.log10(mse))
