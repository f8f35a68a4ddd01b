"""End-to-end field estimation: predict, extend, fuse, smooth."""

from __future__ import annotations

import numpy as np

from .core import MotionField
from .extend import predict_extended
from .fuse import ConfidenceVolume, MrfParams, confidence_volume, shortlist, solve_mrf
from .predict import predict_image

__all__ = ["estimate_field"]


def estimate_field(image: np.ndarray, predictor, extend: bool = True,
                   stride: int = 6, sigma: float = 10.0, top_k: int = 20,
                   sampled: int = 30, params: MrfParams = MrfParams()
                   ) -> tuple[MotionField, ConfidenceVolume]:
    """Dense motion field for one image; also returns the fused confidences.

    With ``extend`` the candidate set is the 361-kernel extended grid (the
    predictor runs on four rotated copies too); otherwise the 73-kernel base
    grid.  The shortlist sampler draws from ``params.rng_seed``.
    """
    image = np.asarray(image)
    predict = predict_extended if extend else predict_image
    preds = predict(image, predictor, stride)
    volume = confidence_volume(preds, image.shape[1], image.shape[0], sigma)
    short = shortlist(volume, top_k=top_k, sampled=sampled, seed=params.rng_seed)
    return solve_mrf(volume, short, params), volume
