"""Patch-level motion distributions: ground-truth oracle and CNN inference.

A predictor maps a 30x30x3 patch to a probability vector over the 73 base
candidate kernels.  Two implementations are provided: an oracle that reads
the ground-truth motion field (for tests and pipeline experiments without a
trained network) and a from-scratch forward pass over a CNNW weight file
with the fixed six-layer architecture::

    conv 96x7x7x3 + ReLU -> maxpool 2 -> conv 256x5x5x96 + ReLU -> maxpool 2
    -> fc 1024 + ReLU -> fc 73 + softmax

Convolutions are valid (no padding), so 30 -> 24 -> 12 -> 8 -> 4 spatially.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CandidateSet, MotionField, base_candidate_set
from .formats import CONV, FC, MAXPOOL, SOFTMAX, LayerBlob, ModelFormatError, load_cnn_layers

__all__ = [
    "PATCH_SIZE",
    "PATCH_HALF",
    "MotionDistribution",
    "Patch",
    "CnnModel",
    "load_model",
    "cnn_forward",
    "oracle_predict",
    "OraclePredictor",
    "CnnPredictor",
    "axis_centers",
    "patch_centers",
    "crop_patch",
    "predict_image",
]

PATCH_SIZE = 30
PATCH_HALF = 15  # patch rows/cols span [center - 15, center + 14]


@dataclass(frozen=True)
class MotionDistribution:
    """Probability vector over one candidate set for one patch."""

    set_id: str
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-6:
            raise ValueError("distribution must be non-negative and sum to 1 (+-1e-6)")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def argmax(self) -> int:
        return int(np.argmax(self.probs))


@dataclass(frozen=True)
class Patch:
    """A 30x30x3 sub-image and the pixel it is centered on."""

    pixels: np.ndarray
    center: tuple[int, int]  # (row, col)


def axis_centers(dim: int, stride: int = 6) -> list[int]:
    """Valid patch centers along one axis: the stride grid starting at the
    first fully-inside center, with the last center clamped inside so the
    image edge stays covered."""
    if dim < PATCH_SIZE:
        raise ValueError(f"image dimension {dim} smaller than patch size {PATCH_SIZE}")
    last = dim - PATCH_HALF
    centers = list(range(PATCH_HALF, last + 1, stride))
    if centers[-1] != last:
        centers.append(last)
    return centers


def patch_centers(height: int, width: int, stride: int = 6) -> np.ndarray:
    """All (row, col) patch centers in row-major order, shape (n, 2)."""
    rows = axis_centers(height, stride)
    cols = axis_centers(width, stride)
    grid = [(r, c) for r in rows for c in cols]
    return np.array(grid, dtype=np.int64)


def crop_patch(image: np.ndarray, center: tuple[int, int]) -> Patch:
    r, c = center
    if not (PATCH_HALF <= r <= image.shape[0] - PATCH_HALF
            and PATCH_HALF <= c <= image.shape[1] - PATCH_HALF):
        raise IndexError(f"patch center {center} does not fit inside {image.shape[:2]}")
    pixels = image[r - PATCH_HALF : r + PATCH_HALF, c - PATCH_HALF : c + PATCH_HALF]
    return Patch(pixels, (int(r), int(c)))


def _as_rgb_batch(image: np.ndarray, centers: np.ndarray) -> np.ndarray:
    if image.ndim == 2:
        image = np.repeat(image[:, :, None], 3, axis=2)
    elif image.shape[2] == 1:
        image = np.repeat(image, 3, axis=2)
    batch = np.empty((len(centers), PATCH_SIZE, PATCH_SIZE, 3), dtype=np.float32)
    for i, (r, c) in enumerate(centers):
        batch[i] = image[r - PATCH_HALF : r + PATCH_HALF, c - PATCH_HALF : c + PATCH_HALF]
    return batch


# -- oracle ---------------------------------------------------------------

def oracle_predict(patch_center: tuple[int, int], gt_field: MotionField,
                   softness: float = 0.0,
                   candidates: CandidateSet | None = None) -> MotionDistribution:
    """Distribution concentrated on the candidate nearest the ground truth.

    With softness eps > 0, mass (1 - eps) sits on the nearest candidate and
    eps spreads uniformly over the rest.
    """
    candidates = candidates or base_candidate_set()
    r, c = patch_center
    if not (0 <= r < gt_field.height and 0 <= c < gt_field.width):
        raise IndexError(f"patch center {patch_center} outside field {gt_field.shape}")
    if softness < 0:
        raise ValueError("softness must be >= 0")
    u, v = gt_field.uv[r, c]
    probs = _one_hot_soft(candidates.nearest(float(u), float(v)), len(candidates), softness)
    return MotionDistribution(candidates.name, probs)


def _one_hot_soft(index: int, n: int, eps: float) -> np.ndarray:
    probs = np.full(n, eps / (n - 1)) if eps > 0 else np.zeros(n)
    probs[index] = 1.0 - eps
    return probs


class OraclePredictor:
    """Batch predictor backed by the ground-truth field.

    For a pass over an image rotated by theta, the ground truth seen at a
    patch is the original vector with its orientation shifted by theta, so
    the oracle answers from the original centers directly.

    Unlike the hard snap of :func:`oracle_predict`, the peak confidence
    decays with the (u, v) distance to the nearest candidate
    (exp(-d^2 / (2 snap_tau^2))), imitating how the trained classifier is
    most confident on exact grid kernels.  Without this the five rotation
    branches of the extension would tie at off-grid orientations instead of
    letting the exact-hit branch win.  Exact grid vectors still get the full
    (1 - epsilon) one-hot.
    """

    def __init__(self, gt_field: MotionField, epsilon: float = 0.0,
                 candidates: CandidateSet | None = None, snap_tau: float = 0.5):
        self.gt_field = gt_field
        self.epsilon = float(epsilon)
        self.candidates = candidates or base_candidate_set()
        self.snap_tau = float(snap_tau)

    def predict_batch(self, image, centers, theta: float = 0.0,
                      orig_centers=None) -> np.ndarray:
        lookup = centers if orig_centers is None else orig_centers
        uv = self.gt_field.uv[lookup[:, 0], lookup[:, 1]]
        if theta != 0.0:
            rad = np.deg2rad(theta)
            rot = np.array([[np.cos(rad), np.sin(rad)], [-np.sin(rad), np.cos(rad)]])
            uv = uv @ rot  # rotates each (u, v) by +theta
        cand_uv = self.candidates.uv
        d2 = np.minimum(
            ((uv[:, None, :] - cand_uv[None]) ** 2).sum(-1),
            ((uv[:, None, :] + cand_uv[None]) ** 2).sum(-1),
        )
        nearest = d2.argmin(axis=1)
        n, k = len(centers), len(self.candidates)
        peak = (1.0 - self.epsilon) * np.exp(
            -d2[np.arange(n), nearest] / (2.0 * self.snap_tau ** 2))
        out = np.empty((n, k))
        out[:] = ((1.0 - peak) / (k - 1))[:, None]
        out[np.arange(n), nearest] = peak
        return out


# -- CNN forward ----------------------------------------------------------

class CnnModel:
    """Validated six-layer weight stack for 30x30x3 inputs and 73 outputs."""

    def __init__(self, layers: list[LayerBlob], channel_means: np.ndarray | None = None):
        self.layers = layers
        self.channel_means = channel_means
        self._validate()

    def _validate(self):
        h = w = PATCH_SIZE
        c = 3
        for i, layer in enumerate(self.layers):
            out, inp, kh, kw = layer.dims
            where = f"layer {i} (tag {layer.tag})"
            if layer.tag == CONV:
                if inp != c:
                    raise ModelFormatError(f"{where}: expects {inp} channels, chain has {c}")
                if kh > h or kw > w:
                    raise ModelFormatError(f"{where}: kernel {kh}x{kw} larger than map {h}x{w}")
                h, w, c = h - kh + 1, w - kw + 1, out
            elif layer.tag == MAXPOOL:
                if h % kh or w % kw:
                    raise ModelFormatError(f"{where}: pool {kh}x{kw} does not tile map {h}x{w}")
                h, w = h // kh, w // kw
            elif layer.tag in (FC, SOFTMAX):
                if inp != h * w * c:
                    raise ModelFormatError(f"{where}: expects {inp} inputs, chain has {h * w * c}")
                h, w, c = 1, 1, out
            else:
                raise ModelFormatError(f"{where}: unknown tag")
        if h * w * c != len(base_candidate_set()):
            raise ModelFormatError(f"model outputs {h * w * c} classes, expected 73")
        if self.layers[-1].tag != SOFTMAX:
            raise ModelFormatError("final layer must be softmax")


def load_model(path) -> CnnModel:
    layers, channel_means = load_cnn_layers(path)
    return CnnModel(layers, channel_means)


def _forward_batch(model: CnnModel, batch: np.ndarray) -> np.ndarray:
    """(n, 30, 30, 3) float batch -> (n, 73) softmax probabilities."""
    x = np.asarray(batch, dtype=np.float32)
    if x.ndim == 3:
        x = x[None]
    if x.shape[1:] != (PATCH_SIZE, PATCH_SIZE, 3):
        raise ModelFormatError(f"expected (n, 30, 30, 3) patches, got {x.shape}")
    if model.channel_means is not None:
        x = x - model.channel_means.astype(np.float32)
    for layer in model.layers:
        out, inp, kh, kw = layer.dims
        if layer.tag == CONV:
            n, h, w, c = x.shape
            win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
            # (n, oh, ow, c, kh, kw) -> rows ordered (c, kh, kw) to match weights
            cols = win.reshape(n * (h - kh + 1) * (w - kw + 1), c * kh * kw)
            wmat = layer.weights.reshape(out, inp * kh * kw).astype(np.float32)
            x = cols @ wmat.T + layer.biases.astype(np.float32)
            x = np.maximum(x.reshape(n, h - kh + 1, w - kw + 1, out), 0.0)
        elif layer.tag == MAXPOOL:
            n, h, w, c = x.shape
            x = x.reshape(n, h // kh, kh, w // kw, kw, c).max(axis=(2, 4))
        elif layer.tag == FC:
            n = x.shape[0]
            x = x.reshape(n, -1) @ layer.weights.T.astype(np.float32) + layer.biases.astype(np.float32)
            x = np.maximum(x, 0.0)
        elif layer.tag == SOFTMAX:
            n = x.shape[0]
            logits = x.reshape(n, -1) @ layer.weights.T.astype(np.float32) + layer.biases.astype(np.float32)
            logits = logits.astype(np.float64)
            logits -= logits.max(axis=1, keepdims=True)
            e = np.exp(logits)
            x = e / e.sum(axis=1, keepdims=True)
    return x


def cnn_forward(model: CnnModel, patch) -> MotionDistribution:
    pixels = patch.pixels if isinstance(patch, Patch) else patch
    probs = _forward_batch(model, np.asarray(pixels))[0]
    return MotionDistribution("base", probs)


class CnnPredictor:
    """Batch predictor running the CNN on crops of whatever image it is given."""

    def __init__(self, model: CnnModel, batch_size: int = 256):
        self.model = model
        self.batch_size = batch_size

    def predict_batch(self, image, centers, theta: float = 0.0,
                      orig_centers=None) -> np.ndarray:
        crops = _as_rgb_batch(np.asarray(image), centers)
        probs = np.empty((len(centers), len(base_candidate_set())))
        for lo in range(0, len(crops), self.batch_size):
            hi = lo + self.batch_size
            probs[lo:hi] = _forward_batch(self.model, crops[lo:hi])
        return probs


def predict_image(image: np.ndarray, predictor, stride: int = 6):
    """One base-set distribution per stride-grid patch center, row-major.

    ``predictor`` is an :class:`OraclePredictor`, :class:`CnnPredictor`, or
    anything with the same ``predict_batch`` signature.
    """
    image = np.asarray(image)
    centers = patch_centers(image.shape[0], image.shape[1], stride)
    probs = predictor.predict_batch(image, centers)
    return [
        ((int(r), int(c)), MotionDistribution("base", p))
        for (r, c), p in zip(centers, probs)
    ]
