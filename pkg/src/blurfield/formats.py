"""Binary file formats and 8-bit image I/O.

All multi-byte integers and floats are little-endian.  Formats:

MFLD  motion field::

    "MFLD"  u32 width  u32 height
    height * width * (f32 u, f32 v)            row-major

CONF  per-pixel candidate confidences::

    "CONF"  u32 width  u32 height  u32 n_candidates
    height * width * n_candidates * f32        row-major, candidate-minor

PTCH  labeled training patches::

    "PTCH"  u32 count
    count * ( u8 label  30*30*3 u8 RGB )       patch row-major (row, col, channel)

GMMP  Gaussian mixture prior over 8x8 patches::

    "GMMP"  u32 n_components  u32 dim
    n_components * ( f32 weight  dim f32 mean  dim*dim f32 covariance )

CNNW  network weights::

    "CNNW"  u32 version  [version >= 2: 3 * f32 per-channel input mean]
    u32 layer_count
    layer_count * ( u8 tag  u32 dims[4]  payload )

    tag 0 = conv     dims (out, in, kh, kw), payload out*in*kh*kw f32 filters
                     in (out, in, kh, kw) row-major order, then out f32 biases
    tag 1 = maxpool  dims (0, 0, kh, kw), no payload; stride equals kh
    tag 2 = fc       dims (out, in, 0, 0), payload out*in f32 then out f32 biases;
                     inputs indexed in (row, col, channel) flattening order
    tag 3 = softmax  fc followed by a softmax over its outputs; payload as tag 2

8-bit image samples are quantized round-half-up (floor(x * 255 + 0.5)).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .core import MotionField

__all__ = [
    "FileFormatError",
    "ModelFormatError",
    "LayerBlob",
    "save_motion_field",
    "load_motion_field",
    "save_confidence",
    "load_confidence",
    "save_patch_dataset",
    "load_patch_dataset",
    "save_gmm_arrays",
    "load_gmm_arrays",
    "save_cnn_layers",
    "load_cnn_layers",
    "save_png",
    "load_png",
    "quantize_u8",
]

CONV, MAXPOOL, FC, SOFTMAX = 0, 1, 2, 3


class FileFormatError(ValueError):
    """Corrupt or mismatched binary file."""


class ModelFormatError(FileFormatError):
    """Corrupt CNN weight file; message carries the failing byte offset."""


class _Reader:
    """Cursor over a byte buffer that reports offsets on failure."""

    def __init__(self, data: bytes, path, error=FileFormatError):
        self.data = data
        self.off = 0
        self.path = path
        self.error = error

    def fail(self, what: str):
        raise self.error(f"{self.path}: {what} at byte offset {self.off}")

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            self.fail(f"truncated, needed {n} bytes")
        chunk = self.data[self.off : self.off + n]
        self.off += n
        return chunk

    def magic(self, expected: bytes):
        got = self.take(len(expected))
        if got != expected:
            self.off -= len(expected)
            self.fail(f"bad magic {got!r}, expected {expected!r}")

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f32_array(self, count: int, shape=None) -> np.ndarray:
        raw = self.take(4 * count)
        arr = np.frombuffer(raw, dtype="<f4").astype(np.float64)
        return arr.reshape(shape) if shape is not None else arr

    def done(self):
        if self.off != len(self.data):
            self.fail(f"{len(self.data) - self.off} trailing bytes")


def _read(path) -> bytes:
    with open(path, "rb") as f:
        return f.read()


# -- MFLD ---------------------------------------------------------------

def save_motion_field(field: MotionField, path) -> None:
    with open(path, "wb") as f:
        f.write(b"MFLD")
        f.write(struct.pack("<II", field.width, field.height))
        f.write(np.ascontiguousarray(field.uv, dtype="<f4").tobytes())


def load_motion_field(path, d_max: float = 25.0) -> MotionField:
    r = _Reader(_read(path), path)
    r.magic(b"MFLD")
    width, height = r.u32(), r.u32()
    uv = r.f32_array(height * width * 2, (height, width, 2))
    r.done()
    return MotionField(uv, d_max=d_max)


# -- CONF ---------------------------------------------------------------

def save_confidence(conf: np.ndarray, path) -> None:
    conf = np.asarray(conf)
    if conf.ndim != 3:
        raise FileFormatError(f"confidence volume must be (H, W, K), got {conf.shape}")
    height, width, k = conf.shape
    with open(path, "wb") as f:
        f.write(b"CONF")
        f.write(struct.pack("<III", width, height, k))
        f.write(np.ascontiguousarray(conf, dtype="<f4").tobytes())


def load_confidence(path) -> np.ndarray:
    r = _Reader(_read(path), path)
    r.magic(b"CONF")
    width, height, k = r.u32(), r.u32(), r.u32()
    conf = r.f32_array(height * width * k, (height, width, k))
    r.done()
    return conf


# -- PTCH ---------------------------------------------------------------

PATCH_SIZE = 30


def save_patch_dataset(labels: np.ndarray, patches: np.ndarray, path) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    patches = np.asarray(patches, dtype=np.uint8)
    n = len(labels)
    if patches.shape != (n, PATCH_SIZE, PATCH_SIZE, 3):
        raise FileFormatError(f"expected ({n}, 30, 30, 3) u8 patches, got {patches.shape}")
    records = np.empty((n, 1 + PATCH_SIZE * PATCH_SIZE * 3), dtype=np.uint8)
    records[:, 0] = labels
    records[:, 1:] = patches.reshape(n, -1)
    with open(path, "wb") as f:
        f.write(b"PTCH")
        f.write(struct.pack("<I", n))
        f.write(records.tobytes())


def load_patch_dataset(path) -> tuple[np.ndarray, np.ndarray]:
    """Returns (labels u8 (N,), patches u8 (N, 30, 30, 3))."""
    r = _Reader(_read(path), path)
    r.magic(b"PTCH")
    n = r.u32()
    rec_len = 1 + PATCH_SIZE * PATCH_SIZE * 3
    raw = np.frombuffer(r.take(n * rec_len), dtype=np.uint8).reshape(n, rec_len)
    r.done()
    labels = raw[:, 0].copy()
    if labels.size and labels.max() >= 73:
        raise FileFormatError(f"{path}: label {labels.max()} out of range [0, 73)")
    patches = raw[:, 1:].reshape(n, PATCH_SIZE, PATCH_SIZE, 3).copy()
    return labels, patches


# -- GMMP ---------------------------------------------------------------

def save_gmm_arrays(weights: np.ndarray, means: np.ndarray, covariances: np.ndarray, path) -> None:
    n, dim = means.shape
    with open(path, "wb") as f:
        f.write(b"GMMP")
        f.write(struct.pack("<II", n, dim))
        for k in range(n):
            f.write(struct.pack("<f", weights[k]))
            f.write(np.ascontiguousarray(means[k], dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(covariances[k], dtype="<f4").tobytes())


def load_gmm_arrays(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (weights (n,), means (n, dim), covariances (n, dim, dim))."""
    r = _Reader(_read(path), path)
    r.magic(b"GMMP")
    n, dim = r.u32(), r.u32()
    weights = np.empty(n)
    means = np.empty((n, dim))
    covariances = np.empty((n, dim, dim))
    for k in range(n):
        weights[k] = r.f32_array(1)[0]
        means[k] = r.f32_array(dim)
        covariances[k] = r.f32_array(dim * dim, (dim, dim))
    r.done()
    return weights, means, covariances


# -- CNNW ---------------------------------------------------------------

@dataclass
class LayerBlob:
    """One parsed CNNW layer: shaped weights, not yet shape-checked as a chain."""

    tag: int
    dims: tuple[int, int, int, int]
    weights: np.ndarray | None
    biases: np.ndarray | None


def save_cnn_layers(layers: list[LayerBlob], path, version: int = 1,
                    channel_means: np.ndarray | None = None) -> None:
    if version < 2 and channel_means is not None:
        raise ModelFormatError("per-channel means require version >= 2")
    with open(path, "wb") as f:
        f.write(b"CNNW")
        f.write(struct.pack("<I", version))
        if version >= 2:
            means = np.zeros(3) if channel_means is None else np.asarray(channel_means)
            f.write(np.ascontiguousarray(means, dtype="<f4").tobytes())
        f.write(struct.pack("<I", len(layers)))
        for layer in layers:
            f.write(struct.pack("<B", layer.tag))
            f.write(struct.pack("<IIII", *layer.dims))
            if layer.weights is not None:
                f.write(np.ascontiguousarray(layer.weights, dtype="<f4").tobytes())
            if layer.biases is not None:
                f.write(np.ascontiguousarray(layer.biases, dtype="<f4").tobytes())


def load_cnn_layers(path) -> tuple[list[LayerBlob], np.ndarray | None]:
    """Returns (layers, per-channel input means or None)."""
    r = _Reader(_read(path), path, error=ModelFormatError)
    r.magic(b"CNNW")
    version = r.u32()
    if version not in (1, 2):
        r.off -= 4
        r.fail(f"unsupported version {version}")
    channel_means = r.f32_array(3) if version >= 2 else None
    n_layers = r.u32()
    layers = []
    for _ in range(n_layers):
        tag = r.u8()
        dims = (r.u32(), r.u32(), r.u32(), r.u32())
        out, inp, kh, kw = dims
        if tag == CONV:
            weights = r.f32_array(out * inp * kh * kw, (out, inp, kh, kw))
            biases = r.f32_array(out)
        elif tag == MAXPOOL:
            weights = biases = None
        elif tag in (FC, SOFTMAX):
            weights = r.f32_array(out * inp, (out, inp))
            biases = r.f32_array(out)
        else:
            r.off -= 17
            r.fail(f"unknown layer tag {tag}")
        layers.append(LayerBlob(tag, dims, weights, biases))
    r.done()
    return layers, channel_means


# -- PNG ----------------------------------------------------------------

def quantize_u8(image: np.ndarray) -> np.ndarray:
    """Round-half-up quantization of [0,1] floats to u8."""
    return np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_png(image: np.ndarray, path) -> None:
    image = np.asarray(image)
    if image.ndim == 3 and image.shape[2] == 1:
        image = image[..., 0]
    Image.fromarray(quantize_u8(image)).save(path, format="PNG")


def load_png(path, gray: bool = False) -> np.ndarray:
    """Load a PNG as float64 in [0, 1]; RGB unless ``gray``."""
    with Image.open(path) as img:
        img = img.convert("L" if gray else "RGB")
        arr = np.asarray(img, dtype=np.float64) / 255.0
    return arr
