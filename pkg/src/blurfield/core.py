"""Motion-vector algebra, candidate kernel sets, and kernel rasterization.

A linear motion blur at a pixel is described by a motion vector
``(length, orientation)``: the camera/object moves ``length`` pixels along
``orientation`` degrees while the shutter is open, smearing intensity along
that trace.  ``(l, o)`` and ``(l, o + 180)`` smear along the same trace, so
orientations live in ``[0, 180)``; length 1 is the identity kernel whatever
the orientation.

Images are plain numpy arrays: ``(H, W)`` or ``(H, W, 3)`` float in [0, 1],
row-major.  Everything in this module is immutable after construction and
safe to share across threads.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

__all__ = [
    "D_MAX",
    "BASE_LENGTHS",
    "BASE_ORIENTATIONS",
    "EXTENDED_ORIENTATIONS",
    "InvalidMotionError",
    "KernelFormatError",
    "MotionVector",
    "CandidateSet",
    "MotionField",
    "canonicalize",
    "to_cartesian",
    "from_cartesian",
    "base_candidate_set",
    "extended_candidate_set",
    "rasterize",
    "validate_image",
]

# Largest candidate motion length; also the default kernel support side.
D_MAX = 25.0

BASE_LENGTHS = tuple(range(1, 26, 2))          # 13 samples: 1, 3, ..., 25
BASE_ORIENTATIONS = tuple(range(0, 180, 30))   # 6 samples: 0, 30, ..., 150
EXTENDED_ORIENTATIONS = tuple(range(0, 180, 6))  # 30 samples: 0, 6, ..., 174


class InvalidMotionError(ValueError):
    """Motion length below 1 or above the configured maximum."""


class KernelFormatError(ValueError):
    """Kernel support constraint violated (e.g. even side length)."""


@dataclass(frozen=True)
class MotionVector:
    """Canonical (length, orientation-in-degrees) motion vector."""

    length: float
    orientation: float

    def __post_init__(self):
        if not (self.length >= 1.0):
            raise InvalidMotionError(f"motion length must be >= 1, got {self.length}")
        if not (0.0 <= self.orientation < 180.0):
            raise InvalidMotionError(
                f"orientation must be canonical in [0, 180), got {self.orientation}"
            )

    @property
    def uv(self) -> tuple[float, float]:
        return to_cartesian(self)


def canonicalize(length: float, orientation_deg: float) -> MotionVector:
    """Reduce an arbitrary (length, orientation) pair to its canonical form.

    Orientation is taken mod 180 into [0, 180); length 1 collapses to
    orientation 0 since every orientation yields the identity kernel there.
    """
    if not (length >= 1.0):
        raise InvalidMotionError(f"motion length must be >= 1, got {length}")
    orientation = float(orientation_deg) % 180.0
    if orientation >= 180.0:  # % can round up to the modulus for tiny negatives
        orientation = 0.0
    if length == 1.0:
        orientation = 0.0
    return MotionVector(float(length), orientation)


def to_cartesian(m: MotionVector) -> tuple[float, float]:
    """(u, v) = (l cos o, l sin o) with o in degrees."""
    rad = np.deg2rad(m.orientation)
    return float(m.length * np.cos(rad)), float(m.length * np.sin(rad))


def from_cartesian(u: float, v: float) -> MotionVector:
    """Inverse of :func:`to_cartesian`, canonicalized (flips (u,v) if v < 0)."""
    length = float(np.hypot(u, v))
    orientation = float(np.rad2deg(np.arctan2(v, u)))
    return canonicalize(length, orientation)


class CandidateSet:
    """Ordered set of candidate motion vectors over a (lengths x orientations) grid.

    Index 0 is the single collapsed l=1 entry; the rest are row-major over
    lengths (ascending, excluding 1) then orientations (ascending), so
    ``index = 1 + length_rank * n_orientations + orientation_rank``.
    """

    def __init__(self, lengths, orientations, name: str):
        self.name = name
        self.lengths = tuple(float(l) for l in lengths)
        self.orientations = tuple(float(o) for o in orientations)
        vectors = [canonicalize(1.0, 0.0)]
        for l in self.lengths:
            if l == 1.0:
                continue
            for o in self.orientations:
                vectors.append(canonicalize(l, o))
        self.vectors: tuple[MotionVector, ...] = tuple(vectors)
        self._index = {(m.length, m.orientation): i for i, m in enumerate(self.vectors)}
        uv = np.array([to_cartesian(m) for m in self.vectors], dtype=np.float64)
        uv.setflags(write=False)
        self.uv = uv

    def __len__(self) -> int:
        return len(self.vectors)

    def index_of(self, m: MotionVector) -> int:
        try:
            return self._index[(m.length, m.orientation)]
        except KeyError:
            raise KeyError(f"{m} is not a member of candidate set {self.name!r}") from None

    def nearest(self, u: float, v: float) -> int:
        """Index of the candidate closest in (u, v) Euclidean distance.

        (u, v) and (-u, -v) describe the same kernel, so the distance is the
        minimum over both signs.  Ties resolve to the lowest index.
        """
        d2 = np.minimum(
            ((self.uv - (u, v)) ** 2).sum(axis=1),
            ((self.uv + (u, v)) ** 2).sum(axis=1),
        )
        return int(np.argmin(d2))


@functools.cache
def base_candidate_set() -> CandidateSet:
    """The 73-vector set: 13 lengths x 6 orientations, l=1 collapsed."""
    return CandidateSet(BASE_LENGTHS, BASE_ORIENTATIONS, "base")


@functools.cache
def extended_candidate_set() -> CandidateSet:
    """The 361-vector set: 13 lengths x 30 orientations, l=1 collapsed."""
    return CandidateSet(BASE_LENGTHS, EXTENDED_ORIENTATIONS, "extended")


def rasterize(m: MotionVector, support: int = 25) -> np.ndarray:
    """Rasterize a motion vector into a normalized blur kernel.

    The kernel is the anti-aliased line segment of half-extent (l-1)/2
    through the center along the motion orientation: each cell weighs
    ``max(0, 1 - distance to the segment)``, then the kernel is normalized
    to sum 1.  Axis-aligned integer lengths come out as equal-weight taps
    (l=5 at 0 degrees is five 0.2 entries on the center row); oblique
    orientations get a two-pixel-wide tent profile along the trace.

    ``support`` must be odd; lengths beyond the support are truncated.
    """
    support = int(support)
    if support % 2 == 0:
        raise KernelFormatError(f"kernel support must be odd, got {support}")
    half = support // 2
    h = max((m.length - 1.0) / 2.0, 0.0)
    rad = np.deg2rad(m.orientation)
    dx, dy = np.cos(rad), np.sin(rad)
    ys, xs = np.mgrid[-half : half + 1, -half : half + 1].astype(np.float64)
    t = np.clip(xs * dx + ys * dy, -h, h)
    dist = np.hypot(xs - t * dx, ys - t * dy)
    kernel = np.maximum(0.0, 1.0 - dist)
    kernel /= kernel.sum()
    kernel.setflags(write=False)
    return kernel


def rasterize_uv(u: float, v: float, support: int = 25) -> np.ndarray:
    """Rasterize straight from Cartesian components (lengths < 1 clamp to 1)."""
    length = max(float(np.hypot(u, v)), 1.0)
    orientation = float(np.rad2deg(np.arctan2(v, u))) % 180.0
    return rasterize(canonicalize(length, orientation), support)


class MotionField:
    """Per-pixel motion vectors over an image, stored as an (H, W, 2) uv array.

    Construction canonicalizes each vector (v >= 0) and validates lengths
    against [1, d_max].  The array is made read-only; fields are immutable.
    """

    def __init__(self, uv: np.ndarray, d_max: float = D_MAX):
        uv = np.asarray(uv, dtype=np.float64)
        if uv.ndim != 3 or uv.shape[2] != 2:
            raise InvalidMotionError(f"expected (H, W, 2) uv array, got shape {uv.shape}")
        uv = uv.copy()
        flip = (uv[..., 1] < 0) | ((uv[..., 1] == 0) & (uv[..., 0] < 0))
        uv[flip] *= -1.0
        lengths = np.hypot(uv[..., 0], uv[..., 1])
        if np.any(lengths < 1.0 - 1e-9) or not np.all(np.isfinite(uv)):
            raise InvalidMotionError("motion lengths must be finite and >= 1")
        if np.any(lengths > d_max + 1e-9):
            raise InvalidMotionError(f"motion length {lengths.max():.3f} exceeds d_max={d_max}")
        uv.setflags(write=False)
        self.uv = uv
        self.d_max = float(d_max)

    @property
    def height(self) -> int:
        return self.uv.shape[0]

    @property
    def width(self) -> int:
        return self.uv.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.uv.shape[:2]

    def lengths(self) -> np.ndarray:
        return np.hypot(self.uv[..., 0], self.uv[..., 1])

    def orientations(self) -> np.ndarray:
        return np.rad2deg(np.arctan2(self.uv[..., 1], self.uv[..., 0])) % 180.0

    def vector_at(self, row: int, col: int) -> MotionVector:
        u, v = self.uv[row, col]
        return from_cartesian(float(u), float(v))

    def __eq__(self, other) -> bool:
        return isinstance(other, MotionField) and np.array_equal(self.uv, other.uv)


def validate_image(image: np.ndarray) -> np.ndarray:
    """Check the (H, W) or (H, W, {1,3}) float-in-[0,1] image convention."""
    image = np.asarray(image)
    if image.ndim == 3 and image.shape[2] not in (1, 3):
        raise ValueError(f"image channels must be 1 or 3, got {image.shape[2]}")
    if image.ndim not in (2, 3):
        raise ValueError(f"expected 2-D or 3-D image array, got shape {image.shape}")
    if not np.all(np.isfinite(image)):
        raise ValueError("image contains non-finite samples")
    return image
