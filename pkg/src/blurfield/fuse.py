"""Fusing patch distributions into a dense motion field.

Three stages: (1) every pixel averages the distributions of all patches
containing it, weighted by a Gaussian in the pixel-to-patch-center distance,
giving per-pixel candidate confidences; (2) each pixel keeps a shortlist of
the 20 most confident candidates plus 30 sampled from the rest, so labels
stay both prominent and diverse while the label space shrinks 7x; (3) a
4-connected MRF with unary -confidence and pairwise squared-distance in
(u, v) between neighboring labels is approximately minimized by synchronous
min-sum belief propagation with damping, keeping the best labeling seen.

Because the shortlists differ per pixel, pairwise costs are evaluated
directly on the candidates' (u, v) values rather than via a shared label
table.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CandidateSet, MotionField, base_candidate_set, extended_candidate_set
from .predict import PATCH_HALF

__all__ = [
    "ConfidenceVolume",
    "CandidateShortlist",
    "MrfParams",
    "get_candidate_set",
    "confidence_volume",
    "shortlist",
    "solve_mrf",
    "energy",
]


def get_candidate_set(set_id: str) -> CandidateSet:
    if set_id == "base":
        return base_candidate_set()
    if set_id == "extended":
        return extended_candidate_set()
    raise ValueError(f"unknown candidate set {set_id!r}")


@dataclass(frozen=True)
class ConfidenceVolume:
    """Per-pixel candidate confidences; each pixel's vector sums to 1."""

    set_id: str
    data: np.ndarray  # (H, W, K)

    def __post_init__(self):
        self.data.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[:2]


@dataclass(frozen=True)
class CandidateShortlist:
    """Per-pixel candidate indices (top-k first, confidence order) and confidences."""

    set_id: str
    idx: np.ndarray   # (H, W, S) int32, unique per pixel
    conf: np.ndarray  # (H, W, S)


@dataclass(frozen=True)
class MrfParams:
    """Smoothness weight and belief-propagation schedule (4-connected grid)."""

    lambda_smooth: float = 0.01
    bp_iterations: int = 30
    damping: float = 0.5
    rng_seed: int = 0
    grid_stride: int = 1

    def __post_init__(self):
        if not (np.isfinite(self.lambda_smooth) and self.lambda_smooth >= 0):
            raise ValueError("lambda_smooth must be finite and >= 0")
        if self.bp_iterations < 1:
            raise ValueError("bp_iterations must be >= 1")
        if not (0.0 <= self.damping < 1.0):
            raise ValueError("damping must be in [0, 1)")
        if self.grid_stride < 1:
            raise ValueError("grid_stride must be >= 1")


def confidence_volume(preds, width: int, height: int, sigma: float = 10.0) -> ConfidenceVolume:
    """Gaussian-weighted per-pixel average of patch distributions.

    Every patch votes its distribution into each pixel it covers with weight
    exp(-d^2 / (2 sigma^2)), d the distance from the pixel to the patch
    center; weights normalize per pixel.
    """
    if not preds:
        raise ValueError("no patch predictions given")
    set_id = preds[0][1].set_id
    k = len(preds[0][1].probs)
    num = np.zeros((height, width, k))
    den = np.zeros((height, width))

    # same 30x30 Gaussian stencil around every patch center
    offs = np.arange(-PATCH_HALF, PATCH_HALF, dtype=np.float64)
    d2 = offs[:, None] ** 2 + offs[None, :] ** 2
    stencil = np.exp(-d2 / (2.0 * sigma * sigma))

    for (r, c), dist in preds:
        if dist.set_id != set_id or len(dist.probs) != k:
            raise ValueError("mixed candidate sets in predictions")
        rs, cs = slice(r - PATCH_HALF, r + PATCH_HALF), slice(c - PATCH_HALF, c + PATCH_HALF)
        if rs.start < 0 or cs.start < 0 or rs.stop > height or cs.stop > width:
            raise ValueError(f"patch at {(r, c)} exceeds image bounds {(height, width)}")
        num[rs, cs] += stencil[:, :, None] * dist.probs
        den[rs, cs] += stencil

    if np.any(den == 0):
        r, c = np.argwhere(den == 0)[0]
        raise ValueError(f"pixel ({r}, {c}) not covered by any patch")
    return ConfidenceVolume(set_id, num / den[:, :, None])


def shortlist(volume: ConfidenceVolume, top_k: int = 20, sampled: int = 30,
              seed: int = 0) -> CandidateShortlist:
    """Per-pixel top-k candidates plus extra ones sampled without replacement.

    The top-k block comes first, ordered by descending confidence (ties to
    the lower candidate index); the sampled block follows in index order.
    Deterministic given the seed.
    """
    conf = volume.data
    h, w, k = conf.shape
    if top_k + sampled > k:
        raise ValueError(f"top_k + sampled = {top_k + sampled} exceeds set size {k}")

    part = np.argpartition(-conf, top_k - 1, axis=-1)[:, :, :top_k]
    part = np.sort(part, axis=-1)  # index order, so confidence ties break low-index
    part_conf = np.take_along_axis(conf, part, axis=-1)
    order = np.argsort(-part_conf, axis=-1, kind="stable")
    top_idx = np.take_along_axis(part, order, axis=-1)

    if sampled > 0:
        rng = np.random.default_rng(seed)
        keys = rng.random((h, w, k), dtype=np.float32)
        np.put_along_axis(keys, top_idx, np.inf, axis=-1)
        extra = np.argpartition(keys, sampled - 1, axis=-1)[:, :, :sampled]
        extra = np.sort(extra, axis=-1)
        idx = np.concatenate([top_idx, extra], axis=-1)
    else:
        idx = top_idx

    return CandidateShortlist(
        volume.set_id,
        idx.astype(np.int32),
        np.take_along_axis(conf, idx, axis=-1),
    )


# -- MRF ------------------------------------------------------------------

# neighbor q of pixel p lies at p + offset
_OFFSETS = ((-1, 0), (1, 0), (0, -1), (0, 1))
_OPPOSITE = (1, 0, 3, 2)


def _argmin_low_index(values: np.ndarray, cand_idx: np.ndarray) -> np.ndarray:
    """Per-pixel argmin label slot; ties go to the lowest candidate index."""
    vmin = values.min(axis=-1, keepdims=True)
    masked = np.where(values == vmin, cand_idx, np.iinfo(np.int64).max)
    return masked.argmin(axis=-1)


def _grid_energy(labels, unary, uv, lam) -> float:
    h, w = labels.shape
    ii, jj = np.ogrid[0:h, 0:w]
    total = float(unary[ii, jj, labels].sum())
    pick = uv[ii, jj, labels]
    if h > 1:
        total += lam * float(((pick[1:] - pick[:-1]) ** 2).sum())
    if w > 1:
        total += lam * float(((pick[:, 1:] - pick[:, :-1]) ** 2).sum())
    return total


def _min_pairwise(pre_q, uv_q, s_q, uv_p, s_p, lam, chunk=1024):
    """min over source labels i of pre_q(i) + lam * |uv_q(i) - uv_p(j)|^2."""
    shape = pre_q.shape
    nl = shape[-1]
    if lam == 0.0:
        return np.broadcast_to(pre_q.min(-1, keepdims=True), shape).copy()
    g = (pre_q + lam * s_q).reshape(-1, nl)
    a = uv_q.reshape(-1, nl, 2)
    b = uv_p.reshape(-1, nl, 2)
    out = np.empty_like(g)
    neg_two_lam = np.asarray(-2.0 * lam, dtype=g.dtype)
    for lo in range(0, g.shape[0], chunk):
        hi = lo + chunk
        # (m, j over p-labels, i over q-labels): min along the contiguous axis,
        # reusing the dot buffer to stay cache-resident
        dot = b[lo:hi] @ a[lo:hi].transpose(0, 2, 1)
        dot *= neg_two_lam
        dot += g[lo:hi, None, :]
        out[lo:hi] = dot.min(axis=2)
    out += (lam * s_p).reshape(-1, nl).astype(g.dtype)
    return out.reshape(shape)


def _bp_labels(unary, uv, cand_idx, params: MrfParams):
    """Synchronous damped min-sum sweeps; returns the best labeling seen.

    The unary-only labeling seeds the search, so the result never has higher
    energy than it.  Energies always evaluate in float64; message arithmetic
    drops to float32 on large grids, where memory traffic dominates.
    """
    h, w, nl = unary.shape
    lam = params.lambda_smooth
    s = (uv ** 2).sum(-1)

    best_labels = _argmin_low_index(unary, cand_idx)
    best_energy = _grid_energy(best_labels, unary, uv, lam)

    dtype = np.float32 if h * w * nl * nl > 4e6 else np.float64
    unary_m = unary.astype(dtype)
    uv_m = uv.astype(dtype)
    s_m = s.astype(dtype)
    msgs = np.zeros((4, h, w, nl), dtype=dtype)

    for _ in range(params.bp_iterations):
        msum = msgs.sum(axis=0)
        new_msgs = np.zeros_like(msgs)
        for k, (dy, dx) in enumerate(_OFFSETS):
            psl = (slice(max(0, -dy), h - max(0, dy)), slice(max(0, -dx), w - max(0, dx)))
            qsl = (slice(max(0, dy), h - max(0, -dy)), slice(max(0, dx), w - max(0, -dx)))
            if psl[0].start >= psl[0].stop or psl[1].start >= psl[1].stop:
                continue
            pre_q = unary_m[qsl] + msum[qsl] - msgs[_OPPOSITE[k]][qsl]
            m_new = _min_pairwise(pre_q, uv_m[qsl], s_m[qsl], uv_m[psl], s_m[psl], lam)
            m_new -= m_new.min(axis=-1, keepdims=True)
            new_msgs[k][psl] = params.damping * msgs[k][psl] + (1.0 - params.damping) * m_new
        msgs = new_msgs
        labels = _argmin_low_index(unary_m + msgs.sum(axis=0), cand_idx)
        e = _grid_energy(labels, unary, uv, lam)
        if e < best_energy:
            best_energy, best_labels = e, labels
    return best_labels, best_energy


def solve_mrf(volume: ConfidenceVolume, shortlist: CandidateShortlist,
              params: MrfParams) -> MotionField:
    """Approximate MRF minimizer over the per-pixel shortlists.

    With grid_stride > 1 the MRF runs on a subsampled pixel grid and the
    labels upsample by nearest neighbor.
    """
    if shortlist.idx.shape[:2] != volume.shape or shortlist.set_id != volume.set_id:
        raise ValueError("shortlist does not match confidence volume")
    h, w = volume.shape
    st = params.grid_stride
    cand_idx = shortlist.idx[::st, ::st].astype(np.int64)
    unary = -shortlist.conf[::st, ::st]
    cset = get_candidate_set(volume.set_id)
    uv = cset.uv[cand_idx]

    labels, _ = _bp_labels(unary, uv, cand_idx, params)
    gh, gw = labels.shape
    ii, jj = np.ogrid[0:gh, 0:gw]
    picked = uv[ii, jj, labels]
    if st > 1:
        picked = np.repeat(np.repeat(picked, st, axis=0), st, axis=1)[:h, :w]
    return MotionField(picked)


def energy(field: MotionField, volume: ConfidenceVolume, params: MrfParams) -> float:
    """MRF energy of a field: -confidence per pixel plus smoothness, each
    undirected edge counted once."""
    if field.shape != volume.shape:
        raise ValueError(f"field {field.shape} vs volume {volume.shape} size mismatch")
    cset = get_candidate_set(volume.set_id)
    flat = field.uv.reshape(-1, 2)
    d2 = np.minimum(
        ((flat[:, None, :] - cset.uv[None]) ** 2).sum(-1),
        ((flat[:, None, :] + cset.uv[None]) ** 2).sum(-1),
    )
    idx = d2.argmin(axis=1)
    conf = volume.data.reshape(-1, len(cset))[np.arange(len(flat)), idx]
    total = -float(conf.sum())
    uv = field.uv
    total += params.lambda_smooth * float(((uv[1:] - uv[:-1]) ** 2).sum())
    total += params.lambda_smooth * float(((uv[:, 1:] - uv[:, :-1]) ** 2).sum())
    return total
