"""Non-uniform non-blind deconvolution by half-quadratic splitting.

The forward model applies a different line kernel at every pixel (rasterized
from the motion field, cached at 0.25-pixel (u, v) quantization).  Restoring
the sharp image alternates two sub-problems over an increasing penalty beta:

* z-step: every overlapping 8x8 patch of the current image is denoised
  under a Gaussian-mixture patch prior (pick the most probable component at
  noise level 1/beta, then Wiener-filter with it);
* x-step: a conjugate-gradient solve of the normal equations coupling the
  blur data term with the patch targets.

Boundaries use edge replication in both the operator and its adjoint, so
the adjoint identity <Kx, y> = <x, K'y> holds exactly.
"""

from __future__ import annotations

import functools
import warnings
from dataclasses import dataclass, field as dataclass_field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import logsumexp

from .core import MotionField, rasterize_uv
from .formats import load_gmm_arrays, save_gmm_arrays

__all__ = [
    "NonUniformOperator",
    "GmmPrior",
    "HqsSchedule",
    "solve_x",
    "solve_z",
    "deblur",
    "fit_gmm",
]

_QUANT = 0.25


@functools.lru_cache(maxsize=None)
def _quantized_kernel(ku: int, kv: int, support: int) -> np.ndarray:
    return rasterize_uv(ku * _QUANT, kv * _QUANT, support)


class NonUniformOperator:
    """Matrix-free per-pixel convolution K for a motion field.

    Internally stores one weight plane per kernel offset (only offsets some
    pixel actually uses), so applications are a few hundred vectorized
    multiply-adds.  Memory is O(n_offsets * H * W); pass a smaller
    ``support`` to cap it for long-kernel fields.
    """

    def __init__(self, motion_field: MotionField, support: int = 25, quant: float = _QUANT):
        self.field = motion_field
        h, w = motion_field.shape
        lmax = float(motion_field.lengths().max())
        r_needed = int(np.floor((lmax - 1.0) / 2.0 + 1.0 - 1e-9))
        r = min(support // 2, r_needed)
        self.radius = r
        side = 2 * r + 1

        keys = np.rint(motion_field.uv / quant).astype(np.int64).reshape(-1, 2)
        uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
        self.kernel_cache = {
            (int(ku), int(kv)): _quantized_kernel(int(ku), int(kv), side)
            for ku, kv in uniq
        }
        inverse = inverse.reshape(h, w)
        planes = np.zeros((side * side, h, w))
        for u_i, (ku, kv) in enumerate(uniq):
            mask = inverse == u_i
            planes[:, mask] = self.kernel_cache[(int(ku), int(kv))].reshape(-1, 1)
        used = planes.reshape(side * side, -1).any(axis=1)
        offs = np.stack(np.mgrid[-r : r + 1, -r : r + 1], axis=-1).reshape(-1, 2)
        self._offsets = offs[used]
        self._planes = planes[used]

    @property
    def shape(self) -> tuple[int, int]:
        return self.field.shape

    def _check(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        if image.shape[:2] != self.shape:
            raise ValueError(f"image {image.shape[:2]} vs field {self.shape} size mismatch")
        return image

    def _apply_plane(self, image: np.ndarray) -> np.ndarray:
        h, w = image.shape
        r = self.radius
        padded = np.pad(image, r, mode="edge")
        out = np.zeros_like(image)
        for (dy, dx), plane in zip(self._offsets, self._planes):
            out += plane * padded[r - dy : r - dy + h, r - dx : r - dx + w]
        return out

    def _adjoint_plane(self, image: np.ndarray) -> np.ndarray:
        h, w = image.shape
        r = self.radius
        acc = np.zeros((h + 2 * r, w + 2 * r))
        for (dy, dx), plane in zip(self._offsets, self._planes):
            acc[r - dy : r - dy + h, r - dx : r - dx + w] += plane * image
        # fold the pad margins back: adjoint of edge replication
        if r:
            acc[r] += acc[:r].sum(axis=0)
            acc[h + r - 1] += acc[h + r :].sum(axis=0)
            mid = acc[r : h + r]
            mid[:, r] += mid[:, :r].sum(axis=1)
            mid[:, w + r - 1] += mid[:, w + r :].sum(axis=1)
            return mid[:, r : w + r].copy()
        return acc

    def _per_channel(self, image, fn) -> np.ndarray:
        image = self._check(image)
        if image.ndim == 2:
            return fn(image)
        return np.stack([fn(image[..., c]) for c in range(image.shape[2])], axis=-1)

    def apply(self, image: np.ndarray) -> np.ndarray:
        """Blur: out(p) = sum_offset kernel_p(offset) * image(p - offset)."""
        return self._per_channel(image, self._apply_plane)

    def apply_adjoint(self, image: np.ndarray) -> np.ndarray:
        """Exact transpose of :meth:`apply` under the replicate boundary."""
        return self._per_channel(image, self._adjoint_plane)


# -- GMM prior ------------------------------------------------------------

_JITTER = 1e-6


@dataclass
class GmmPrior:
    """Gaussian mixture over mean-subtracted square patches (default 8x8)."""

    weights: np.ndarray
    means: np.ndarray        # (K, dim)
    covariances: np.ndarray  # (K, dim, dim)
    fit_log_likelihoods: list = dataclass_field(default_factory=list, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.covariances = np.asarray(self.covariances, dtype=np.float64)
        if abs(self.weights.sum() - 1.0) > 1e-6 or np.any(self.weights < 0):
            raise ValueError("mixture weights must be non-negative and sum to 1")
        self._chol = []
        eye = np.eye(self.dim)
        for k, cov in enumerate(self.covariances):
            try:
                self._chol.append(cho_factor(cov + _JITTER * eye, lower=True))
            except np.linalg.LinAlgError as exc:
                raise ValueError(f"component {k} covariance is not SPD") from exc

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def patch_size(self) -> int:
        return int(round(np.sqrt(self.dim)))

    def log_component_densities(self, x: np.ndarray) -> np.ndarray:
        """log w_k + log N(x; mu_k, Sigma_k) for rows of x, shape (n, K)."""
        x = np.atleast_2d(x)
        out = np.empty((len(x), self.n_components))
        const = -0.5 * self.dim * np.log(2.0 * np.pi)
        for k in range(self.n_components):
            c, low = self._chol[k]
            diff = (x - self.means[k]).T
            sol = cho_solve((c, low), diff)
            quad = (sol * diff).sum(axis=0)
            logdet = 2.0 * np.log(np.diag(c)).sum()
            out[:, k] = np.log(self.weights[k]) + const - 0.5 * (quad + logdet)
        return out

    def save(self, path) -> None:
        save_gmm_arrays(self.weights, self.means, self.covariances, path)

    @classmethod
    def load(cls, path) -> "GmmPrior":
        return cls(*load_gmm_arrays(path))


@dataclass(frozen=True)
class HqsSchedule:
    """Data weight and increasing beta ladder for the splitting iterations."""

    lambda_data: float = 2e5
    betas: tuple = (50.0, 100.0, 200.0, 400.0, 800.0, 1600.0, 3200.0)
    cg_tol: float = 1e-5
    cg_max_iter: int = 200
    patch_size: int = 8

    def __post_init__(self):
        if any(b2 <= b1 for b1, b2 in zip(self.betas, self.betas[1:])):
            raise ValueError("beta sequence must be strictly increasing")


# -- z-step ---------------------------------------------------------------

def _solve_z_batch(flat: np.ndarray, prior: GmmPrior, beta: float):
    """MAP-denoise patch rows at noise variance 1/beta.

    Returns (denoised rows, selected component, log w_k N(z; mu_k, Sigma_k)).
    """
    dc = flat.mean(axis=1, keepdims=True)
    r = flat - dc
    n, dim = r.shape
    eye = np.eye(dim)
    noise = eye / beta

    select = np.empty((n, prior.n_components))
    const = -0.5 * dim * np.log(2.0 * np.pi)
    noisy_chols = []
    for k in range(prior.n_components):
        try:
            c, low = cho_factor(prior.covariances[k] + noise, lower=True)
        except np.linalg.LinAlgError:
            c, low = cho_factor(prior.covariances[k] + noise + _JITTER * eye, lower=True)
        noisy_chols.append((c, low))
        diff = (r - prior.means[k]).T
        sol = cho_solve((c, low), diff)
        quad = (sol * diff).sum(axis=0)
        logdet = 2.0 * np.log(np.diag(c)).sum()
        select[:, k] = np.log(prior.weights[k]) + const - 0.5 * (quad + logdet)
    comp = select.argmax(axis=1)

    z = np.empty_like(r)
    for k in np.unique(comp):
        members = comp == k
        wiener = cho_solve(noisy_chols[k], prior.covariances[k]).T  # Sigma (Sigma + I/b)^-1
        z[members] = prior.means[k] + (r[members] - prior.means[k]) @ wiener.T

    loglik = prior.log_component_densities(z)[np.arange(n), comp]
    return z + dc, comp, loglik


def solve_z(patch: np.ndarray, prior: GmmPrior, beta: float) -> np.ndarray:
    """Denoise one patch (any square side matching the prior) at level 1/beta."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    patch = np.asarray(patch, dtype=np.float64)
    z, _, _ = _solve_z_batch(patch.reshape(1, -1), prior, beta)
    return z.reshape(patch.shape)


# -- x-step ---------------------------------------------------------------

def _patch_grid(image: np.ndarray, size: int) -> np.ndarray:
    """(H-size+1, W-size+1, size, size) view of all overlapping patches."""
    if image.shape[0] < size or image.shape[1] < size:
        raise ValueError(f"image {image.shape} smaller than patch size {size}")
    return np.lib.stride_tricks.sliding_window_view(image, (size, size))

def _scatter_patches(z: np.ndarray, shape: tuple[int, int], size: int) -> np.ndarray:
    """Sum of R_i' z_i: add every patch back where it was extracted."""
    out = np.zeros(shape)
    gh, gw = z.shape[:2]
    for a in range(size):
        for b in range(size):
            out[a : a + gh, b : b + gw] += z[:, :, a, b]
    return out


def _coverage(shape: tuple[int, int], size: int) -> np.ndarray:
    ones = np.ones((shape[0] - size + 1, shape[1] - size + 1, size, size))
    return _scatter_patches(ones, shape, size)


def solve_x(op: NonUniformOperator, observed: np.ndarray, z: np.ndarray,
            lam: float, beta: float, x0: np.ndarray | None = None,
            cg_tol: float = 1e-5, cg_max_iter: int = 200) -> np.ndarray:
    """Conjugate-gradient solve of the x-step normal equations.

    [lam K'K + beta sum_i R_i'R_i] x = lam K'O + beta sum_i R_i'z_i, with
    sum R_i'R_i a per-pixel coverage count.  ``z`` holds one patch per
    overlapping position, shape (H-s+1, W-s+1, s, s).
    """
    observed = np.asarray(observed, dtype=np.float64)
    if observed.ndim != 2:
        raise ValueError("solve_x operates on a single channel")
    size = z.shape[2]
    cover = _coverage(observed.shape, size)
    b = lam * op.apply_adjoint(observed) + beta * _scatter_patches(z, observed.shape, size)

    def matvec(x):
        return lam * op.apply_adjoint(op.apply(x)) + beta * cover * x

    x = np.zeros_like(observed) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    r = b - matvec(x)
    p = r.copy()
    rs = float((r * r).sum())
    b_norm = float(np.sqrt((b * b).sum())) or 1.0
    for _ in range(cg_max_iter):
        if np.sqrt(rs) <= cg_tol * b_norm:
            break
        ap = matvec(p)
        alpha = rs / float((p * ap).sum())
        x += alpha * p
        r -= alpha * ap
        rs_new = float((r * r).sum())
        p = r + (rs_new / rs) * p
        rs = rs_new
    else:
        warnings.warn(
            f"CG stopped at max_iter={cg_max_iter} with relative residual "
            f"{np.sqrt(rs) / b_norm:.3e}", RuntimeWarning)
    return x


# -- outer loop -----------------------------------------------------------

def _surrogate(op, image, observed, z, comp_loglik, beta, lam) -> float:
    """lam/2 |KI - O|^2 + sum_i [beta/2 |R_i I - z_i|^2 - log w_k N(z_i)]."""
    resid = op.apply(image) - observed
    size = z.shape[2]
    patches = _patch_grid(image, size)
    coupling = ((patches - z) ** 2).sum()
    return 0.5 * lam * float((resid * resid).sum()) + 0.5 * beta * coupling - float(comp_loglik.sum())


def deblur(observed: np.ndarray, motion_field: MotionField, prior: GmmPrior,
           schedule: HqsSchedule = HqsSchedule(), stage_log: list | None = None) -> np.ndarray:
    """Half-quadratic-splitting restoration of a blurry image.

    Color inputs restore per channel with the shared grayscale prior.  If
    ``stage_log`` is a list, one record per beta stage is appended with the
    surrogate objective after the z- and x-steps (summed over channels).
    """
    observed = np.asarray(observed, dtype=np.float64)
    if observed.shape[:2] != motion_field.shape:
        raise ValueError(f"image {observed.shape[:2]} vs field {motion_field.shape} size mismatch")
    op = NonUniformOperator(motion_field)
    size = schedule.patch_size
    flat_obs = observed if observed.ndim == 3 else observed[..., None]
    channels = [flat_obs[..., c].copy() for c in range(flat_obs.shape[2])]

    for beta in schedule.betas:
        after_z = after_x = 0.0
        for c, img in enumerate(channels):
            grid = _patch_grid(img, size)
            gh, gw = grid.shape[:2]
            z_rows, comp, loglik = _solve_z_batch(grid.reshape(-1, size * size), prior, beta)
            z = z_rows.reshape(gh, gw, size, size)
            after_z += _surrogate(op, img, flat_obs[..., c], z, loglik, beta, schedule.lambda_data)
            img = solve_x(op, flat_obs[..., c], z, schedule.lambda_data, beta,
                          x0=img, cg_tol=schedule.cg_tol, cg_max_iter=schedule.cg_max_iter)
            after_x += _surrogate(op, img, flat_obs[..., c], z, loglik, beta, schedule.lambda_data)
            channels[c] = img
        if stage_log is not None:
            stage_log.append({"beta": beta, "after_z": after_z, "after_x": after_x})

    restored = np.stack(channels, axis=-1) if observed.ndim == 3 else channels[0]
    return np.clip(restored, 0.0, 1.0)


# -- prior fitting ----------------------------------------------------------

def fit_gmm(patches: np.ndarray, n_components: int, seed: int = 0,
            max_iter: int = 200, tol: float = 1e-5) -> GmmPrior:
    """EM fit of a full-covariance mixture to mean-subtracted patch rows.

    Initialization is a seeded pick of distinct patches as means followed by
    three k-means sweeps; covariance updates carry a 1e-6 jitter.  Components
    whose weight collapses below 1e-8 are pruned with a warning.
    """
    x = np.asarray(patches, dtype=np.float64)
    x = x.reshape(len(x), -1)
    n, dim = x.shape
    if n < 100 * n_components:
        raise ValueError(f"need at least {100 * n_components} patches, got {n}")

    rng = np.random.default_rng(seed)
    means = x[rng.choice(n, size=n_components, replace=False)]
    for _ in range(3):
        d2 = ((x[:, None, :] - means[None]) ** 2).sum(-1) if n * n_components * dim < 5e7 else None
        if d2 is None:
            d2 = (x * x).sum(1)[:, None] - 2.0 * x @ means.T + (means * means).sum(1)[None]
        assign = d2.argmin(axis=1)
        for k in range(n_components):
            sel = x[assign == k]
            if len(sel):
                means[k] = sel.mean(axis=0)

    eye = np.eye(dim)
    weights = np.full(n_components, 1.0 / n_components)
    covs = np.empty((n_components, dim, dim))
    for k in range(n_components):
        sel = x[assign == k]
        covs[k] = np.cov(sel.T) + _JITTER * eye if len(sel) > dim else np.cov(x.T) + _JITTER * eye

    history = []
    log_resp = np.empty((n, n_components))
    for _ in range(max_iter):
        # E-step
        prior = GmmPrior(weights, means, covs)
        log_resp = prior.log_component_densities(x)
        norm = logsumexp(log_resp, axis=1)
        history.append(float(norm.sum()))
        resp = np.exp(log_resp - norm[:, None])
        # M-step
        nk = resp.sum(axis=0) + 1e-300
        weights = nk / n
        means = (resp.T @ x) / nk[:, None]
        for k in range(n_components):
            diff = x - means[k]
            covs[k] = (diff.T * resp[:, k]) @ diff / nk[k] + _JITTER * eye
        if len(history) > 1 and abs(history[-1] - history[-2]) < tol * abs(history[-2]):
            break

    keep = weights >= 1e-8
    if not keep.all():
        warnings.warn(f"pruned {int((~keep).sum())} degenerate mixture components", RuntimeWarning)
        weights = weights[keep] / weights[keep].sum()
        means, covs = means[keep], covs[keep]

    out = GmmPrior(weights, means, covs)
    out.fit_log_likelihoods = history
    return out
