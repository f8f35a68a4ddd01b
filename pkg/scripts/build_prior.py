#!/usr/bin/env python3
"""Build the bundled 8x8 patch prior from procedural piecewise-smooth images.

Generates grayscale scenes mixing smooth shading, hard shape edges at all
orientations, and light texture, then fits the default 20-component mixture
on mean-subtracted patches.  Writes src/blurfield/data/default_prior.gmmp.
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from blurfield.deconv import fit_gmm  # noqa: E402


def procedural_image(rng, size=192):
    img = gaussian_filter(rng.standard_normal((size, size)), rng.uniform(8, 30))
    img = (img - img.min()) / (np.ptp(img) + 1e-9)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    for _ in range(int(rng.integers(6, 16))):
        val = rng.uniform(0, 1)
        alpha = rng.uniform(0.6, 1.0)
        kind = int(rng.integers(3))
        if kind == 0:  # rotated ellipse
            cy, cx = rng.uniform(0, size, 2)
            ry, rx = rng.uniform(4, size / 3, 2)
            th = rng.uniform(0, np.pi)
            yr = (yy - cy) * np.cos(th) + (xx - cx) * np.sin(th)
            xr = -(yy - cy) * np.sin(th) + (xx - cx) * np.cos(th)
            mask = (yr / ry) ** 2 + (xr / rx) ** 2 < 1.0
        elif kind == 1:  # rotated bar
            cy, cx = rng.uniform(0, size, 2)
            hw, hh = rng.uniform(3, size / 4, 2)
            th = rng.uniform(0, np.pi)
            yr = (yy - cy) * np.cos(th) + (xx - cx) * np.sin(th)
            xr = -(yy - cy) * np.sin(th) + (xx - cx) * np.cos(th)
            mask = (np.abs(yr) < hh) & (np.abs(xr) < hw)
        else:  # half plane
            th = rng.uniform(0, 2 * np.pi)
            off = rng.uniform(0.2 * size, 0.8 * size)
            mask = (yy * np.sin(th) + xx * np.cos(th)) < off
        img[mask] = (1 - alpha) * img[mask] + alpha * val
    img += gaussian_filter(rng.standard_normal((size, size)), 1.2) * rng.uniform(0.005, 0.04)
    return np.clip(img, 0.0, 1.0)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--images", type=int, default=60)
    ap.add_argument("--patches", type=int, default=120000)
    ap.add_argument("--components", type=int, default=20)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--max-iter", type=int, default=150)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1]
                                         / "src" / "blurfield" / "data" / "default_prior.gmmp"))
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    scenes = [procedural_image(rng) for _ in range(args.images)]
    size = 8
    rows = np.empty((args.patches, size * size))
    for i in range(args.patches):
        g = scenes[int(rng.integers(len(scenes)))]
        r0 = int(rng.integers(g.shape[0] - size + 1))
        c0 = int(rng.integers(g.shape[1] - size + 1))
        rows[i] = g[r0 : r0 + size, c0 : c0 + size].ravel()
    rows -= rows.mean(axis=1, keepdims=True)

    t0 = time.time()
    prior = fit_gmm(rows, args.components, seed=args.seed, max_iter=args.max_iter)
    print(f"EM: {len(prior.fit_log_likelihoods)} iterations in {time.time() - t0:.0f} s, "
          f"final ll/patch {prior.fit_log_likelihoods[-1] / args.patches:.3f}")
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    prior.save(args.out)
    print(f"wrote {args.out} ({prior.n_components} components)")


if __name__ == "__main__":
    main()
