

import numpy as np
import pytest

from blurfield import fuse
from blurfield.core import MotionField, base_candidate_set, canonicalize, to_cartesian
from blurfield.predict import MotionDistribution, OraclePredictor, predict_image
from blurfield.synth import field_translation


def one_hot(index, n=73):
    p = np.zeros(n)
    p[index] = 1.0
    return MotionDistribution("base", p)


class TestConfidenceVolume:
    def test_single_patch_passthrough(self):
        d = one_hot(5)
        vol = fuse.confidence_volume([((15, 15), d)], 30, 30)
        assert np.allclose(vol.data, d.probs)  # Z cancels everywhere

    def test_equal_distributions_stay_fixed(self):
        d = one_hot(9)
        centers = [(15, 15), (15, 21), (21, 15), (21, 21)]
        vol = fuse.confidence_volume([(c, d) for c in centers], 36, 36)
        assert np.allclose(vol.data[18, 18], d.probs)  # convex combination

    def test_equidistant_patches_split_half_half(self):
        a, b = one_hot(3), one_hot(7)
        preds = [((15, 15), a), ((15, 19), b)]
        vol = fuse.confidence_volume(preds, 34, 30)
        mid = vol.data[15, 17]
        assert abs(mid[3] - 0.5) < 1e-12 and abs(mid[7] - 0.5) < 1e-12

    def test_normalized_per_pixel(self):
        gt = field_translation(60, 60, 5.0, 0.0)
        preds = predict_image(np.zeros((60, 60, 3)), OraclePredictor(gt, epsilon=0.1))
        vol = fuse.confidence_volume(preds, 60, 60)
        sums = vol.data.sum(axis=-1)
        assert np.abs(sums - 1.0).max() < 1e-6
        assert (vol.data >= 0).all()

    def test_uncovered_pixel_reported(self):
        with pytest.raises(ValueError, match=r"\(0, 30\) not covered"):
            fuse.confidence_volume([((15, 15), one_hot(0))], 64, 64)


class TestShortlist:
    @pytest.fixture()
    def volume(self):
        rng = np.random.default_rng(0)
        conf = rng.random((6, 7, 361))
        conf /= conf.sum(axis=-1, keepdims=True)
        return fuse.ConfidenceVolume("extended", conf)

    def test_full_set_in_confidence_order(self, volume):
        sl = fuse.shortlist(volume, top_k=361, sampled=0, seed=1)
        conf = np.take_along_axis(volume.data, sl.idx.astype(np.int64), axis=-1)
        assert (np.diff(conf, axis=-1) <= 1e-15).all()
        assert (np.sort(sl.idx, axis=-1) == np.arange(361)).all()

    def test_deterministic_given_seed(self, volume):
        a = fuse.shortlist(volume, seed=7)
        b = fuse.shortlist(volume, seed=7)
        assert np.array_equal(a.idx, b.idx)
        c = fuse.shortlist(volume, seed=8)
        assert not np.array_equal(a.idx, c.idx)

    def test_fifty_unique_with_top_included(self, volume):
        sl = fuse.shortlist(volume, top_k=20, sampled=30, seed=2)
        assert sl.idx.shape[-1] == 50
        for r in range(volume.data.shape[0]):
            for c in range(volume.data.shape[1]):
                row = sl.idx[r, c]
                assert len(set(row.tolist())) == 50
                top20 = np.argsort(-volume.data[r, c], kind="stable")[:20]
                assert set(top20.tolist()) <= set(row.tolist())

    def test_oversized_request_rejected(self, volume):
        with pytest.raises(ValueError):
            fuse.shortlist(volume, top_k=350, sampled=30)


def brute_force_chain(unary, uv, lam):
    """Exhaustive minimum of the chain energy over all nl^n labelings."""
    n, nl = unary.shape
    grids = np.indices((nl,) * n).reshape(n, -1)
    e = unary[np.arange(n)[:, None], grids].sum(axis=0)
    for i in range(n - 1):
        pair = ((uv[i][:, None, :] - uv[i + 1][None, :, :]) ** 2).sum(-1)
        e += lam * pair[grids[i], grids[i + 1]]
    j = int(e.argmin())
    return float(e[j]), tuple(grids[:, j])


class TestSolveMrf:
    def _volume_from_conf(self, conf, set_id="base"):
        return fuse.ConfidenceVolume(set_id, conf / conf.sum(axis=-1, keepdims=True))

    def test_lambda_zero_is_unary_argmax(self):
        rng = np.random.default_rng(3)
        conf = rng.random((8, 9, 73))
        vol = self._volume_from_conf(conf)
        sl = fuse.shortlist(vol, top_k=10, sampled=10, seed=0)
        field = fuse.solve_mrf(vol, sl, fuse.MrfParams(lambda_smooth=0.0))
        base = base_candidate_set()
        want = base.uv[vol.data.argmax(axis=-1)]
        assert np.allclose(field.uv, want)

    def test_chain_matches_brute_force(self):
        rng = np.random.default_rng(4)
        base = base_candidate_set()
        for trial in range(10):
            n = int(rng.integers(2, 11))
            lam = float(rng.uniform(0.01, 1.0))
            cand = rng.choice(len(base), size=(1, n, 4), replace=True)
            unary = rng.random((1, n, 4))
            uv = base.uv[cand]
            params = fuse.MrfParams(lambda_smooth=lam, bp_iterations=n + 2, damping=0.0)
            labels, energy = fuse._bp_labels(unary, uv, cand.astype(np.int64), params)
            best, _ = brute_force_chain(unary[0], uv[0], lam)
            assert energy == pytest.approx(best, abs=1e-12), trial

    def test_strong_smoothing_flips_corrupted_pixels(self):
        rng = np.random.default_rng(5)
        base = base_candidate_set()
        good = base.index_of(canonicalize(9, 30))
        bad = base.index_of(canonicalize(25, 120))
        h = w = 16
        conf = np.full((h, w, 73), 1e-4)
        conf[:, :, good] = 0.8
        corrupt = rng.random((h, w)) < 0.05
        # second-best at corrupted pixels, so `good` stays in the shortlist
        conf[corrupt, good] = 0.3
        conf[corrupt, bad] = 0.8
        vol = self._volume_from_conf(conf)
        sl = fuse.shortlist(vol, top_k=5, sampled=5, seed=0)
        smooth = fuse.solve_mrf(vol, sl, fuse.MrfParams(lambda_smooth=5.0, bp_iterations=20))
        assert np.allclose(smooth.uv, base.uv[good])
        # and the smoothing really was responsible: unary-only keeps the noise
        unary_only = fuse.solve_mrf(vol, sl, fuse.MrfParams(lambda_smooth=0.0))
        assert not np.allclose(unary_only.uv, base.uv[good])
        e_smooth = fuse.energy(smooth, vol, fuse.MrfParams(lambda_smooth=5.0))
        e_noisy = fuse.energy(unary_only, vol, fuse.MrfParams(lambda_smooth=5.0))
        assert e_smooth < e_noisy

    def test_energy_never_exceeds_unary_labeling(self):
        rng = np.random.default_rng(6)
        for trial in range(5):
            conf = rng.random((7, 7, 73))
            vol = self._volume_from_conf(conf)
            sl = fuse.shortlist(vol, top_k=8, sampled=8, seed=trial)
            params = fuse.MrfParams(lambda_smooth=0.05, bp_iterations=10)
            field = fuse.solve_mrf(vol, sl, params)
            unary = fuse.solve_mrf(vol, sl, fuse.MrfParams(lambda_smooth=0.0))
            assert (fuse.energy(field, vol, params)
                    <= fuse.energy(unary, vol, params) + 1e-9)

    def test_monotone_smoothness_term_on_chains(self):
        # guaranteed only where BP is exact (trees); loopy violations are
        # BP approximation artifacts, not bugs
        rng = np.random.default_rng(7)
        conf = rng.random((1, 12, 73))
        vol = self._volume_from_conf(conf)
        sl = fuse.shortlist(vol, top_k=6, sampled=6, seed=0)

        def smooth_term(field):
            uv = field.uv
            return float(((uv[:, 1:] - uv[:, :-1]) ** 2).sum())

        terms = []
        for lam in (0.0, 0.01, 0.1, 1.0, 10.0):
            params = fuse.MrfParams(lambda_smooth=lam, bp_iterations=14, damping=0.0)
            terms.append(smooth_term(fuse.solve_mrf(vol, sl, params)))
        assert all(b <= a + 1e-9 for a, b in zip(terms, terms[1:]))

    def test_deterministic(self):
        rng = np.random.default_rng(8)
        conf = rng.random((9, 9, 73))
        vol = self._volume_from_conf(conf)
        sl = fuse.shortlist(vol, top_k=10, sampled=5, seed=3)
        params = fuse.MrfParams(lambda_smooth=0.02, bp_iterations=12)
        a = fuse.solve_mrf(vol, sl, params)
        b = fuse.solve_mrf(vol, sl, params)
        assert np.array_equal(a.uv, b.uv)

    def test_grid_stride_upsamples(self):
        rng = np.random.default_rng(9)
        conf = rng.random((9, 9, 73))
        vol = self._volume_from_conf(conf)
        sl = fuse.shortlist(vol, top_k=10, sampled=0, seed=0)
        field = fuse.solve_mrf(vol, sl, fuse.MrfParams(bp_iterations=2, grid_stride=3))
        assert field.shape == (9, 9)
        assert np.array_equal(field.uv[0, 0], field.uv[2, 2])


class TestEnergy:
    def test_constant_field_zero_smoothness(self):
        vol = fuse.ConfidenceVolume("base", np.full((4, 4, 73), 1.0 / 73))
        field = field_translation(4, 4, *to_cartesian(canonicalize(9, 30)))
        e0 = fuse.energy(field, vol, fuse.MrfParams(lambda_smooth=0.0))
        e1 = fuse.energy(field, vol, fuse.MrfParams(lambda_smooth=123.0))
        assert e0 == e1  # smoothness term exactly zero on a constant field

    def test_single_edge_counted_once(self):
        vol = fuse.ConfidenceVolume("base", np.full((2, 1, 73), 1.0 / 73))
        uv = np.zeros((2, 1, 2))
        uv[0, 0] = (1.0, 0.0)
        uv[1, 0] = (2.0, 0.0)
        field = MotionField(uv)
        e0 = fuse.energy(field, vol, fuse.MrfParams(lambda_smooth=0.0))
        e1 = fuse.energy(field, vol, fuse.MrfParams(lambda_smooth=1.0))
        assert e1 - e0 == pytest.approx(1.0)  # (2-1)^2 on the single edge

    def test_one_hot_matching_field(self):
        base = base_candidate_set()
        idx = base.index_of(canonicalize(9, 30))
        conf = np.zeros((3, 3, 73))
        conf[:, :, idx] = 1.0
        vol = fuse.ConfidenceVolume("base", conf)
        field = field_translation(3, 3, *to_cartesian(canonicalize(9, 30)))
        e = fuse.energy(field, vol, fuse.MrfParams(lambda_smooth=0.0))
        assert e == pytest.approx(-9.0)  # -1 per pixel
