"""Soft-/kernel-soft-argmax displacement and confidence estimation."""

import numpy as np
import pytest

from msq.displacement import (KernelSoftArgmaxParams, assemble_displacement,
                              confidence_map, gaussian_kernel_mask,
                              kernel_soft_argmax, soft_argmax,
                              soft_argmax_batch)
from msq.gradcheck import margined_volume
from msq.tensor import F64, Rng, rng_normal


class TestSoftArgmax:
    def test_uniform_scores_give_zero(self):
        d, _ = soft_argmax(np.zeros((9, 3, 3)), tau=1.0)
        assert np.allclose(d, 0.0, atol=1e-15)

    def test_peaked_scores_saturate(self):
        s = np.zeros((9, 1, 1))
        s[8] = 100.0  # flat index 8 is (dx, dy) = (+1, +1) at k=1
        d, _ = soft_argmax(s, tau=1.0)
        assert np.allclose(d[:, 0, 0], [1.0, 1.0], atol=1e-12)

    def test_bounded_by_radius(self):
        s = rng_normal(Rng(0), (25, 4, 4), dtype=F64) * 10.0
        d, _ = soft_argmax(s, tau=0.05)
        assert np.all(np.abs(d) <= 2.0)

    def test_low_temperature_matches_hard_argmax(self):
        # tau = 1e-4 on margin >= 0.1 volumes collapses to the argmax offset
        rng = Rng(1)
        for trial in range(100):
            s = margined_volume(rng, (9, 3, 3), margin=0.1)
            d, _ = soft_argmax(s, tau=1e-4)
            star = s.argmax(axis=0)
            hard = np.stack([star % 3 - 1, star // 3 - 1]).astype(float)
            assert np.max(np.abs(d - hard)) < 1e-3, trial

    def test_shift_equivariance(self):
        # adding a constant to every score leaves the softmax unchanged
        s = rng_normal(Rng(2), (9, 3, 3), dtype=F64)
        d0, _ = soft_argmax(s, tau=0.5)
        d1, _ = soft_argmax(s + 7.25, tau=0.5)
        assert np.max(np.abs(d0 - d1)) < 1e-12

    def test_bad_tau(self):
        with pytest.raises(ValueError):
            soft_argmax(np.zeros((9, 2, 2)), tau=0.0)

    def test_non_square_channel_count(self):
        with pytest.raises(ValueError):
            soft_argmax(np.zeros((8, 2, 2)), tau=1.0)

    def test_batch_matches_single(self):
        s = rng_normal(Rng(3), (3, 9, 2, 2), dtype=F64)
        d, _ = soft_argmax_batch(s, 0.3)
        for i in range(3):
            single, _ = soft_argmax(s[i], 0.3)
            assert np.array_equal(d[i], single)


class TestGaussianKernelMask:
    def test_peak_prefactor(self):
        # unit mask value at the argmax is 1/(sqrt(2 pi) * 5) = 0.0797885
        s = np.zeros((1, 9, 1, 1))
        s[0, 4] = 1.0
        g = gaussian_kernel_mask(s, sigma=5.0)
        assert g[0, 4, 0, 0] == pytest.approx(0.0797885, abs=1e-6)

    def test_decay_with_distance(self):
        s = np.zeros((1, 25, 1, 1))
        s[0, 12] = 1.0  # centre of the k=2 window
        g = gaussian_kernel_mask(s, sigma=1.0, include_prefactor=False)
        assert g[0, 12, 0, 0] == pytest.approx(1.0)
        assert g[0, 13, 0, 0] == pytest.approx(np.exp(-0.5))  # distance 1
        assert g[0, 18, 0, 0] == pytest.approx(np.exp(-1.0))  # distance sqrt(2)

    def test_tie_breaks_to_lowest_index(self):
        s = np.zeros((1, 9, 1, 1))  # all tied; argmax must be index 0
        g = gaussian_kernel_mask(s, sigma=1.0, include_prefactor=False)
        assert g[0, 0, 0, 0] == pytest.approx(1.0)
        assert g[0, 8, 0, 0] < 1.0

    def test_matches_direct_formula(self):
        s = rng_normal(Rng(4), (2, 9, 3, 3), dtype=F64)
        g = gaussian_kernel_mask(s, sigma=5.0)
        star = s.argmax(axis=1)
        dx = np.arange(9) % 3 - 1
        dy = np.arange(9) // 3 - 1
        for b in range(2):
            for y in range(3):
                for x in range(3):
                    ps = star[b, y, x]
                    d2 = (dx - dx[ps]) ** 2 + (dy - dy[ps]) ** 2
                    ref = np.exp(-d2 / 50.0) / (np.sqrt(2 * np.pi) * 5.0)
                    assert np.allclose(g[b, :, y, x], ref, atol=1e-12)


class TestKernelSoftArgmax:
    def test_huge_sigma_matches_soft_argmax(self):
        # sigma -> inf flattens the mask to 1, recovering plain soft-argmax
        s = rng_normal(Rng(5), (9, 4, 4), dtype=F64)
        params = KernelSoftArgmaxParams(sigma=1e6, tau=0.7)
        d_k, _ = kernel_soft_argmax(s, params, include_prefactor=False)
        d_s, _ = soft_argmax(s, 0.7)
        assert np.max(np.abs(d_k - d_s)) < 1e-9

    def test_mask_suppresses_far_peaks(self):
        # two equal peaks at opposite corners: the mask keeps the estimate
        # near the tie-broken argmax instead of averaging to zero
        s = np.zeros((9, 1, 1))
        s[0] = s[8] = 10.0
        d, _ = kernel_soft_argmax(s, KernelSoftArgmaxParams(sigma=0.5, tau=0.01))
        assert np.allclose(d[:, 0, 0], [-1.0, -1.0], atol=1e-3)

    def test_bounded_by_radius(self):
        s = rng_normal(Rng(6), (25, 3, 3), dtype=F64) * 5.0
        d, _ = kernel_soft_argmax(s, KernelSoftArgmaxParams())
        assert np.all(np.abs(d) <= 2.0)

    def test_param_validation(self):
        with pytest.raises(ValueError):
            kernel_soft_argmax(np.zeros((9, 2, 2)),
                               KernelSoftArgmaxParams(sigma=-1.0))
        with pytest.raises(ValueError):
            kernel_soft_argmax(np.zeros((9, 2, 2)),
                               KernelSoftArgmaxParams(tau=0.0))


class TestConfidenceMap:
    def test_max_per_position(self):
        s = rng_normal(Rng(7), (9, 3, 3), dtype=F64)
        conf, _ = confidence_map(s)
        assert conf.shape == (1, 3, 3)
        assert np.array_equal(conf[0], s.max(axis=0))

    def test_gradient_routes_to_argmax(self):
        s = np.zeros((9, 2, 2))
        s[3] = 1.0
        _, vjp = confidence_map(s)
        (ds,) = vjp(np.ones((1, 2, 2)))
        assert np.all(ds[3] == 1.0)
        assert ds.sum() == 4.0  # one winner per position


class TestAssembleDisplacement:
    def test_forward_only(self):
        d = rng_normal(Rng(8), (2, 3, 3), dtype=F64)
        c = rng_normal(Rng(9), (1, 3, 3), dtype=F64)
        out, vjp = assemble_displacement(d, c)
        assert out.shape == (3, 3, 3)
        assert np.array_equal(out[:2], d) and np.array_equal(out[2:], c)
        dd, dc = vjp(out)
        assert np.array_equal(dd, d) and np.array_equal(dc, c)

    def test_bidirectional(self):
        rng = Rng(10)
        df = rng_normal(rng, (2, 3, 3), dtype=F64)
        cf = rng_normal(rng, (1, 3, 3), dtype=F64)
        db = rng_normal(rng, (2, 3, 3), dtype=F64)
        cb = rng_normal(rng, (1, 3, 3), dtype=F64)
        out, vjp = assemble_displacement(df, cf, db, cb)
        assert out.shape == (6, 3, 3)
        parts = vjp(out)
        assert len(parts) == 4
        assert np.array_equal(parts[3], cb)

    def test_partial_backward_rejected(self):
        d = np.zeros((2, 3, 3))
        c = np.zeros((1, 3, 3))
        with pytest.raises(ValueError):
            assemble_displacement(d, c, d, None)

    def test_spatial_mismatch_rejected(self):
        with pytest.raises(ValueError):
            assemble_displacement(np.zeros((2, 3, 3)), np.zeros((1, 4, 4)))
