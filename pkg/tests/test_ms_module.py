"""The motion feature block: transform stack, fusion algebra, padding rules."""

import numpy as np
import pytest

from msq.displacement import KernelSoftArgmaxParams
from msq.ms_module import (FUSION_MODES, MsModule, MsModuleConfig,
                           feature_transform, fuse, make_transform_stack,
                           ms_forward)
from msq.tensor import F64, Rng, rng_normal


def small_module(seed=0, channels=8, k=2, fusion="add", backward=False,
                 widths=(4, 4, 4)):
    cfg = MsModuleConfig(k=k, fusion=fusion, use_backward_displacement=backward,
                         transform_widths=widths)
    return MsModule(cfg, channels=channels, rng=Rng(seed), dtype=np.float64)


def random_clip(seed, t=3, c=8, h=10, w=10):
    return rng_normal(Rng(seed), (t, c, h, w), dtype=F64)


class TestTransformStack:
    def test_shape_contract(self):
        stack = make_transform_stack(Rng(0), 3, (8, 8, 8), 32, dtype=np.float64)
        d = rng_normal(Rng(1), (2, 3, 16, 16), dtype=F64)
        m = feature_transform(d, stack, train=True)
        assert m.shape == (2, 32, 16, 16)

    def test_zero_input_zero_output(self):
        stack = make_transform_stack(Rng(0), 3, (4, 4, 4), 8, dtype=np.float64)
        for name, arr in stack.trainable().items():
            if name.split(".")[-1] == "b":
                arr[...] = 0.0
        m = feature_transform(np.zeros((2, 3, 6, 6)), stack, train=True)
        assert np.all(m == 0.0)

    def test_parameter_enumeration_oracle(self):
        # independently enumerate every tensor the construction implies
        c = 64
        stack = make_transform_stack(Rng(0), 3, (c // 4,) * 3, c)
        expected = 0
        for kern, cin, cout in zip((7, 3, 3, 3), (3, 16, 16, 16),
                                   (16, 16, 16, 64)):
            expected += cin * kern * kern + cin      # depthwise conv w + b
            expected += 2 * cin                      # BN gamma + beta
            expected += cout * cin + cout            # pointwise conv w + b
            expected += 2 * cout                     # BN gamma + beta
        assert sum(a.size for a in stack.trainable().values()) == expected

    def test_width_mismatch(self):
        stack = make_transform_stack(Rng(0), 3, (4, 4, 4), 8)
        with pytest.raises(ValueError):
            feature_transform(np.zeros((2, 6, 6, 6)), stack)

    def test_bad_width_count(self):
        with pytest.raises(ValueError):
            make_transform_stack(Rng(0), 3, (4, 4), 8)


class TestFuse:
    def test_add_identity(self):
        f = rng_normal(Rng(0), (2, 4, 3, 3), dtype=F64)
        m = rng_normal(Rng(1), (2, 4, 3, 3), dtype=F64)
        y, vjp = fuse(f, m, "add")
        assert np.array_equal(y, f + m)
        df, dm = vjp(y)
        assert np.array_equal(df, y) and np.array_equal(dm, y)

    def test_multiply_identity(self):
        f = rng_normal(Rng(2), (2, 4, 3, 3), dtype=F64)
        m = rng_normal(Rng(3), (2, 4, 3, 3), dtype=F64)
        y, vjp = fuse(f, m, "multiply")
        assert np.array_equal(y, f * m)
        df, dm = vjp(np.ones_like(y))
        assert np.array_equal(df, m) and np.array_equal(dm, f)

    def test_ms_only_drops_appearance(self):
        f = rng_normal(Rng(4), (2, 4, 3, 3), dtype=F64)
        m = rng_normal(Rng(5), (2, 4, 3, 3), dtype=F64)
        y, vjp = fuse(f, m, "ms_only")
        assert np.array_equal(y, m)
        df, dm = vjp(np.ones_like(y))
        assert np.all(df == 0.0) and np.all(dm == 1.0)

    def test_concat_requires_projection(self):
        x = np.zeros((1, 4, 3, 3))
        with pytest.raises(ValueError):
            fuse(x, x, "concat")

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            fuse(np.zeros((1, 4, 3, 3)), np.zeros((1, 4, 4, 4)), "add")

    def test_unknown_mode(self):
        x = np.zeros((1, 4, 3, 3))
        with pytest.raises(ValueError):
            fuse(x, x, "average")


class TestMsModuleForward:
    def test_shape_contract(self):
        mod = small_module()
        x = random_clip(0)
        fused, disp = ms_forward(x, mod, train=True)
        assert fused.shape == x.shape
        assert disp.shape == (3, 3, 10, 10)

    def test_backward_displacement_channels(self):
        mod = small_module(backward=True)
        _, disp = ms_forward(random_clip(1), mod, train=True)
        assert disp.shape[1] == 6

    def test_t2_padding(self):
        # with two frames there is a single motion feature, repeated
        mod = small_module(fusion="ms_only")
        fused, disp = ms_forward(random_clip(2, t=2), mod, train=True)
        assert np.array_equal(fused[0], fused[1])
        assert np.array_equal(disp[0], disp[1])

    def test_last_two_motion_features_identical(self):
        mod = small_module(fusion="ms_only")
        fused, disp = ms_forward(random_clip(3, t=5), mod, train=True)
        assert np.array_equal(fused[-1], fused[-2])
        assert np.array_equal(disp[-1], disp[-2])

    def test_static_clip_null_motion(self):
        # identical frames with equal-norm phase features: by Cauchy-Schwarz
        # every off-center score A^2 cos(dtheta) is strictly below the
        # centered peak A^2, so the tau=0.01 softmax collapses onto p=(0,0)
        h = w = 10
        theta = 2.67 * (np.arange(h)[:, None] * w + np.arange(w))[None]
        frame = rng_normal(Rng(4), (1, 8, h, w), dtype=F64)
        frame[:, 0] = 10.0 * np.cos(theta)
        frame[:, 1] = 10.0 * np.sin(theta)
        frame[:, 2:4] = 0.0
        clip = np.repeat(frame, 4, axis=0)
        mod = small_module(seed=11)
        mod.reduce.w[...] = 0.0
        for c in range(4):
            mod.reduce.w[c, c, 0, 0] = 1.0
        mod.reduce.b[...] = 0.0
        _, disp = ms_forward(clip, mod, train=True)
        assert np.max(np.abs(disp[:, :2])) <= 1e-9
        for t in range(1, 4):
            assert np.array_equal(disp[t], disp[0])

    def test_add_mode_composition(self):
        # fused equals appearance plus the padded transform of the
        # displacement tensor, combined in the same elementwise order
        mod = small_module(seed=5)
        x = random_clip(6, t=4)
        fused, disp = ms_forward(x, mod, train=False)
        m = feature_transform(disp[:3], mod.transform, train=False)
        m_full = np.concatenate([m, m[-1:]], axis=0)
        assert np.array_equal(fused, x + m_full)

    def test_concat_mode_shape(self):
        mod = small_module(fusion="concat")
        fused, _ = ms_forward(random_clip(7), mod, train=True)
        assert fused.shape == (3, 8, 10, 10)

    def test_batched_matches_per_clip(self):
        mod = small_module(seed=8, fusion="ms_only")
        x = rng_normal(Rng(9), (2, 3, 8, 10, 10), dtype=F64)
        fused, disp = mod.forward(x, train=False)
        for i in range(2):
            f1, d1 = mod.forward(x[i], train=False)
            assert np.array_equal(fused[i], f1)
            assert np.array_equal(disp[i], d1)

    def test_too_few_frames(self):
        mod = small_module()
        with pytest.raises(ValueError):
            ms_forward(random_clip(0, t=1), mod)

    def test_channel_mismatch(self):
        mod = small_module()
        with pytest.raises(ValueError):
            ms_forward(rng_normal(Rng(0), (3, 6, 10, 10), dtype=F64), mod)

    def test_odd_channels_rejected(self):
        with pytest.raises(ValueError):
            MsModule(MsModuleConfig(k=1), channels=7, rng=Rng(0))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            MsModuleConfig(k=0).validate()
        with pytest.raises(ValueError):
            MsModuleConfig(fusion="average").validate()
        assert set(FUSION_MODES) == {"add", "multiply", "concat", "ms_only"}
