"""Generator: identity-at-init, fusion properties, gradients, toggles."""

import numpy as np
import pytest

from qwdgan import autodiff as ad
from qwdgan.autodiff import RunningStats, Tape, Tensor
from qwdgan.errors import ConfigError, ShapeError
from qwdgan.generator import (Generator, GeneratorConfig, fsff_fuse,
                              naive_fuse, residual_block)

SMALL = GeneratorConfig(base_channels=8, scales=2, wcg_groups=2, max_channels=16)


def small_generator(seed=0, **kwargs):
    import dataclasses
    return Generator.build(dataclasses.replace(SMALL, **kwargs), seed=seed)


class TestIdentityAtInit:
    def test_output_equals_input_exactly(self):
        g = small_generator()
        rng = np.random.default_rng(0)
        x = Tensor(rng.uniform(0, 1, size=(2, 1, 32, 32)))
        out = g.forward(x, training=True)
        np.testing.assert_array_equal(out.data, x.data)

    def test_default_config_identity(self):
        g = Generator.build(GeneratorConfig(), seed=1)
        rng = np.random.default_rng(1)
        x = Tensor(rng.uniform(0, 1, size=(1, 1, 64, 64)))
        np.testing.assert_array_equal(g.forward(x).data, x.data)


class TestForwardContract:
    def test_shape_and_finiteness(self):
        g = small_generator(seed=2)
        # perturb the output head so the correction is non-trivial
        rng = np.random.default_rng(3)
        g.params["out.w"].data[:] = rng.normal(0, 0.05, g.params["out.w"].data.shape)
        x = Tensor(rng.uniform(0, 1, size=(1, 1, 64, 64)))
        out = g.forward(x, training=True)
        assert out.data.shape == (1, 1, 64, 64)
        assert np.all(np.isfinite(out.data))

    def test_indivisible_extent_error_names_requirement(self):
        g = small_generator()
        with pytest.raises(ShapeError, match="divisible by 2\\^scales"):
            g.forward(Tensor(np.zeros((1, 1, 30, 32))))

    def test_inference_clamps_to_unit_interval(self):
        g = small_generator(seed=4)
        g.params["out.w"].data[:] = 1.0  # force large corrections
        rng = np.random.default_rng(4)
        x = Tensor(rng.uniform(0, 1, size=(1, 1, 32, 32)))
        out = g.forward(x, training=False)
        assert out.data.min() >= 0.0 and out.data.max() <= 1.0

    def test_scale_extents_follow_powers_of_two(self):
        g = Generator.build(GeneratorConfig(base_channels=8, scales=3,
                                            wcg_groups=2, max_channels=16), seed=5)
        internals = {}
        x = Tensor(np.random.default_rng(5).uniform(0, 1, size=(1, 1, 64, 64)))
        g.forward(x, internals=internals)
        for s in range(3):
            shape = internals[f"scale{s}"]
            assert shape[-2] == 64 // (2 ** s) and shape[-1] == 64 // (2 ** s)


class TestGradients:
    def test_every_parameter_receives_gradient(self):
        g = small_generator(seed=6)
        rng = np.random.default_rng(6)
        x = Tensor(rng.uniform(0, 1, size=(2, 1, 16, 16)))
        y = Tensor(rng.uniform(0, 1, size=(2, 1, 16, 16)))
        with Tape():
            out = g.forward(x, training=True)
            loss = ad.mean_all(ad.absolute(ad.sub(out, y)))
            ad.backward(loss)
        missing = [name for name, p in g.params.items() if p.grad is None]
        assert missing == []

    def test_finite_difference_probe_every_parameter(self):
        g = small_generator(seed=7)
        rng = np.random.default_rng(7)
        x = Tensor(rng.uniform(0, 1, size=(1, 1, 16, 16)))
        y = rng.uniform(0, 1, size=(1, 1, 16, 16))

        def fn(*_):
            out = g.forward(x, training=True)
            return ad.mean_all(ad.absolute(ad.sub(out, Tensor(y))))

        assert ad.grad_check(fn, list(g.params.values()), probe_count=3) < 1e-5


class TestFsff:
    def _params(self, channels, rng, equal_projections=False):
        def conv(cin, cout, k):
            w = Tensor(rng.normal(0, 0.3, size=(cout, cin, k, k)), requires_grad=True)
            b = Tensor(np.zeros(cout), requires_grad=True)
            return w, b

        pw_w, pw_b = conv(channels, channels, 1)
        ps_w, ps_b = conv(channels, channels, 1)
        if equal_projections:
            ps_w = Tensor(pw_w.data.copy(), requires_grad=True)
            ps_b = Tensor(pw_b.data.copy(), requires_grad=True)
        at_w, at_b = conv(channels, 1, 3)
        return pw_w, pw_b, ps_w, ps_b, at_w, at_b

    def test_equal_inputs_give_projected_average(self):
        rng = np.random.default_rng(8)
        f = Tensor(rng.normal(size=(1, 4, 8, 8)))
        pw_w, pw_b, ps_w, ps_b, at_w, at_b = self._params(4, rng, equal_projections=True)
        at_b.data[:] = 0.0
        fused = fsff_fuse(f, f, pw_w, pw_b, ps_w, ps_b, at_w, at_b)
        # identical projections of the same input: gate is sigmoid(bias)=0.5,
        # so the mix collapses to the shared projection
        proj = ad.conv2d(f, pw_w, pw_b)
        np.testing.assert_allclose(fused.data, proj.data, atol=1e-12)

    def test_saturated_gate_selects_wavelet_branch(self):
        rng = np.random.default_rng(9)
        fw = Tensor(rng.normal(size=(1, 4, 8, 8)))
        fs = Tensor(rng.normal(size=(1, 4, 8, 8)))
        pw_w, pw_b, ps_w, ps_b, at_w, at_b = self._params(4, rng)
        at_w.data[:] = 1e3  # huge positive response to any difference
        at_b.data[:] = 0.0
        fused = fsff_fuse(fw, fs, pw_w, pw_b, ps_w, ps_b, at_w, at_b)
        proj_w = ad.conv2d(fw, pw_w, pw_b)
        np.testing.assert_allclose(fused.data, proj_w.data, atol=1e-6)

    def test_fused_is_elementwise_convex_combination(self):
        rng = np.random.default_rng(10)
        for trial in range(5):
            fw = Tensor(rng.normal(size=(1, 4, 8, 8)))
            fs = Tensor(rng.normal(size=(1, 4, 8, 8)))
            params = self._params(4, rng)
            fused = fsff_fuse(fw, fs, *params)
            pw = ad.conv2d(fw, params[0], params[1]).data
            ps = ad.conv2d(fs, params[2], params[3]).data
            lo = np.minimum(pw, ps) - 1e-12
            hi = np.maximum(pw, ps) + 1e-12
            assert np.all(fused.data >= lo) and np.all(fused.data <= hi)

    def test_gradients_flow(self):
        rng = np.random.default_rng(11)
        fw = Tensor(rng.normal(size=(1, 2, 8, 8)), requires_grad=True)
        fs = Tensor(rng.normal(size=(1, 2, 8, 8)), requires_grad=True)
        params = self._params(2, rng)

        def fn(a, b, *ps):
            return ad.mean_all(ad.square(fsff_fuse(a, b, *ps)))

        assert ad.grad_check(fn, [fw, fs, *params]) < 1e-6


class TestResidualBlock:
    def _params(self, channels, rng, zero=False):
        shape = (channels, channels, 3, 3)
        w1 = Tensor(np.zeros(shape) if zero else rng.normal(0, 0.2, shape),
                    requires_grad=True)
        w2 = Tensor(np.zeros(shape) if zero else rng.normal(0, 0.2, shape),
                    requires_grad=True)
        b1 = Tensor(np.zeros(channels), requires_grad=True)
        b2 = Tensor(np.zeros(channels), requires_grad=True)
        gamma = Tensor(np.ones(channels), requires_grad=True)
        beta = Tensor(np.zeros(channels), requires_grad=True)
        return w1, b1, gamma, beta, RunningStats.create(channels), w2, b2

    def test_zero_convs_identity(self):
        rng = np.random.default_rng(12)
        x = Tensor(rng.normal(size=(2, 3, 8, 8)))
        out = residual_block(x, *self._params(3, rng, zero=True))
        np.testing.assert_array_equal(out.data, x.data)

    def test_two_blocks_shape_stable(self):
        rng = np.random.default_rng(13)
        x = Tensor(rng.normal(size=(1, 3, 8, 8)))
        out = residual_block(x, *self._params(3, rng))
        out = residual_block(out, *self._params(3, rng))
        assert out.data.shape == x.data.shape

    def test_gradient(self):
        rng = np.random.default_rng(14)
        x = Tensor(rng.uniform(-1, 1, size=(2, 2, 6, 6)), requires_grad=True)
        w1, b1, gamma, beta, stats, w2, b2 = self._params(2, rng)

        def fn(a, *ps):
            return ad.mean_all(ad.square(residual_block(
                a, ps[0], ps[1], ps[2], ps[3], RunningStats.create(2), ps[4], ps[5])))

        assert ad.grad_check(fn, [x, w1, b1, gamma, beta, w2, b2]) < 1e-5


class TestToggles:
    def test_wavelet_branch_off_removes_wcg_parameters(self):
        g = small_generator(wavelet_branch_off=True)
        assert not any("wcg" in name for name in g.params)
        assert not any("fuse" in name for name in g.params)

    def test_wcg_off_substitutes_residual_blocks(self):
        g = small_generator(wcg_off=True)
        assert not any(".wcg." in name for name in g.params)
        assert any("wavelet0.conv1" in name for name in g.params)

    def test_naive_fusion_parameters(self):
        g = small_generator(naive_fusion=True)
        assert any(".naive." in name for name in g.params)
        assert not any(".attn." in name for name in g.params)

    def test_fsff_off_has_no_fusion_parameters(self):
        g = small_generator(fsff_off=True)
        assert not any("fuse" in name for name in g.params)

    @pytest.mark.parametrize("kwargs", [
        dict(fsff_off=True), dict(wavelet_branch_off=True), dict(wcg_off=True),
        dict(naive_fusion=True)])
    def test_every_variant_keeps_identity_at_init(self, kwargs):
        g = small_generator(seed=15, **kwargs)
        rng = np.random.default_rng(15)
        x = Tensor(rng.uniform(0, 1, size=(1, 1, 16, 16)))
        np.testing.assert_array_equal(g.forward(x).data, x.data)

    def test_naive_fuse_concat_conv(self):
        rng = np.random.default_rng(16)
        fw = Tensor(rng.normal(size=(1, 2, 4, 4)))
        fs = Tensor(rng.normal(size=(1, 2, 4, 4)))
        w = Tensor(rng.normal(size=(2, 4, 1, 1)))
        b = Tensor(np.zeros(2))
        out = naive_fuse(fw, fs, w, b)
        stacked = np.concatenate([fw.data, fs.data], axis=1)
        expected = np.einsum("oc,nchw->nohw", w.data[:, :, 0, 0], stacked)
        np.testing.assert_allclose(out.data, expected, atol=1e-12)


class TestConfigValidation:
    def test_base_channels_must_divide_groups(self):
        with pytest.raises(ConfigError, match="divisible"):
            GeneratorConfig(base_channels=6, wcg_groups=4).validate()

    def test_mutually_exclusive_fusion_toggles(self):
        with pytest.raises(ConfigError, match="exclusive"):
            GeneratorConfig(fsff_off=True, naive_fusion=True).validate()
