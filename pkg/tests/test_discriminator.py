"""Quality-aware discriminator: entropy maps, modulation, forward contract."""

import math

import numpy as np
import pytest

from qwdgan import autodiff as ad
from qwdgan.autodiff import Tape, Tensor
from qwdgan.discriminator import (Discriminator, DiscriminatorConfig,
                                  entropy_map, iqa_features, spatial_modulate)
from qwdgan.errors import ConfigError, ShapeError

SMALL = DiscriminatorConfig(base_channels=8)


def entropy_window_oracle(patch, bins=16):
    """Direct histogram entropy of one window."""
    idx = np.minimum((np.clip(patch, 0, 1) * bins).astype(int), bins - 1)
    counts = np.bincount(idx.ravel(), minlength=bins)
    p = counts / counts.sum()
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


class TestEntropyMap:
    def test_constant_image_gives_zero(self):
        phi = entropy_map(np.full((32, 32), 0.42), window=7)
        np.testing.assert_array_equal(phi.values, 0.0)

    def test_checkerboard_matches_direct_histogram(self):
        board = (np.indices((16, 16)).sum(axis=0) % 2).astype(float)
        phi = entropy_map(board, window=3, bins=16)
        # interior windows hold a 4/9-5/9 split of the two values
        expected = entropy_window_oracle(np.array([0.0] * 4 + [1.0] * 5))
        np.testing.assert_allclose(phi.values[0, 0, 4:12, 4:12], expected, atol=1e-12)

    def test_uniform_noise_approaches_log2_bins(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(0, 1, size=(64, 64))
        phi = entropy_map(x, window=15, bins=16)
        interior = phi.values[0, 0, 16:48, 16:48]
        assert interior.mean() > 4.0 * 0.95  # within 5% of log2(16)=4

    def test_full_window_oracle_on_random_patches(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(0, 1, size=(12, 12))
        phi = entropy_map(x, window=5, bins=8)
        for (r, c) in [(4, 4), (6, 3), (5, 7)]:
            window = x[r - 2:r + 3, c - 2:c + 3]
            assert phi.values[0, 0, r, c] == pytest.approx(
                entropy_window_oracle(window, bins=8), abs=1e-12)

    def test_range_bounded_by_log2_bins(self):
        rng = np.random.default_rng(2)
        phi = entropy_map(rng.uniform(0, 1, size=(32, 32)), window=7, bins=16)
        assert phi.values.min() >= 0.0
        assert phi.values.max() <= math.log2(16) + 1e-12

    def test_even_window_rejected(self):
        with pytest.raises(ConfigError, match="odd"):
            entropy_map(np.zeros((8, 8)), window=4)


class TestSpatialModulate:
    def test_constant_map_is_identity(self):
        rng = np.random.default_rng(3)
        f = Tensor(rng.normal(size=(2, 4, 8, 8)))
        phi = entropy_map(np.full((2, 1, 32, 32), 0.0) + 0.5)  # constant -> zeros
        phi.values[:] = 3.0  # constant positive map
        out = spatial_modulate(f, phi)
        np.testing.assert_array_equal(out.data, f.data)

    def test_degenerate_zero_map_gates_with_ones(self):
        rng = np.random.default_rng(4)
        f = Tensor(rng.normal(size=(1, 4, 8, 8)))
        phi = entropy_map(np.full((1, 1, 32, 32), 0.25))  # constant image -> all zeros
        out = spatial_modulate(f, phi)
        np.testing.assert_array_equal(out.data, f.data)

    def test_single_peak_column_passes_at_full_scale(self):
        f = Tensor(np.ones((1, 3, 4, 4)))
        phi_vals = np.full((1, 1, 4, 4), 0.5)
        phi_vals[0, 0, 2, 1] = 2.0
        phi = entropy_map(np.zeros((1, 1, 4, 4)))
        phi.values = phi_vals
        out = spatial_modulate(f, phi)
        np.testing.assert_allclose(out.data[:, :, 2, 1], 1.0)
        np.testing.assert_allclose(out.data[:, :, 0, 0], 0.25)  # 0.5 / 2.0

    def test_positive_rescaling_leaves_output_unchanged(self):
        rng = np.random.default_rng(5)
        f = Tensor(rng.normal(size=(1, 2, 8, 8)))
        base = entropy_map(rng.uniform(0, 1, size=(1, 1, 8, 8)), window=3)
        out1 = spatial_modulate(f, base)
        base.values = base.values * 137.5
        out2 = spatial_modulate(f, base)
        np.testing.assert_allclose(out1.data, out2.data, atol=1e-12)

    def test_gate_carries_no_gradient(self):
        rng = np.random.default_rng(6)
        f = Tensor(rng.normal(size=(1, 2, 8, 8)), requires_grad=True)
        source = Tensor(rng.uniform(0, 1, size=(1, 1, 8, 8)), requires_grad=True)
        with Tape():
            phi = entropy_map(source.data, window=3)  # detached by construction
            out = spatial_modulate(f, phi)
            ad.backward(ad.mean_all(ad.square(out)))
        assert f.grad is not None
        assert source.grad is None


class TestIqaFeatures:
    def test_equal_inputs_distance_zero(self):
        rng = np.random.default_rng(7)
        x = rng.uniform(0, 1, size=(1, 1, 32, 32))
        fa = iqa_features(x)
        fb = iqa_features(x.copy())
        total = sum(np.abs(a.values - b.values).sum() for a, b in zip(fa, fb))
        assert total == 0.0

    def test_constant_vs_noise_strictly_positive(self):
        rng = np.random.default_rng(8)
        const = np.full((1, 1, 32, 32), 0.5)
        noisy = rng.uniform(0, 1, size=(1, 1, 32, 32))
        dist = sum(float(((a.values - b.values) ** 2).mean())
                   for a, b in zip(iqa_features(const), iqa_features(noisy)))
        assert dist > 0.01

    def test_window_order_invariance_of_sum(self):
        rng = np.random.default_rng(9)
        x = rng.uniform(0, 1, size=(1, 1, 16, 16))
        y = rng.uniform(0, 1, size=(1, 1, 16, 16))

        def total(windows):
            return sum(float(((a.values - b.values) ** 2).mean())
                       for a, b in zip(iqa_features(x, windows), iqa_features(y, windows)))

        assert total((3, 7, 11)) == pytest.approx(total((11, 3, 7)), rel=1e-12)


class TestDiscriminatorForward:
    def test_zero_head_scores_half(self):
        d = Discriminator.build(SMALL, seed=0)
        d.params["head.w"].data[:] = 0.0
        d.params["head.b"].data[:] = 0.0
        rng = np.random.default_rng(10)
        out = d.forward(Tensor(rng.uniform(0, 1, size=(3, 1, 32, 32))))
        np.testing.assert_allclose(out.data, 0.5)

    def test_scores_strictly_inside_unit_interval(self):
        d = Discriminator.build(SMALL, seed=1)
        rng = np.random.default_rng(11)
        for _ in range(10):
            out = d.forward(Tensor(rng.uniform(0, 1, size=(10, 1, 32, 32))))
            assert np.all(out.data > 0.0) and np.all(out.data < 1.0)

    @pytest.mark.parametrize("fusion_mode,iqa_off", [
        ("spatial", False), ("channel", False), ("none", False), ("none", True)])
    def test_variants_run_and_differentiate(self, fusion_mode, iqa_off):
        import dataclasses
        cfg = dataclasses.replace(SMALL, fusion_mode=fusion_mode, iqa_off=iqa_off)
        d = Discriminator.build(cfg, seed=2)
        rng = np.random.default_rng(12)
        x = Tensor(rng.uniform(0, 1, size=(2, 1, 32, 32)), requires_grad=True)
        with Tape():
            out = d.forward(x, training=True)
            ad.backward(ad.mean_all(out))
        assert x.grad is not None
        missing = [n for n, p in d.params.items() if p.grad is None]
        assert missing == []

    def test_finite_difference_probe(self):
        d = Discriminator.build(SMALL, seed=3)
        rng = np.random.default_rng(13)
        # keep probes off histogram-bin edges so the entropy map stays constant
        base = (np.floor(rng.uniform(0, 1, size=(1, 1, 32, 32)) * 16) + 0.5) / 16
        x = Tensor(base, requires_grad=True)
        probed = [x, d.params["b0.w"], d.params["res.conv2.w"], d.params["head.w"]]

        def fn(*_):
            return ad.mean_all(ad.square(d.forward(x, training=True)))

        assert ad.grad_check(fn, probed, probe_count=4) < 1e-5

    def test_input_shape_validation(self):
        d = Discriminator.build(SMALL, seed=4)
        with pytest.raises(ShapeError, match="expects"):
            d.forward(Tensor(np.zeros((2, 3, 32, 32))))
