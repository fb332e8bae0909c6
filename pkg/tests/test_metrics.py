"""Metric oracles: PSNR closed forms, SSIM, spectra, HFRR, wavelet MAE."""

import math

import numpy as np
import pytest

from qwdgan.data import phantom
from qwdgan.errors import NumericError, ShapeError
from qwdgan.metrics import (MetricsReport, ImageMetrics, gaussian_blur,
                            high_frequency_energy, hfrr, power_spectrum, psnr,
                            radial_spectrum, ssim, wavelet_mae)


class TestPsnr:
    def test_identical_images_infinite(self):
        x = np.random.default_rng(0).uniform(0, 1, size=(16, 16))
        assert psnr(x, x.copy()) == math.inf

    def test_constant_offset_closed_form(self):
        # 8-bit images differing by 16 everywhere: MSE=256,
        # PSNR = 10*log10(255^2/256) = 24.0487 dB (to the stated 1e-3)
        y = np.full((32, 32), 100.0)
        yhat = y + 16.0
        value = psnr(yhat, y, peak=255.0)
        assert value == pytest.approx(10 * math.log10(255.0 ** 2 / 256.0), rel=1e-12)
        assert abs(value - 24.0487) < 1e-3

    def test_strictly_decreasing_in_noise_amplitude(self):
        rng = np.random.default_rng(1)
        clean = rng.uniform(0.2, 0.8, size=(64, 64))
        noise = rng.normal(0, 1, size=clean.shape)
        values = [psnr(clean + amp * noise, clean)
                  for amp in (0.01, 0.02, 0.05, 0.1, 0.2)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            psnr(np.zeros((4, 4)), np.zeros((8, 8)))


class TestSsim:
    def test_identical_is_exactly_one(self):
        x = np.random.default_rng(2).uniform(0, 1, size=(32, 32))
        assert ssim(x, x.copy()) == 1.0

    def test_inverted_binary_image_negative(self):
        rng = np.random.default_rng(3)
        x = (rng.uniform(0, 1, size=(32, 32)) > 0.5).astype(float)
        assert ssim(x, 1.0 - x) < 0.0

    def test_symmetric(self):
        rng = np.random.default_rng(4)
        a = rng.uniform(0, 1, size=(32, 32))
        b = rng.uniform(0, 1, size=(32, 32))
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_window_oracle_on_constant_pair(self):
        # constant images: luminance term only -> (2ab+c1)/(a^2+b^2+c1)
        a = np.full((16, 16), 0.4)
        b = np.full((16, 16), 0.6)
        c1 = (0.01) ** 2
        expected = (2 * 0.4 * 0.6 + c1) / (0.4 ** 2 + 0.6 ** 2 + c1)
        assert ssim(a, b) == pytest.approx(expected, rel=1e-12)

    def test_noise_lowers_ssim(self):
        rng = np.random.default_rng(5)
        clean = phantom("mixed", 64, seed=1)
        noisy = np.clip(clean + rng.normal(0, 0.2, clean.shape), 0, 1)
        assert ssim(noisy, clean) < ssim(clean, clean)


class TestRadialSpectrum:
    def test_constant_image_dc_only(self):
        spec = radial_spectrum(np.full((32, 32), 0.7), n_bins=8)
        assert spec.power[0] > 0.0
        np.testing.assert_allclose(spec.power[1:], 0.0, atol=1e-18)

    def test_pure_sinusoid_dominant_annulus(self):
        n = 64
        f = 8.0 / n  # exactly on a DFT bin
        xx = np.arange(n)
        img = 0.5 + 0.4 * np.sin(2 * math.pi * f * xx)[None, :] * np.ones((n, 1))
        spec = radial_spectrum(img, n_bins=16)
        ac = spec.power.copy()
        ac[0] = 0.0  # ignore the mean level
        dominant = spec.rho[int(np.argmax(ac))]
        bin_width = 0.5 / 16
        assert abs(dominant - f) <= bin_width

    def test_white_noise_flat_profile(self):
        rng = np.random.default_rng(6)
        n_bins = 12
        profiles = []
        for _ in range(20):
            noise = rng.normal(0, 1, size=(64, 64))
            profiles.append(radial_spectrum(noise, n_bins=n_bins).power)
        mean_profile = np.mean(profiles, axis=0)
        flat = mean_profile.mean()
        assert np.abs(mean_profile - flat).max() / flat < 0.10

    def test_parseval_total_power(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(64, 64))
        power, _ = power_spectrum(x)
        energy = float((x ** 2).sum())
        assert abs(power.sum() - energy) / energy < 1e-8

    def test_bins_monotone_and_power_nonnegative(self):
        spec = radial_spectrum(phantom("edges", 64, seed=2), n_bins=20)
        assert np.all(np.diff(spec.rho) > 0)
        assert np.all(spec.power >= 0.0)
        assert spec.counts.sum() > 0

    def test_non_square_non_pow2_padded(self):
        rng = np.random.default_rng(8)
        spec = radial_spectrum(rng.normal(size=(48, 33)), n_bins=8)
        assert spec.power.shape == (8,)


class TestHfrr:
    def test_identical_exactly_one(self):
        x = phantom("filaments", 64, seed=3)
        assert abs(hfrr(x, x.copy()) - 1.0) <= 1e-12

    def test_blur_below_one_noise_above_one(self):
        rng = np.random.default_rng(9)
        for seed in range(5):
            clean = phantom(("filaments", "blobs", "edges", "mixed")[seed % 4],
                            64, seed=seed)
            assert hfrr(gaussian_blur(clean, 1.0), clean) < 1.0
            noisy = clean + rng.normal(0, 0.1, clean.shape)
            assert hfrr(noisy, clean) > 1.0

    def test_blur_value_matches_spectral_oracle(self):
        clean = phantom("mixed", 64, seed=4)
        blurred = gaussian_blur(clean, 1.0)
        expected = high_frequency_energy(blurred) / high_frequency_energy(clean)
        assert hfrr(blurred, clean) == pytest.approx(expected, rel=1e-12)

    def test_scale_invariance(self):
        x = phantom("edges", 64, seed=5)
        y = gaussian_blur(x, 0.8)
        assert hfrr(3.7 * y, 3.7 * x) == pytest.approx(hfrr(y, x), abs=1e-12)

    def test_degenerate_reference_rejected(self):
        with pytest.raises(NumericError, match="cutoff"):
            hfrr(np.ones((32, 32)), np.ones((32, 32)))

    def test_cutoff_monotone_behavior_for_blur(self):
        clean = phantom("filaments", 64, seed=6)
        blurred = gaussian_blur(clean, 1.0)
        # a Gaussian blur removes proportionally more energy at higher cutoffs
        assert hfrr(blurred, clean, cutoff=0.35) < hfrr(blurred, clean, cutoff=0.15)


class TestWaveletMae:
    def test_identical_zero(self):
        x = phantom("blobs", 32, seed=7)
        assert wavelet_mae(x, x.copy()) == 0.0

    def test_constant_offset_scaling(self):
        # offset c shifts only the final LL band, whose coefficients gain 2
        # per level; the LL band holds 1/4^J of the coefficients
        rng = np.random.default_rng(10)
        x = rng.uniform(0, 1, size=(32, 32))
        c = 0.2
        for levels in (1, 2, 3):
            expected = c * (2 ** levels) / (4 ** levels)
            assert wavelet_mae(x + c, x, levels=levels) == \
                pytest.approx(expected, abs=1e-12)

    def test_blur_positive(self):
        x = phantom("filaments", 64, seed=8)
        assert wavelet_mae(gaussian_blur(x, 1.0), x) > 0.0


class TestGaussianBlur:
    def test_preserves_constant(self):
        np.testing.assert_allclose(gaussian_blur(np.full((16, 16), 0.3), 1.5), 0.3)

    def test_reduces_variance(self):
        rng = np.random.default_rng(11)
        x = rng.uniform(0, 1, size=(64, 64))
        assert gaussian_blur(x, 1.0).var() < x.var()

    def test_sigma_zero_identity(self):
        x = np.random.default_rng(12).uniform(0, 1, size=(8, 8))
        np.testing.assert_array_equal(gaussian_blur(x, 0.0), x)


class TestReport:
    def test_csv_round_trip(self, tmp_path):
        report = MetricsReport()
        report.add(ImageMetrics("img1", "model", "gaussian:sigma=0.1", 30.0, 0.9, 1.01, 0.02))
        report.add(ImageMetrics("img1", "noisy", "gaussian:sigma=0.1", 20.0, 0.5, 5.0, 0.07))
        path = tmp_path / "metrics.csv"
        report.write_csv(path)
        from qwdgan.metrics import read_csv_rows
        rows = read_csv_rows(path)
        assert len(rows) == 2
        assert rows[0]["method"] == "model"
        assert float(rows[0]["psnr_db"]) == pytest.approx(30.0)

    def test_aggregate_means(self):
        report = MetricsReport()
        for k, p in enumerate((20.0, 30.0)):
            report.add(ImageMetrics(f"img{k}", "model", "x", p, 0.5, 1.0, 0.01))
        assert report.aggregate("model")["psnr_db"] == pytest.approx(25.0)
        assert report.methods() == ["model"]
