import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from neuralmat.features import FeatureExtractor, NATIVE_SIZE
from neuralmat.stats import (
    CropSpec,
    describe,
    descriptor_distance,
    extract_patch,
    gram,
    power_spectrum,
    sample_crop_specs,
    texture_distance,
)


class TestFeatureExtractor:
    def test_deterministic_seeded_init(self):
        a = FeatureExtractor(width_mult=0.25, seed=911)
        b = FeatureExtractor(width_mult=0.25, seed=911)
        assert a.fingerprint() == b.fingerprint()
        assert a.fingerprint() != FeatureExtractor(width_mult=0.25, seed=912).fingerprint()

    def test_weights_file_round_trip(self, tmp_path, extractor):
        path = tmp_path / "weights.pt"
        sha = extractor.save_weights(path)
        assert len(sha) == 64
        loaded = FeatureExtractor(width_mult=0.25, weights_file=str(path))
        assert loaded.fingerprint() == extractor.fingerprint()
        assert loaded.weights_source() == str(path)

    def test_tap_shapes_follow_vgg_plan(self, extractor):
        taps = extractor(torch.rand(3, 224, 224))
        assert [t.shape[0] for t in taps] == list(extractor.tap_channels)
        assert [t.shape[-1] for t in taps] == [224, 112, 56, 28, 14]

    def test_zero_image_zero_features(self, extractor):
        taps = extractor(torch.zeros(3, 64, 64))
        assert all(float(t.abs().max()) == 0.0 for t in taps)


class TestExtractPatch:
    def test_zero_image_zero_descriptor_stats(self, extractor):
        desc = describe(torch.zeros(3, 64, 64), CropSpec(0.5, 0.5, 1.0), extractor)
        assert all(float(g.abs().max()) == 0.0 for g in desc.grams)

    def test_determinism(self, extractor):
        img = torch.rand(3, 96, 96)
        crop = CropSpec(0.3, 0.7, 0.5)
        a = extract_patch(img, crop, extractor)
        b = extract_patch(img, crop, extractor)
        assert all(torch.equal(x, y) for x, y in zip(a, b))

    def test_native_scale_crop_bypasses_resampling(self, extractor):
        # A scale-1 center crop of a 224-native image must equal direct extraction.
        img = torch.rand(3, NATIVE_SIZE, NATIVE_SIZE)
        via_crop = extract_patch(img, CropSpec(0.5, 0.5, 1.0), extractor)
        direct = extractor(img)
        assert all(torch.equal(a, b) for a, b in zip(via_crop, direct))

    def test_small_image_rejected(self, extractor):
        with pytest.raises(ValueError):
            extract_patch(torch.rand(3, 8, 8), CropSpec(0.5, 0.5, 1.0), extractor)

    def test_crop_clamped_inside_image(self, extractor):
        # Extreme centers and scales must still produce valid features.
        img = torch.rand(3, 48, 64)
        for spec in (CropSpec(0.0, 0.0, 8.0), CropSpec(1.0, 1.0, 0.1)):
            taps = extract_patch(img, spec, extractor)
            assert all(torch.isfinite(t).all() for t in taps)

    def test_scale_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            CropSpec(0.5, 0.5, 9.0)


class TestGram:
    def test_zero_features(self):
        assert torch.equal(gram(torch.zeros(4, 5, 5)), torch.zeros(4, 4))

    def test_single_channel_constant(self):
        g = gram(torch.full((1, 3, 3), 2.0))
        assert float(g[0, 0]) == pytest.approx(4.0)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1))
    def test_spatial_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        f = torch.tensor(rng.standard_normal((3, 4, 4)))
        perm = rng.permutation(16)
        fp = f.reshape(3, -1)[:, perm].reshape(3, 4, 4)
        assert torch.allclose(gram(f), gram(fp), atol=1e-12)

    def test_symmetric_positive_semidefinite(self):
        f = torch.randn(6, 9, 9, dtype=torch.float64)
        g = gram(f)
        assert torch.allclose(g, g.T)
        assert (torch.linalg.eigvalsh(g) > -1e-10).all()


class TestPowerSpectrum:
    def test_constant_map_all_energy_in_dc(self):
        s = power_spectrum(torch.full((2, 8, 8), 3.0, dtype=torch.float64))
        assert float(s[0]) == pytest.approx(9.0)
        assert float(s[1:].abs().sum()) == pytest.approx(0.0, abs=1e-12)

    def test_circular_shift_invariance(self):
        f = torch.randn(3, 16, 16, dtype=torch.float64)
        shifted = torch.roll(f, shifts=(5, 3), dims=(1, 2))
        assert torch.allclose(power_spectrum(f), power_spectrum(shifted), atol=1e-10)

    def test_parseval(self):
        # Oracle: with the 1/(HW)^2 convention the bins sum to mean(f^2).
        f = torch.randn(4, 12, 12, dtype=torch.float64)
        assert float(power_spectrum(f).sum()) == pytest.approx(float((f**2).mean()), rel=1e-10)

    def test_small_maps_rejected(self):
        with pytest.raises(ValueError):
            power_spectrum(torch.zeros(1, 2, 8))


class TestTextureDistance:
    def test_identical_images_zero(self, extractor):
        img = torch.rand(3, 64, 64)
        assert float(texture_distance(img, img, n_crops=3, seed=0, extractor=extractor)) == 0.0

    def test_symmetry_under_shared_crops(self, extractor):
        a, b = torch.rand(3, 64, 64), torch.rand(3, 64, 64)
        d_ab = texture_distance(a, b, n_crops=3, seed=5, extractor=extractor)
        d_ba = texture_distance(b, a, n_crops=3, seed=5, extractor=extractor)
        assert float(d_ab) == pytest.approx(float(d_ba), rel=1e-6)

    def test_noise_vs_constant_exceeds_noise_vs_noise(self, extractor):
        gen = torch.Generator().manual_seed(0)
        noise_a = torch.rand(3, 64, 64, generator=gen)
        noise_b = torch.rand(3, 64, 64, generator=gen)
        gray = torch.full((3, 64, 64), 0.5)
        d_noise_gray = float(texture_distance(noise_a, gray, n_crops=4, seed=1, extractor=extractor))
        d_noise_noise = float(texture_distance(noise_a, noise_b, n_crops=4, seed=1, extractor=extractor))
        assert d_noise_gray > 0
        assert d_noise_gray > d_noise_noise

    def test_deterministic_given_seed(self, extractor):
        a, b = torch.rand(3, 64, 64), torch.rand(3, 64, 64)
        d1 = float(texture_distance(a, b, n_crops=2, seed=9, extractor=extractor))
        d2 = float(texture_distance(a, b, n_crops=2, seed=9, extractor=extractor))
        assert d1 == d2

    def test_invalid_crop_count_rejected(self, extractor):
        with pytest.raises(ValueError):
            texture_distance(torch.rand(3, 32, 32), torch.rand(3, 32, 32), n_crops=0, extractor=extractor)

    def test_single_scale_full_crop_reduction(self, extractor):
        # With scale pinned so the crop spans the image, the loss reduces to
        # the plain single-scale Gram+spectrum L1 between the two images.
        a, b = torch.rand(3, NATIVE_SIZE, NATIVE_SIZE), torch.rand(3, NATIVE_SIZE, NATIVE_SIZE)
        spec = CropSpec(0.5, 0.5, 1.0)
        expected = descriptor_distance(describe(a, spec, extractor), describe(b, spec, extractor))
        got = texture_distance(a, b, n_crops=1, seed=0, extractor=extractor, scale_range=(1.0, 1.0))
        assert float(got) == pytest.approx(float(expected), rel=1e-6)

    def test_fourier_switch_changes_value(self, extractor):
        a = torch.rand(3, 64, 64)
        b = a.roll(shifts=7, dims=2) * 0.9 + 0.05
        with_f = float(texture_distance(a, b, n_crops=2, seed=3, extractor=extractor, fourier=True))
        without = float(texture_distance(a, b, n_crops=2, seed=3, extractor=extractor, fourier=False))
        assert with_f != without

    def test_gradients_flow_to_images(self, extractor):
        a = torch.rand(3, 48, 48, requires_grad=True)
        b = torch.rand(3, 48, 48)
        texture_distance(a, b, n_crops=1, seed=0, extractor=extractor).backward()
        assert a.grad is not None and torch.isfinite(a.grad).all()


def test_crop_spec_sampling_log_uniform_and_deterministic():
    specs_a = sample_crop_specs(64, seed=4)
    specs_b = sample_crop_specs(64, seed=4)
    assert specs_a == specs_b
    scales = np.array([s.scale for s in specs_a])
    assert scales.min() >= 0.1 and scales.max() <= 8.0
    # Log-uniform: about half the mass below the geometric midpoint sqrt(0.8).
    below = (scales < np.sqrt(0.1 * 8.0)).mean()
    assert 0.25 < below < 0.75
