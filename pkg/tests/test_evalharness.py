import numpy as np
import pytest
import torch

from neuralmat.evalharness import (
    BenchmarkReport,
    diversity,
    load_fixture_dir,
    relight_benchmark,
    sample_cap_lights,
    style_error,
    synthetic_fixture_set,
    write_report,
    xyz_histogram_l1,
)
from neuralmat.render import MaterialMaps
from neuralmat import imgio


class TestStyleError:
    def test_identical_images_zero(self, extractor):
        img = torch.rand(3, 64, 64)
        assert style_error(img, img, extractor) == 0.0

    def test_symmetry(self, extractor):
        a, b = torch.rand(3, 64, 64), torch.rand(3, 64, 64)
        assert style_error(a, b, extractor) == pytest.approx(style_error(b, a, extractor), rel=1e-6)

    def test_blend_monotonicity_spot_check(self, extractor, fixture_flash_images):
        # Report-style spot check on a fixed fixture pair (not a theorem).
        a, b = fixture_flash_images[0], fixture_flash_images[1]
        half = 0.5 * (a + b)
        assert style_error(a, half, extractor) <= style_error(a, b, extractor)

    def test_size_mismatch_rejected(self, extractor):
        with pytest.raises(ValueError):
            style_error(torch.rand(3, 64, 64), torch.rand(3, 32, 32), extractor)


class TestDiversity:
    def test_identical_realizations_exactly_zero(self, extractor):
        img = torch.rand(3, 48, 48)
        assert diversity([img, img.clone(), img.clone()], extractor) == 0.0

    def test_permutation_invariance(self, extractor):
        imgs = [torch.rand(3, 48, 48) for _ in range(3)]
        a = diversity(imgs, extractor)
        b = diversity([imgs[2], imgs[0], imgs[1]], extractor)
        assert a == pytest.approx(b, rel=1e-9)

    def test_independent_noise_positive(self, extractor):
        gen = torch.Generator().manual_seed(0)
        imgs = [torch.rand(3, 48, 48, generator=gen) for _ in range(2)]
        assert diversity(imgs, extractor) > 0.0

    def test_fewer_than_two_rejected(self, extractor):
        with pytest.raises(ValueError):
            diversity([torch.rand(3, 32, 32)], extractor)


class TestXyzHistogram:
    def test_identical_zero(self):
        img = torch.rand(3, 32, 32)
        assert xyz_histogram_l1(img, img) == 0.0

    def test_black_vs_white_hand_binned_oracle(self):
        # All mass in disjoint bins on every axis -> per-axis L1 = 2, mean = 2.
        black, white = torch.zeros(3, 16, 16), torch.ones(3, 16, 16)
        assert xyz_histogram_l1(black, white) == pytest.approx(2.0)

    def test_bounded_by_two(self):
        rng = torch.Generator().manual_seed(1)
        for _ in range(5):
            a = torch.rand(3, 16, 16, generator=rng)
            b = torch.rand(3, 16, 16, generator=rng)
            assert 0.0 <= xyz_histogram_l1(a, b) <= 2.0

    def test_resolution_mismatch_rejected(self):
        with pytest.raises(ValueError):
            xyz_histogram_l1(torch.rand(3, 16, 16), torch.rand(3, 8, 8))


class TestCapLights:
    def test_deterministic(self):
        assert sample_cap_lights(5, seed=3) == sample_cap_lights(5, seed=3)

    def test_on_cap_at_fixed_distance(self):
        import math

        for x, y, z in sample_cap_lights(32, seed=1):
            dx, dy, dz = x, y, z + 1.0  # relative to plane center (0,0,-1)
            r = math.sqrt(dx * dx + dy * dy + dz * dz)
            assert r == pytest.approx(2.0, rel=1e-9)
            cos_t = dz / r
            assert cos_t >= math.cos(math.radians(60.0)) - 1e-9


class TestRelightBenchmark:
    def test_ground_truth_passthrough_near_zero(self, extractor, fixture_materials):
        report = relight_benchmark(fixture_materials, None, n_lights=3, seed=0, extractor=extractor)
        assert report.aggregate["style_relit"] < 1e-3
        assert report.aggregate["style_flash"] < 1e-3
        assert report.aggregate["diversity"] == 0.0

    def test_fixed_seed_reproducible(self, extractor, fixture_materials):
        a = relight_benchmark(fixture_materials[:2], None, n_lights=2, seed=5, extractor=extractor)
        b = relight_benchmark(fixture_materials[:2], None, n_lights=2, seed=5, extractor=extractor)
        assert a.metadata["lights"] == b.metadata["lights"]
        assert a.per_material == b.per_material

    def test_constant_gray_strictly_worse_everywhere(self, extractor, fixture_materials):
        h, w = fixture_materials[0][1].resolution
        gray = MaterialMaps(
            torch.full((h, w, 3), 0.5),
            torch.full((h, w, 1), 0.04),
            torch.full((h, w, 1), 0.5),
            torch.zeros(h, w, 1),
        )
        truth = relight_benchmark(fixture_materials, None, n_lights=2, seed=1, extractor=extractor)
        baseline = relight_benchmark(fixture_materials, gray, n_lights=2, seed=1, extractor=extractor)
        for gt_row, base_row in zip(truth.per_material, baseline.per_material):
            assert base_row["style_relit"] > gt_row["style_relit"]
            assert base_row["style_flash"] > gt_row["style_flash"]

    def test_empty_fixture_list_rejected(self, extractor):
        with pytest.raises(ValueError):
            relight_benchmark([], None, extractor=extractor)

    def test_report_serialization(self, extractor, fixture_materials, tmp_path):
        report = relight_benchmark(fixture_materials[:1], None, n_lights=1, seed=0, extractor=extractor)
        json_path, csv_path = write_report(report, tmp_path)
        assert json_path.exists() and csv_path.exists()
        table = report.to_markdown()
        assert "style_flash" in table and "fixture-" in table


class TestFixtures:
    def test_synthetic_set_is_valid_and_varied(self):
        fixtures = synthetic_fixture_set(4, (48, 64), seed=9)
        assert len(fixtures) == 4
        for fid, maps in fixtures:
            maps.validate_ranges()
            assert maps.resolution == (48, 64)
        d0 = fixtures[0][1].diffuse
        d1 = fixtures[1][1].diffuse
        assert float((d0 - d1).abs().mean()) > 0.01

    def test_directory_ingest_round_trip(self, tmp_path):
        _, maps = synthetic_fixture_set(1, (32, 32), seed=2)[0]
        d = tmp_path / "mat01"
        imgio.save_png16(d / "diffuse.png", maps.diffuse)
        imgio.save_png16(d / "specular.png", maps.specular[:, :, 0])
        imgio.save_png16(d / "roughness.png", maps.roughness[:, :, 0])
        imgio.save_png16(d / "height.png", (maps.height[:, :, 0] + 2.0) / 4.0)
        name, loaded = load_fixture_dir(d)
        assert name == "mat01"
        assert float((loaded.diffuse - maps.diffuse).abs().max()) < 1e-4
        loaded.validate_ranges()

    def test_missing_diffuse_rejected(self, tmp_path):
        with pytest.raises(IOError):
            load_fixture_dir(tmp_path)
