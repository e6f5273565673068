import numpy as np
import pytest
import torch
import torch.nn.functional as F

from neuralmat.nets import (
    Decoder,
    Encoder,
    ModelConfig,
    adain,
    load_checkpoint,
    reparameterize,
    save_checkpoint,
)
from neuralmat.noise import NoiseField


class TestAdain:
    def test_own_statistics_identity(self):
        x = torch.randn(4, 8, 8, dtype=torch.float64)
        mu = x.mean(dim=(1, 2))
        sigma = torch.sqrt(x.var(dim=(1, 2), unbiased=False) + 1e-5)
        out = adain(x, mu, sigma)
        assert torch.allclose(out, x, atol=1e-10)

    def test_standardization(self):
        x = 3.0 + 2.0 * torch.randn(4, 16, 16, dtype=torch.float64)
        out = adain(x, torch.zeros(4), torch.ones(4))
        assert torch.allclose(out.mean(dim=(1, 2)), torch.zeros(4, dtype=torch.float64), atol=1e-10)

    def test_exact_target_statistics(self):
        x = torch.randn(4, 8, 8)
        out = adain(x, torch.full((4,), 2.0), torch.full((4,), 0.5))
        assert torch.allclose(out.mean(dim=(1, 2)), torch.full((4,), 2.0), atol=1e-4)
        assert torch.allclose(out.std(dim=(1, 2), unbiased=False), torch.full((4,), 0.5), atol=1e-4)

    def test_zero_variance_input_guarded(self):
        x = torch.full((2, 4, 4), 7.0)
        out = adain(x, torch.zeros(2), torch.ones(2))
        assert torch.isfinite(out).all()

    def test_rejects_non_positive_std(self):
        with pytest.raises(ValueError):
            adain(torch.randn(2, 4, 4), torch.zeros(2), torch.zeros(2))

    def test_frozen_stats_path(self):
        x = torch.randn(1, 3, 8, 8)
        stats = (torch.zeros(3), torch.ones(3))
        out = adain(x, torch.zeros(1, 3), torch.ones(1, 3), stats=stats)
        assert torch.allclose(out, x)


class TestStyleParams:
    def test_zero_code_returns_bias_row(self, tiny_config):
        dec = Decoder(tiny_config)
        z = torch.zeros(tiny_config.latent_dim)
        for i in range(dec.n_conditioned):
            table = dec.style.tables[i]
            mean, std = dec.style_params(z, i)
            c = table.shape[1] // 2
            assert torch.allclose(mean, table[-1, :c])
            assert torch.allclose(std, F.softplus(table[-1, c:]) + 1e-5)

    def test_output_length_splits_in_halves(self, tiny_config):
        dec = Decoder(tiny_config)
        z = torch.randn(tiny_config.latent_dim)
        for i, block in enumerate(dec.blocks):
            mean, std = dec.style_params(z, i)
            assert mean.shape == std.shape == (block.out_channels,)
            assert (std > 0).all()

    def test_affinity_on_raw_values(self, tiny_config):
        dec = Decoder(tiny_config)
        z = torch.randn(tiny_config.latent_dim)
        for i in (0, dec.n_conditioned - 1):
            r0 = dec.style.raw(torch.zeros_like(z), i)
            r1 = dec.style.raw(z, i)
            r2 = dec.style.raw(2 * z, i)
            assert torch.allclose(r2 - r1, r1 - r0, atol=1e-5)

    def test_invalid_layer_rejected(self, tiny_config):
        with pytest.raises(ValueError):
            Decoder(tiny_config).style_params(torch.zeros(tiny_config.latent_dim), 99)


class TestDecoder:
    def make(self, tiny_config):
        dec = Decoder(tiny_config)
        field = NoiseField(seed=1, channels=tiny_config.noise_channels)
        z = torch.randn(tiny_config.latent_dim, generator=torch.Generator().manual_seed(2))
        return dec, field, z

    def test_output_shape_and_channels(self, tiny_config):
        dec, field, z = self.make(tiny_config)
        maps = dec.decode(field.sample_crop((0, 0), (64, 48)), z)
        assert maps.resolution == (48, 64)
        assert maps.diffuse.shape == (48, 64, 3)

    def test_output_ranges_valid(self, tiny_config):
        dec, field, z = self.make(tiny_config)
        with torch.no_grad():
            maps = dec.decode(field.sample_crop((0, 0), (32, 32)), z)
        maps.validate_ranges()
        assert float(maps.height.abs().max()) <= tiny_config.height_max

    def test_determinism(self, tiny_config):
        dec, field, z = self.make(tiny_config)
        crop = field.sample_crop((0, 0), (32, 32))
        a, b = dec.decode(crop, z), dec.decode(crop, z)
        assert torch.equal(a.diffuse, b.diffuse)
        assert torch.equal(a.height, b.height)

    def test_distant_codes_give_different_maps(self, tiny_config, extractor):
        from neuralmat.stats import texture_distance
        from neuralmat.render import shade, CaptureGeometry

        dec, field, z = self.make(tiny_config)
        crop = field.sample_crop((0, 0), (64, 64))
        with torch.no_grad():
            m1 = dec.decode(crop, z)
            m2 = dec.decode(crop, z + 8.0)
            r1 = shade(m1, CaptureGeometry()).srgb.permute(2, 0, 1)
            r2 = shade(m2, CaptureGeometry()).srgb.permute(2, 0, 1)
        assert float(texture_distance(r1, r2, n_crops=2, seed=0, extractor=extractor)) > 0

    def test_non_multiple_of_16_rejected(self, tiny_config):
        dec, field, z = self.make(tiny_config)
        with pytest.raises(ValueError):
            dec.decode(field.sample_crop((0, 0), (40, 32)), z)

    def test_wrong_channel_count_rejected(self, tiny_config):
        dec, _, z = self.make(tiny_config)
        with pytest.raises(ValueError):
            dec.decode(np.zeros((3, 32, 32), dtype=np.float32), z)

    def test_decoder_only_mode(self, tiny_config):
        cfg = ModelConfig(**{**tiny_config.to_dict(), "decoder_only": True})
        dec = Decoder(cfg)
        field = NoiseField(seed=1, channels=cfg.noise_channels)
        maps = dec.decode(field.sample_crop((0, 0), (64, 48)), torch.randn(cfg.latent_dim))
        assert maps.resolution == (48, 64)
        assert dec.n_conditioned == 5

    def test_shift_equivariance_with_frozen_stats(self, tiny_config):
        # Stationarity by construction: no absolute position is read, so
        # 16-aligned offsets agree bitwise on the margin-trimmed interior.
        dec, field, z = self.make(tiny_config)
        ref = torch.as_tensor(field.sample_crop((0, 0), (128, 128)))
        stats = dec.reference_statistics(ref, z)
        size, margin = 192, 64
        with torch.no_grad():
            a = dec.forward(
                torch.as_tensor(field.sample_crop((0, 0), (size, size)))[None],
                z[None],
                frozen_stats=stats,
            )[0]
            b = dec.forward(
                torch.as_tensor(field.sample_crop((32, 16), (size, size)))[None],
                z[None],
                frozen_stats=stats,
            )[0]
        # Trimmed interiors cover field [64,128)^2 and [96,160)x[80,144);
        # their overlap is x in [96,128), y in [80,128).
        a_ov = a[:, 80:128, 96:128]
        b_ov = b[:, 80 - 16 : 128 - 16, 96 - 32 : 128 - 32]
        assert torch.equal(a_ov, b_ov)


class TestReparameterize:
    def test_collapses_to_mean_at_tiny_variance(self):
        mean = torch.randn(8)
        z = reparameterize(mean, torch.full((8,), -80.0), torch.Generator().manual_seed(0))
        assert torch.allclose(z, mean, atol=1e-6)

    def test_reproducible_with_fixed_seed(self):
        mean, logvar = torch.randn(8), torch.randn(8)
        a = reparameterize(mean, logvar, torch.Generator().manual_seed(5))
        b = reparameterize(mean, logvar, torch.Generator().manual_seed(5))
        assert torch.equal(a, b)

    def test_sample_variance_matches_log_variance(self):
        # Monte-Carlo oracle over 1e5 draws.
        gen = torch.Generator().manual_seed(7)
        logvar = torch.tensor([0.4, -0.8])
        draws = torch.stack(
            [reparameterize(torch.zeros(2), logvar, gen) for _ in range(100_000)]
        )
        measured = draws.var(dim=0, unbiased=False)
        assert torch.allclose(measured, torch.exp(logvar), rtol=0.02)


class TestEncoder:
    def test_deterministic_inference(self, tiny_checkpoint):
        enc = tiny_checkpoint.encoder
        enc.eval()
        img = torch.rand(3, 96, 128, generator=torch.Generator().manual_seed(0))
        with torch.no_grad():
            a = enc.encode(img)
            b = enc.encode(img)
        assert all(torch.equal(x, y) for x, y in zip(a, b))

    def test_output_dimensionality(self, tiny_checkpoint, tiny_config):
        enc = tiny_checkpoint.encoder
        with torch.no_grad():
            mean, logvar, angles = enc.encode(torch.rand(3, 96, 128))
        assert mean.shape == (tiny_config.latent_dim,)
        assert logvar.shape == (tiny_config.latent_dim,)
        assert angles.shape == (2,)
        assert (angles.abs() < torch.pi / 4).all()

    def test_distinct_images_distinct_codes(self, tiny_checkpoint, fixture_flash_images):
        enc = tiny_checkpoint.encoder
        enc.eval()
        with torch.no_grad():
            codes = [enc.encode(img)[0] for img in fixture_flash_images]
        for i in range(len(codes)):
            for j in range(i + 1, len(codes)):
                assert not torch.allclose(codes[i], codes[j])

    def test_wrong_resolution_rejected(self, tiny_checkpoint):
        with pytest.raises(ValueError):
            tiny_checkpoint.encoder.encode(torch.rand(3, 64, 64))

    def test_resnet50_backbone_constructs(self):
        cfg = ModelConfig(latent_dim=8, input_size=(64, 64))
        enc = Encoder(cfg)
        with torch.no_grad():
            mean, logvar, angles = enc.encode(torch.rand(3, 64, 64))
        assert mean.shape == (8,)


class TestCheckpoint:
    def test_round_trip_identical_decode(self, tmp_path, tiny_config):
        enc, dec = Encoder(tiny_config), Decoder(tiny_config)
        save_checkpoint(tmp_path / "ck", enc, dec, tiny_config, step=3)
        loaded = load_checkpoint(tmp_path / "ck")
        assert loaded.step == 3
        field = NoiseField(seed=0, channels=tiny_config.noise_channels)
        crop = field.sample_crop((0, 0), (32, 32))
        z = torch.randn(tiny_config.latent_dim, generator=torch.Generator().manual_seed(1))
        with torch.no_grad():
            a = dec.decode(crop, z)
            b = loaded.decoder.decode(crop, z)
        assert torch.equal(a.diffuse, b.diffuse)
        assert torch.equal(a.height, b.height)

    def test_checksum_verification(self, tmp_path, tiny_config):
        save_checkpoint(tmp_path / "ck", Encoder(tiny_config), Decoder(tiny_config), tiny_config)
        (tmp_path / "ck" / "decoder.pt").write_bytes(b"corrupted")
        with pytest.raises(ValueError, match="checksum"):
            load_checkpoint(tmp_path / "ck")

    def test_manifest_records_architecture(self, tmp_path, tiny_config):
        import json

        save_checkpoint(tmp_path / "ck", Encoder(tiny_config), Decoder(tiny_config), tiny_config)
        manifest = json.loads((tmp_path / "ck" / "manifest.json").read_text())
        assert manifest["schema"] == 1
        assert manifest["model"]["latent_dim"] == tiny_config.latent_dim
        assert tuple(manifest["model"]["widths"]) == tiny_config.widths
        assert manifest["model"]["alpha_mode"] == tiny_config.alpha_mode
