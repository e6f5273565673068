"""Encoder and noise-conditioned decoder.

The encoder maps a flash photo to a latent posterior (mean, log-variance)
plus two plane-alignment angles. The decoder is a U-Net that turns a crop of
the infinite noise field into six-channel material maps; every convolution is
followed by adaptive instance normalization whose per-channel targets are
affine functions of the latent code, so the network never sees absolute
position and stays stationary by construction.
"""

import hashlib
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .render import MaterialMaps, ROUGHNESS_MIN

ADAIN_EPS = 1e-5
STYLE_STD_EPS = 1e-5
POOL_LEVELS = 4
GRID = 2**POOL_LEVELS  # decode sizes must be multiples of this
CHECKPOINT_SCHEMA = 1


@dataclass
class ModelConfig:
    """Architecture hyperparameters shared by checkpoints and materials."""

    latent_dim: int = 64
    noise_channels: int = 8
    widths: tuple[int, ...] = (32, 64, 128, 256, 256)
    input_size: tuple[int, int] = (384, 512)  # (H, W) of encoder input
    alpha_mode: str = "squared"
    height_max: float = 2.0
    encoder_backbone: str = "resnet50"
    decoder_only: bool = False
    reference_size: int = 512
    init_seed: int = 0

    def __post_init__(self) -> None:
        self.widths = tuple(self.widths)
        self.input_size = tuple(self.input_size)
        if len(self.widths) != POOL_LEVELS + 1:
            raise ValueError(f"widths must have {POOL_LEVELS + 1} entries, got {self.widths}")
        if self.alpha_mode not in ("squared", "linear"):
            raise ValueError(f"unknown alpha_mode {self.alpha_mode!r}")
        if self.encoder_backbone not in ("resnet50", "tiny"):
            raise ValueError(f"unknown encoder_backbone {self.encoder_backbone!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        d["input_size"] = list(self.input_size)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def adain(
    features: torch.Tensor,
    target_mean: torch.Tensor,
    target_std: torch.Tensor,
    stats: tuple[torch.Tensor, torch.Tensor] | None = None,
    eps: float = ADAIN_EPS,
) -> torch.Tensor:
    """Remaps per-channel feature statistics to the given targets.

    out = (sigma / sigma_F)(x - mu_F) + mu, with (mu_F, sigma_F) measured over
    the spatial dims of each instance, or taken from ``stats`` when frozen.
    Accepts (C, H, W) or (B, C, H, W); targets broadcast per channel.
    """
    target_mean = torch.as_tensor(target_mean)
    target_std = torch.as_tensor(target_std)
    if (target_std <= 0).any():
        raise ValueError("target_std must be strictly positive")
    squeeze = features.ndim == 3
    x = features[None] if squeeze else features
    if stats is None:
        mu = x.mean(dim=(-2, -1), keepdim=True)
        sigma = torch.sqrt(x.var(dim=(-2, -1), unbiased=False, keepdim=True) + eps)
    else:
        mu, sigma = stats
        mu = mu.reshape(1, -1, 1, 1)
        sigma = sigma.reshape(1, -1, 1, 1)
    mean_b = target_mean.reshape(-1, target_mean.shape[-1], 1, 1)
    std_b = target_std.reshape(-1, target_std.shape[-1], 1, 1)
    out = (x - mu) / sigma * std_b + mean_b
    return out[0] if squeeze else out


def measure_stats(features: torch.Tensor, eps: float = ADAIN_EPS) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-channel (mean, std) over batch and spatial dims, for freezing."""
    dims = (0, -2, -1) if features.ndim == 4 else (-2, -1)
    mu = features.mean(dim=dims)
    sigma = torch.sqrt(features.var(dim=dims, unbiased=False) + eps)
    return mu.detach(), sigma.detach()


class StyleMapper(nn.Module):
    """Per-layer affine maps from the latent code to AdaIN targets.

    One (d+1) x (2 c_i) matrix per conditioned convolution; the extra input
    row is the homogeneous (bias) coordinate.
    """

    def __init__(self, latent_dim: int, channel_plan: list[int], generator: torch.Generator):
        super().__init__()
        self.latent_dim = latent_dim
        self.channel_plan = list(channel_plan)
        tables = []
        for c in channel_plan:
            t = torch.empty(latent_dim + 1, 2 * c).normal_(0.0, 0.02, generator=generator)
            # Bias the raw-std half so initial targets have std ~1.
            t[latent_dim, c:] += 0.5413248546
            tables.append(nn.Parameter(t))
        self.tables = nn.ParameterList(tables)

    def raw(self, z: torch.Tensor, layer_index: int) -> torch.Tensor:
        """Pre-squash affine output, shape (..., 2 c_i)."""
        ones = torch.ones(*z.shape[:-1], 1, dtype=z.dtype, device=z.device)
        return torch.cat([z, ones], dim=-1) @ self.tables[layer_index]

    def style_params(self, z: torch.Tensor, layer_index: int) -> tuple[torch.Tensor, torch.Tensor]:
        """(target_mean, target_std) for the indexed layer; std is softplus-positive."""
        if not 0 <= layer_index < len(self.tables):
            raise ValueError(f"layer_index {layer_index} out of range")
        out = self.raw(z, layer_index)
        c = out.shape[-1] // 2
        mean, raw_std = out[..., :c], out[..., c:]
        return mean, F.softplus(raw_std) + STYLE_STD_EPS


class _CondConv(nn.Module):
    """3x3 conv + ReLU + AdaIN (zero padding)."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.out_channels = out_ch

    def forward(self, x, style, frozen=None, record=None):
        y = F.relu(self.conv(x))
        if record is not None:
            record.append(measure_stats(y))
        return adain(y, style[0], style[1], stats=frozen)


class Decoder(nn.Module):
    """Noise-to-material-maps U-Net with AdaIN conditioning on the latent code."""

    def __init__(self, config: ModelConfig, generator: torch.Generator | None = None):
        super().__init__()
        self.config = config
        w = config.widths
        nc = config.noise_channels
        if config.decoder_only:
            plan_in = [nc, w[4], w[3], w[2], w[1]]
            plan_out = [w[4], w[3], w[2], w[1], w[0]]
        else:
            down_in = [nc, w[0], w[1], w[2], w[3]]
            down_out = [w[0], w[1], w[2], w[3], w[4]]
            up_in = [w[4] + w[3], w[3] + w[2], w[2] + w[1], w[1] + w[0]]
            up_out = [w[3], w[2], w[1], w[0]]
            plan_in = down_in + up_in
            plan_out = down_out + up_out
        self.blocks = nn.ModuleList(_CondConv(i, o) for i, o in zip(plan_in, plan_out))
        self.head = nn.Conv2d(w[0], 6, 3, padding=1)
        gen = generator if generator is not None else torch.Generator().manual_seed(config.init_seed)
        self.style = StyleMapper(config.latent_dim, plan_out, gen)
        self._seeded_init(gen)

    def _seeded_init(self, gen: torch.Generator) -> None:
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
                m.weight.data.normal_(0.0, (2.0 / fan_in) ** 0.5, generator=gen)
                if m.bias is not None:
                    m.bias.data.zero_()

    @property
    def n_conditioned(self) -> int:
        return len(self.blocks)

    def style_params(self, z: torch.Tensor, layer_index: int):
        return self.style.style_params(z, layer_index)

    def _run(self, noise, z, frozen_stats=None, record_stats=False):
        styles = [self.style.style_params(z, i) for i in range(len(self.blocks))]
        frozen = frozen_stats if frozen_stats is not None else [None] * len(self.blocks)
        record = [] if record_stats else None

        def block(i, x):
            rec = None
            if record is not None:
                rec = record
            return self.blocks[i](x, styles[i], frozen=frozen[i], record=rec)

        if self.config.decoder_only:
            x = noise[:, :, ::GRID, ::GRID]
            for i in range(len(self.blocks)):
                x = block(i, x)
                if i < len(self.blocks) - 1:
                    x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        else:
            skips = []
            x = noise
            for i in range(POOL_LEVELS):
                x = block(i, x)
                skips.append(x)
                x = F.max_pool2d(x, 2)
            x = block(POOL_LEVELS, x)
            for j in range(POOL_LEVELS):
                x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
                x = torch.cat([x, skips[-1 - j]], dim=1)
                x = block(POOL_LEVELS + 1 + j, x)
        return self.head(x), record

    def forward(
        self,
        noise: torch.Tensor,
        z: torch.Tensor,
        frozen_stats: list[tuple[torch.Tensor, torch.Tensor]] | None = None,
    ) -> torch.Tensor:
        """Raw (B, 6, H, W) map channels for batched noise (B, C, H, W)."""
        _check_decode_size(noise.shape[-2], noise.shape[-1])
        out, _ = self._run(noise, z, frozen_stats=frozen_stats)
        return out

    def reference_statistics(
        self, noise: torch.Tensor, z: torch.Tensor
    ) -> list[tuple[torch.Tensor, torch.Tensor]]:
        """Per-layer AdaIN input statistics measured on a reference crop."""
        _check_decode_size(noise.shape[-2], noise.shape[-1])
        with torch.no_grad():
            _, record = self._run(noise[None] if noise.ndim == 3 else noise, z.reshape(1, -1), record_stats=True)
        return record

    def decode(
        self,
        noise_crop,
        z: torch.Tensor,
        frozen_stats: list[tuple[torch.Tensor, torch.Tensor]] | None = None,
    ) -> MaterialMaps:
        """Material maps for a single noise crop (C, H, W)."""
        noise = torch.as_tensor(np.asarray(noise_crop), dtype=torch.float32)
        if noise.ndim != 3 or noise.shape[0] != self.config.noise_channels:
            raise ValueError(
                f"noise crop must be ({self.config.noise_channels}, H, W), got {tuple(noise.shape)}"
            )
        raw = self.forward(noise[None], z.reshape(1, -1), frozen_stats=frozen_stats)[0]
        return squash_to_maps(raw, self.config.height_max)


def squash_to_maps(raw: torch.Tensor, height_max: float) -> MaterialMaps:
    """Squashes raw 6-channel decoder output into valid material ranges."""
    hwc = raw.permute(1, 2, 0)
    diffuse = torch.sigmoid(hwc[:, :, 0:3])
    specular = torch.sigmoid(hwc[:, :, 3:4])
    roughness = ROUGHNESS_MIN + (1.0 - ROUGHNESS_MIN) * torch.sigmoid(hwc[:, :, 4:5])
    height = height_max * torch.tanh(hwc[:, :, 5:6])
    return MaterialMaps(diffuse, specular, roughness, height)


def _check_decode_size(h: int, w: int) -> None:
    if h % GRID or w % GRID or h < GRID or w < GRID:
        raise ValueError(f"decode size must be positive multiples of {GRID}, got {h}x{w}")


class _TinyBackbone(nn.Module):
    """Small strided conv stack for desk-scale tests; ends in global pooling."""

    def __init__(self):
        super().__init__()
        chans = [3, 16, 32, 64, 128]
        self.convs = nn.ModuleList(
            nn.Conv2d(chans[i], chans[i + 1], 3, stride=2, padding=1) for i in range(4)
        )
        self.out_dim = 128

    def forward(self, x):
        for conv in self.convs:
            x = F.relu(conv(x))
        return x.mean(dim=(-2, -1))


class Encoder(nn.Module):
    """Flash image -> latent posterior (mean, log-variance) + alignment angles."""

    def __init__(self, config: ModelConfig, generator: torch.Generator | None = None):
        super().__init__()
        self.config = config
        if config.encoder_backbone == "resnet50":
            from torchvision.models import resnet50

            net = resnet50(weights=None)
            feat_dim = net.fc.in_features
            net.fc = nn.Identity()
            self.backbone = net
        else:
            self.backbone = _TinyBackbone()
            feat_dim = self.backbone.out_dim
        d = config.latent_dim
        self.mean_head = nn.Linear(feat_dim, d)
        self.logvar_head = nn.Linear(feat_dim, d)
        self.angle_head = nn.Linear(feat_dim, 2)
        gen = generator if generator is not None else torch.Generator().manual_seed(config.init_seed + 1)
        self._seeded_init(gen)

    def _seeded_init(self, gen: torch.Generator) -> None:
        for name, p in self.named_parameters():
            if p.ndim >= 2:
                fan_in = p.shape[1] * (p[0, 0].numel() if p.ndim > 2 else 1)
                p.data.normal_(0.0, (2.0 / fan_in) ** 0.5, generator=gen)
            elif name.endswith("weight"):
                p.data.fill_(1.0)  # norm-layer scales
            else:
                p.data.zero_()

    def forward(self, images: torch.Tensor):
        feats = self.backbone(images)
        mean = self.mean_head(feats)
        logvar = self.logvar_head(feats)
        angles = (torch.pi / 4) * torch.tanh(self.angle_head(feats))
        return mean, logvar, angles

    def encode(self, images: torch.Tensor):
        """Validated encoding; images must match the configured input size."""
        squeeze = images.ndim == 3
        x = images[None] if squeeze else images
        h, w = self.config.input_size
        if x.shape[-3:] != (3, h, w):
            raise ValueError(
                f"encoder expects (3, {h}, {w}) images, got {tuple(x.shape[-3:])}; resize first"
            )
        mean, logvar, angles = self.forward(x)
        if squeeze:
            return mean[0], logvar[0], angles[0]
        return mean, logvar, angles


def reparameterize(mean: torch.Tensor, log_variance: torch.Tensor, rng: torch.Generator) -> torch.Tensor:
    """z = mean + exp(log_variance / 2) * eps with eps ~ N(0, I)."""
    eps = torch.randn(mean.shape, generator=rng, dtype=mean.dtype, device=mean.device)
    return mean + torch.exp(0.5 * log_variance) * eps


# --------------------------------------------------------------------------
# Checkpoint format: directory with a JSON manifest, weight files, checksums.
# --------------------------------------------------------------------------


@dataclass
class Checkpoint:
    encoder: Encoder
    decoder: Decoder
    config: ModelConfig
    step: int
    checkpoint_id: str
    path: Path | None = None
    optimizer_state: dict | None = None
    extra: dict = field(default_factory=dict)


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def save_checkpoint(
    directory: str | Path,
    encoder: Encoder,
    decoder: Decoder,
    config: ModelConfig,
    step: int = 0,
    optimizer: torch.optim.Optimizer | None = None,
    extra: dict | None = None,
) -> str:
    """Writes a checkpoint directory; returns its content-derived id."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    torch.save(encoder.state_dict(), directory / "encoder.pt")
    torch.save(decoder.state_dict(), directory / "decoder.pt")
    files = ["encoder.pt", "decoder.pt"]
    if optimizer is not None:
        torch.save(optimizer.state_dict(), directory / "optimizer.pt")
        files.append("optimizer.pt")
    checksums = {name: _sha256_file(directory / name) for name in files}
    checkpoint_id = hashlib.sha256(
        (checksums["encoder.pt"] + checksums["decoder.pt"]).encode()
    ).hexdigest()[:16]
    manifest = {
        "schema": CHECKPOINT_SCHEMA,
        "checkpoint_id": checkpoint_id,
        "step": step,
        "model": config.to_dict(),
        "extra": extra or {},
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    (directory / "checksums.json").write_text(json.dumps(checksums, indent=2, sort_keys=True))
    return checkpoint_id


def load_checkpoint(directory: str | Path, verify: bool = True) -> Checkpoint:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("schema") != CHECKPOINT_SCHEMA:
        raise ValueError(f"unsupported checkpoint schema {manifest.get('schema')!r}")
    if verify:
        checksums = json.loads((directory / "checksums.json").read_text())
        for name, expected in checksums.items():
            actual = _sha256_file(directory / name)
            if actual != expected:
                raise ValueError(f"checksum mismatch for {name}")
    config = ModelConfig.from_dict(manifest["model"])
    encoder = Encoder(config)
    encoder.load_state_dict(torch.load(directory / "encoder.pt", map_location="cpu", weights_only=True))
    decoder = Decoder(config)
    decoder.load_state_dict(torch.load(directory / "decoder.pt", map_location="cpu", weights_only=True))
    optimizer_state = None
    if (directory / "optimizer.pt").exists():
        optimizer_state = torch.load(directory / "optimizer.pt", map_location="cpu", weights_only=False)
    return Checkpoint(
        encoder=encoder,
        decoder=decoder,
        config=config,
        step=int(manifest["step"]),
        checkpoint_id=manifest["checkpoint_id"],
        path=directory,
        optimizer_state=optimizer_state,
        extra=manifest.get("extra", {}),
    )
