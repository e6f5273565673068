"""VAE training over a flash-image corpus and per-exemplar fine-tuning.

Each step renders the decoded material back into a flash image and compares
texture statistics against the input; the latent posterior is regularized
toward the unit Gaussian. Fine-tuning freezes everything but the decoder
(including its style matrices) and minimizes the texture distance alone.
"""

import copy
import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .features import FeatureExtractor, get_extractor
from .nets import Checkpoint, Decoder, Encoder, ModelConfig, reparameterize, save_checkpoint
from .noise import NoiseField
from .render import CaptureGeometry, shade
from .stats import texture_distance


class TrainingError(RuntimeError):
    """Raised when a step produces a non-finite loss; the step is rejected."""


@dataclass
class TrainConfig:
    batch_size: int = 4
    learning_rate: float = 1e-4
    weight_decay: float = 1e-5
    kl_weight: float = 1e-3
    kl_warmup_frac: float = 0.1  # linear warm-up over this fraction of steps
    steps: int = 1000
    n_crops: int = 4
    scale_range: tuple[float, float] = (0.1, 8.0)
    fourier: bool = True
    alignment: bool = True
    seed: int = 0
    render_every: int = 250
    checkpoint_every: int = 500

    def __post_init__(self) -> None:
        if self.batch_size < 1 or self.learning_rate <= 0 or self.kl_weight < 0:
            raise ValueError("batch_size must be >= 1, learning_rate > 0, kl_weight >= 0")


@dataclass
class FinetuneConfig:
    steps: int = 1000
    learning_rate: float = 1e-3  # 10x the base training rate
    weight_decay: float = 1e-5
    n_crops: int = 4
    scale_range: tuple[float, float] = (0.1, 8.0)
    fourier: bool = True
    alignment: bool = True
    seed: int = 0
    stop_ratio: float | None = None  # optional early stop at loss <= ratio * initial


def kl_divergence(mean: torch.Tensor, log_variance: torch.Tensor) -> torch.Tensor:
    """Closed-form KL(q || N(0, I)): 0.5 sum(mu^2 + sigma^2 - log sigma^2 - 1).

    Sums over the latent dimension; batched inputs are averaged over the batch.
    """
    mean = torch.as_tensor(mean)
    log_variance = torch.as_tensor(log_variance)
    per = 0.5 * (mean**2 + torch.exp(log_variance) - log_variance - 1.0).sum(dim=-1)
    return per.mean()


@dataclass
class TrainState:
    """Mutable bundle a training run advances; single writer to parameters."""

    encoder: Encoder
    decoder: Decoder
    optimizer: torch.optim.Optimizer
    config: TrainConfig
    model_config: ModelConfig
    extractor: FeatureExtractor
    step: int = 0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    seed_log: list[dict] = field(default_factory=list)


def init_train_state(
    model_config: ModelConfig,
    config: TrainConfig,
    extractor: FeatureExtractor | None = None,
) -> TrainState:
    encoder = Encoder(model_config)
    decoder = Decoder(model_config)
    optimizer = torch.optim.Adam(
        list(encoder.parameters()) + list(decoder.parameters()),
        lr=config.learning_rate,
        weight_decay=config.weight_decay,
    )
    return TrainState(
        encoder=encoder,
        decoder=decoder,
        optimizer=optimizer,
        config=config,
        model_config=model_config,
        extractor=extractor or get_extractor(),
        rng=np.random.default_rng(config.seed),
    )


def effective_kl_weight(config: TrainConfig, step: int) -> float:
    warmup = max(1, int(config.steps * config.kl_warmup_frac))
    return config.kl_weight * min(1.0, step / warmup)


def render_reconstruction(
    decoder: Decoder,
    z: torch.Tensor,
    noise_seed: int,
    size_hw: tuple[int, int],
    model_config: ModelConfig,
    angles: torch.Tensor | None = None,
) -> torch.Tensor:
    """Decodes a fresh noise crop at ``size_hw`` and renders its flash image (sRGB)."""
    h, w = size_hw
    crop = NoiseField(seed=noise_seed, channels=model_config.noise_channels).sample_crop((0, 0), (w, h))
    maps = decoder.decode(crop, z)
    rotation = (angles[0], angles[1]) if angles is not None else (0.0, 0.0)
    geom = CaptureGeometry(rotation=rotation)
    image = shade(maps, geom, alpha_mode=model_config.alpha_mode)
    return image.srgb.permute(2, 0, 1)


def train_step(state: TrainState, batch: torch.Tensor) -> dict:
    """One optimization step over a batch of (B, 3, H, W) flash images.

    Per image: encode, sample the posterior, decode a freshly seeded noise
    crop, rotate the plane by the predicted alignment angles, shade, and
    compare texture statistics against the input. Returns the loss breakdown;
    raises TrainingError (without applying the step) on non-finite loss.
    """
    cfg = state.config
    if batch.ndim != 4:
        raise ValueError(f"batch must be (B, 3, H, W), got {tuple(batch.shape)}")
    h, w = state.model_config.input_size
    if batch.shape[1:] != (3, h, w):
        raise ValueError(f"batch images must be (3, {h}, {w}), got {tuple(batch.shape[1:])}")

    torch_gen = torch.Generator().manual_seed(int(state.rng.integers(2**63)))
    state.encoder.train()
    state.decoder.train()
    mean, logvar, angles = state.encoder.encode(batch)
    z = reparameterize(mean, logvar, torch_gen)

    noise_seeds, crop_seeds = [], []
    texture_terms = []
    for i in range(batch.shape[0]):
        noise_seed = int(state.rng.integers(2**63))
        crop_seed = int(state.rng.integers(2**31))
        noise_seeds.append(noise_seed)
        crop_seeds.append(crop_seed)
        render = render_reconstruction(
            state.decoder,
            z[i],
            noise_seed,
            (h, w),
            state.model_config,
            angles=angles[i] if cfg.alignment else None,
        )
        texture_terms.append(
            texture_distance(
                render,
                batch[i],
                n_crops=cfg.n_crops,
                seed=crop_seed,
                extractor=state.extractor,
                scale_range=cfg.scale_range,
                fourier=cfg.fourier,
            )
        )
    texture = torch.stack(texture_terms).mean()
    kl = kl_divergence(mean, logvar)
    beta = effective_kl_weight(cfg, state.step)
    total = texture + beta * kl

    if not torch.isfinite(total):
        raise TrainingError(
            f"non-finite loss at step {state.step}: "
            f"texture={float(texture.detach())!r} kl={float(kl.detach())!r}; step rejected"
        )

    state.optimizer.zero_grad()
    total.backward()
    state.optimizer.step()
    state.step += 1
    state.seed_log.append({"step": state.step, "noise_seeds": noise_seeds, "crop_seeds": crop_seeds})
    return {
        "step": state.step,
        "texture": float(texture.detach()),
        "kl": float(kl.detach()),
        "kl_weight": beta,
        "total": float(total.detach()),
    }


def train(
    dataset: Sequence[torch.Tensor],
    config: TrainConfig,
    model_config: ModelConfig,
    out_dir: str | Path,
    extractor: FeatureExtractor | None = None,
    resume_from: Checkpoint | None = None,
    on_step: Callable[[dict], None] | None = None,
) -> Path:
    """Runs the training loop and writes metrics, renders, and checkpoints.

    ``dataset`` is a sequence of (3, H, W) sRGB tensors at the configured
    input size; a single image degenerates to repeated steps on that image.
    Returns the final checkpoint directory.
    """
    if len(dataset) == 0:
        raise ValueError("dataset must contain at least one image")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "renders").mkdir(exist_ok=True)

    state = init_train_state(model_config, config, extractor)
    if resume_from is not None:
        state.encoder.load_state_dict(resume_from.encoder.state_dict())
        state.decoder.load_state_dict(resume_from.decoder.state_dict())
        if resume_from.optimizer_state is not None:
            state.optimizer.load_state_dict(resume_from.optimizer_state)
        state.step = resume_from.step
        state.rng = np.random.default_rng(config.seed + resume_from.step)

    metrics_path = out_dir / "metrics.csv"
    new_file = not metrics_path.exists()
    with open(metrics_path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new_file:
            writer.writerow(["step", "texture_loss", "kl", "total"])
        order = np.arange(len(dataset))
        cursor = len(order)
        while state.step < config.steps:
            idx = []
            for _ in range(config.batch_size):
                if cursor >= len(order):
                    state.rng.shuffle(order)
                    cursor = 0
                idx.append(int(order[cursor]))
                cursor += 1
            batch = torch.stack([dataset[i] for i in idx])
            breakdown = train_step(state, batch)
            writer.writerow(
                [breakdown["step"], breakdown["texture"], breakdown["kl"], breakdown["total"]]
            )
            if on_step is not None:
                on_step(breakdown)
            if config.render_every and state.step % config.render_every == 0:
                _dump_validation_render(state, dataset[0], out_dir / "renders")
            if config.checkpoint_every and state.step % config.checkpoint_every == 0:
                _save(state, out_dir / f"checkpoint-{state.step:06d}")
    final = out_dir / "checkpoint-final"
    _save(state, final)
    return final


def _save(state: TrainState, directory: Path) -> None:
    save_checkpoint(
        directory,
        state.encoder,
        state.decoder,
        state.model_config,
        step=state.step,
        optimizer=state.optimizer,
        extra={"extractor_fingerprint": state.extractor.fingerprint(),
               "extractor_weights": state.extractor.weights_source()},
    )


def _dump_validation_render(state: TrainState, image: torch.Tensor, directory: Path) -> None:
    from . import imgio

    state.encoder.eval()
    with torch.no_grad():
        mean, _, _ = state.encoder.encode(image[None])
        render = render_reconstruction(
            state.decoder, mean[0], noise_seed=0, size_hw=state.model_config.input_size,
            model_config=state.model_config,
        )
    imgio.save_png8(directory / f"step-{state.step:06d}.png", render.permute(1, 2, 0).numpy())
    state.encoder.train()


def finetune(
    checkpoint: Checkpoint,
    flash_image: torch.Tensor,
    config: FinetuneConfig | None = None,
    extractor: FeatureExtractor | None = None,
    on_step: Callable[[dict], None] | None = None,
) -> tuple[Decoder, torch.Tensor]:
    """Adapts a copy of the checkpoint's decoder to one flash image.

    The encoder stays frozen; the latent code is the posterior mean of the
    image. Only decoder parameters (convolutions and style matrices) are
    optimized, against the texture distance alone. The predicted alignment
    angles rotate the rendering geometry during optimization but are never
    applied to the output maps.

    Returns (tuned decoder, latent code).
    """
    config = config or FinetuneConfig()
    extractor = extractor or get_extractor()
    h, w = checkpoint.config.input_size
    if flash_image.shape != (3, h, w):
        raise ValueError(f"flash image must be (3, {h}, {w}), got {tuple(flash_image.shape)}")

    checkpoint.encoder.eval()
    with torch.no_grad():
        mean, _, angles = checkpoint.encoder.encode(flash_image)
    z_star = mean.detach()

    decoder = copy.deepcopy(checkpoint.decoder)
    if config.steps == 0:
        return decoder, z_star
    optimizer = torch.optim.Adam(
        decoder.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay
    )
    rng = np.random.default_rng(config.seed)
    initial = None
    for _ in range(config.steps):
        noise_seed = int(rng.integers(2**63))
        crop_seed = int(rng.integers(2**31))
        render = render_reconstruction(
            decoder, z_star, noise_seed, (h, w), checkpoint.config,
            angles=angles if config.alignment else None,
        )
        loss = texture_distance(
            render,
            flash_image,
            n_crops=config.n_crops,
            seed=crop_seed,
            extractor=extractor,
            scale_range=config.scale_range,
            fourier=config.fourier,
        )
        if not torch.isfinite(loss):
            raise TrainingError(f"non-finite fine-tuning loss: {float(loss)!r}")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        value = float(loss.detach())
        initial = value if initial is None else initial
        if on_step is not None:
            on_step({"texture": value})
        if config.stop_ratio is not None and value <= config.stop_ratio * initial:
            break
    return decoder, z_star
