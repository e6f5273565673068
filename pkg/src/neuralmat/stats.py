"""Texture descriptors and the texture distance.

A descriptor of an image crop is, per feature tap: the position-free Gram
matrix of the activations plus (optionally) a radially binned power spectrum
of the same activations. The texture distance Monte-Carlo averages the L1
difference of descriptors over random crop locations and scales, applying the
same crops to both images.
"""

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .features import NATIVE_SIZE, FeatureExtractor, get_extractor

SCALE_MIN = 0.1
SCALE_MAX = 8.0
SPECTRUM_WEIGHT = 1e-3
SPECTRUM_BINS = 16
MIN_IMAGE_SIZE = 16
_MIN_CROP = 16


@dataclass(frozen=True)
class CropSpec:
    """A continuous crop: center (x, y) in normalized [0,1]^2 image coords, plus scale."""

    x: float
    y: float
    scale: float

    def __post_init__(self) -> None:
        if not (SCALE_MIN <= self.scale <= SCALE_MAX):
            raise ValueError(f"scale must lie in [{SCALE_MIN}, {SCALE_MAX}], got {self.scale}")


@dataclass
class TextureDescriptor:
    """Per-tap Gram matrices and optional per-tap spectra."""

    grams: tuple[torch.Tensor, ...]
    spectra: tuple[torch.Tensor, ...] | None = None


def sample_crop_specs(
    n_crops: int,
    seed: int,
    scale_range: tuple[float, float] = (SCALE_MIN, SCALE_MAX),
) -> list[CropSpec]:
    """Samples crop centers uniformly and scales log-uniformly."""
    if n_crops < 1:
        raise ValueError(f"n_crops must be >= 1, got {n_crops}")
    lo, hi = scale_range
    rng = np.random.default_rng(seed)
    specs = []
    for _ in range(n_crops):
        x, y = rng.random(), rng.random()
        scale = math.exp(rng.uniform(math.log(lo), math.log(hi)))
        specs.append(CropSpec(x=x, y=y, scale=scale))
    return specs


def extract_patch(
    image: torch.Tensor,
    crop: CropSpec,
    extractor: FeatureExtractor | None = None,
) -> list[torch.Tensor]:
    """Crops, resamples to the extractor's native size, and extracts features.

    The crop side is scale * native size in pixels, clamped to fit the image;
    the center is clamped so the crop stays inside. Fully differentiable with
    respect to the image.
    """
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"image must be (3, H, W), got {tuple(image.shape)}")
    _, h, w = image.shape
    if min(h, w) < MIN_IMAGE_SIZE:
        raise ValueError(f"image min side {min(h, w)} below minimum {MIN_IMAGE_SIZE}")
    extractor = extractor or get_extractor()

    side = int(round(crop.scale * NATIVE_SIZE))
    side = max(_MIN_CROP, min(side, h, w))
    left = int(round(crop.x * w - side / 2.0))
    top = int(round(crop.y * h - side / 2.0))
    left = max(0, min(left, w - side))
    top = max(0, min(top, h - side))
    patch = image[:, top : top + side, left : left + side]
    if side != NATIVE_SIZE:
        patch = F.interpolate(
            patch[None], size=(NATIVE_SIZE, NATIVE_SIZE), mode="bilinear", align_corners=False
        )[0]
    return extractor(patch)


def gram(features: torch.Tensor) -> torch.Tensor:
    """Per-position-normalized Gram matrix G[i,j] = sum_p f_i(p) f_j(p) / (H W)."""
    c, h, w = features.shape
    flat = features.reshape(c, h * w)
    return flat @ flat.T / (h * w)


def power_spectrum(features: torch.Tensor, n_bins: int = SPECTRUM_BINS) -> torch.Tensor:
    """Radially binned, channel-averaged power spectrum of feature maps.

    Normalized so the bins sum to mean(f^2) (Parseval with the 1/(HW)^2
    convention). Every frequency lands in a bin; radii past the Nyquist ring
    fold into the last bin.
    """
    c, h, w = features.shape
    if h < 4 or w < 4:
        raise ValueError(f"feature maps must be at least 4x4, got {h}x{w}")
    spec = torch.fft.fft2(features)
    power = (spec.real**2 + spec.imag**2) / float(h * w) ** 2

    fy = torch.fft.fftfreq(h, device=features.device)
    fx = torch.fft.fftfreq(w, device=features.device)
    radius = torch.sqrt(fy[:, None] ** 2 + fx[None, :] ** 2)
    bins = torch.clamp((radius / 0.5 * n_bins).long(), max=n_bins - 1).reshape(-1)

    out = torch.zeros(c, n_bins, dtype=power.dtype, device=power.device)
    out = out.index_add(1, bins, power.reshape(c, -1))
    return out.mean(dim=0)


def describe(
    image: torch.Tensor,
    crop: CropSpec,
    extractor: FeatureExtractor | None = None,
    fourier: bool = True,
) -> TextureDescriptor:
    """Descriptor of one crop of one image."""
    taps = extract_patch(image, crop, extractor)
    grams = tuple(gram(t) for t in taps)
    spectra = tuple(power_spectrum(t) for t in taps) if fourier else None
    return TextureDescriptor(grams=grams, spectra=spectra)


def descriptor_distance(
    a: TextureDescriptor,
    b: TextureDescriptor,
    spectrum_weight: float = SPECTRUM_WEIGHT,
) -> torch.Tensor:
    """L1 distance: per-tap mean |dGram| summed over taps, plus the weighted
    spectrum term when both descriptors carry spectra."""
    total = sum((ga - gb).abs().mean() for ga, gb in zip(a.grams, b.grams))
    if a.spectra is not None and b.spectra is not None:
        total = total + spectrum_weight * sum(
            (sa - sb).abs().mean() for sa, sb in zip(a.spectra, b.spectra)
        )
    return total


def texture_distance(
    img_a: torch.Tensor,
    img_b: torch.Tensor,
    n_crops: int = 4,
    seed: int = 0,
    extractor: FeatureExtractor | None = None,
    scale_range: tuple[float, float] = (SCALE_MIN, SCALE_MAX),
    fourier: bool = True,
    spectrum_weight: float = SPECTRUM_WEIGHT,
) -> torch.Tensor:
    """Monte-Carlo texture distance between two images under shared crops.

    Deterministic given ``seed``; differentiable in both images. Inputs are
    (3, H, W) sRGB tensors in [0, 1].
    """
    crops = sample_crop_specs(n_crops, seed, scale_range)
    extractor = extractor or get_extractor()
    total = torch.zeros((), dtype=img_a.dtype)
    for crop in crops:
        da = describe(img_a, crop, extractor, fourier=fourier)
        db = describe(img_b, crop, extractor, fourier=fourier)
        total = total + descriptor_distance(da, db, spectrum_weight)
    return total / n_crops
