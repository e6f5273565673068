"""Quantitative evaluation: style error, diversity, color histograms, and the
synthetic flash-capture / relighting benchmark.

The style metric is Gram-only (no spectrum term) on full images at a single
scale, distinct from the training loss. Diversity is the mean pairwise L1
between feature stacks of multiple realizations, which is exactly zero for
any single-output method.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F

from . import imgio
from .features import NATIVE_SIZE, FeatureExtractor, get_extractor
from .noise import NoiseField
from .render import CaptureGeometry, DEFAULT_LIGHT_INTENSITY, MaterialMaps, ROUGHNESS_MIN, shade
from .stats import gram

HIST_BINS = 64
# D65 white point of linear sRGB, used as fixed per-axis histogram ranges.
_XYZ_WHITE = (0.9504559, 1.0, 1.0890578)
_RGB_TO_XYZ = torch.tensor(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)

RELIGHT_CAP_HALF_ANGLE_DEG = 60.0
RELIGHT_DISTANCE = 2.0
RELIGHT_INTENSITY = 4.0 * DEFAULT_LIGHT_INTENSITY  # distance-2 compensation


def _chw(image: torch.Tensor) -> torch.Tensor:
    if image.ndim == 3 and image.shape[-1] == 3 and image.shape[0] != 3:
        return image.permute(2, 0, 1)
    return image


def _full_image_taps(image: torch.Tensor, extractor: FeatureExtractor) -> list[torch.Tensor]:
    image = _chw(image)
    if image.shape[-2:] != (NATIVE_SIZE, NATIVE_SIZE):
        image = F.interpolate(
            image[None], size=(NATIVE_SIZE, NATIVE_SIZE), mode="bilinear", align_corners=False
        )[0]
    return extractor(image)


def style_error(image_a: torch.Tensor, image_b: torch.Tensor, extractor=None, seed: int = 0) -> float:
    """L1 difference of full-image Gram matrices (single scale, no spectrum).

    ``seed`` is accepted for API symmetry with the sampled metrics; the
    full-image path is deterministic and does not consume it.
    """
    image_a, image_b = _chw(image_a), _chw(image_b)
    if image_a.shape != image_b.shape:
        raise ValueError(f"image shapes differ: {tuple(image_a.shape)} vs {tuple(image_b.shape)}")
    extractor = extractor or get_extractor()
    with torch.no_grad():
        taps_a = _full_image_taps(image_a, extractor)
        taps_b = _full_image_taps(image_b, extractor)
        total = sum(float((gram(a) - gram(b)).abs().mean()) for a, b in zip(taps_a, taps_b))
    return float(total)


def feature_l1(image_a: torch.Tensor, image_b: torch.Tensor, extractor=None) -> float:
    """Mean absolute difference between full-image feature stacks, summed over taps."""
    extractor = extractor or get_extractor()
    with torch.no_grad():
        taps_a = _full_image_taps(image_a, extractor)
        taps_b = _full_image_taps(image_b, extractor)
        return float(sum(float((a - b).abs().mean()) for a, b in zip(taps_a, taps_b)))


def diversity(realizations: list[torch.Tensor], extractor=None) -> float:
    """Mean pairwise feature-space L1 across realizations of one material."""
    if len(realizations) < 2:
        raise ValueError(f"diversity needs >= 2 realizations, got {len(realizations)}")
    extractor = extractor or get_extractor()
    with torch.no_grad():
        taps = [_full_image_taps(_chw(r), extractor) for r in realizations]
    total, pairs = 0.0, 0
    for i in range(len(taps)):
        for j in range(i + 1, len(taps)):
            total += sum(float((a - b).abs().mean()) for a, b in zip(taps[i], taps[j]))
            pairs += 1
    return total / pairs


def srgb_to_xyz(image: torch.Tensor) -> torch.Tensor:
    """sRGB [0,1] (gamma-2.2) to CIE XYZ, channels first or last accepted."""
    image = _chw(image)
    linear = image.clamp(0.0, 1.0) ** 2.2
    m = _RGB_TO_XYZ.to(linear.dtype)
    return torch.einsum("ij,jhw->ihw", m, linear)


def xyz_histogram_l1(image_a: torch.Tensor, image_b: torch.Tensor, bins: int = HIST_BINS) -> float:
    """Mean over X/Y/Z axes of the L1 distance between normalized histograms."""
    xyz_a, xyz_b = srgb_to_xyz(image_a), srgb_to_xyz(image_b)
    if xyz_a.shape != xyz_b.shape:
        raise ValueError("images must share a resolution")
    total = 0.0
    for axis in range(3):
        hi = _XYZ_WHITE[axis]
        ha = torch.histc(xyz_a[axis].reshape(-1).clamp(0, hi), bins=bins, min=0.0, max=hi)
        hb = torch.histc(xyz_b[axis].reshape(-1).clamp(0, hi), bins=bins, min=0.0, max=hi)
        total += float((ha / ha.sum() - hb / hb.sum()).abs().sum())
    return total / 3.0


def sample_cap_lights(
    n: int,
    seed: int,
    half_angle_deg: float = RELIGHT_CAP_HALF_ANGLE_DEG,
    distance: float = RELIGHT_DISTANCE,
    center: tuple[float, float, float] = (0.0, 0.0, -1.0),
) -> list[tuple[float, float, float]]:
    """Point lights uniform on a spherical cap above the plane, fixed radius."""
    rng = np.random.default_rng(seed)
    cos_min = math.cos(math.radians(half_angle_deg))
    lights = []
    for _ in range(n):
        cos_t = rng.uniform(cos_min, 1.0)
        sin_t = math.sqrt(1.0 - cos_t * cos_t)
        phi = rng.uniform(0.0, 2.0 * math.pi)
        d = (sin_t * math.cos(phi), sin_t * math.sin(phi), cos_t)
        lights.append(tuple(center[i] + distance * d[i] for i in range(3)))
    return lights


@dataclass
class BenchmarkReport:
    per_material: list[dict]
    aggregate: dict
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {"per_material": self.per_material, "aggregate": self.aggregate, "metadata": self.metadata},
            indent=2,
            sort_keys=True,
        )

    def to_csv(self) -> str:
        cols = ["material", "style_flash", "style_relit", "diversity", "xyz_hist_l1"]
        lines = [",".join(cols)]
        for row in self.per_material:
            lines.append(",".join(str(row[c]) for c in cols))
        lines.append(",".join(["aggregate"] + [str(self.aggregate[c]) for c in cols[1:]]))
        return "\n".join(lines) + "\n"

    def to_markdown(self) -> str:
        cols = ["material", "style_flash", "style_relit", "diversity", "xyz_hist_l1"]
        rows = [
            "| " + " | ".join(cols) + " |",
            "|" + "---|" * len(cols),
        ]
        for row in self.per_material + [dict(self.aggregate, material="**mean**")]:
            cells = [str(row["material"])] + [f"{row[c]:.4f}" for c in cols[1:]]
            rows.append("| " + " | ".join(cells) + " |")
        return "\n".join(rows) + "\n"


def relight_benchmark(
    svbrdf_fixtures: list[tuple[str, MaterialMaps]],
    method: Callable[[torch.Tensor, int], MaterialMaps] | MaterialMaps | None = None,
    n_lights: int = 10,
    seed: int = 0,
    extractor: FeatureExtractor | None = None,
    realizations: int = 3,
    checkpoint_hash: str | None = None,
) -> BenchmarkReport:
    """Simulated flash-capture benchmark over ground-truth material fixtures.

    Pipeline per fixture: render the ground truth under flash geometry, hand
    that image to ``method``, then render both the method's maps and the
    ground truth under the same random point lights and compare styles.

    ``method`` may be a callable (flash_image, realization_seed) -> maps, a
    fixed MaterialMaps baseline, or None for the ground-truth pass-through.
    """
    if not svbrdf_fixtures:
        raise ValueError("fixture list is empty")
    extractor = extractor or get_extractor()
    geom = CaptureGeometry()
    lights = sample_cap_lights(n_lights, seed)

    rows = []
    for fixture_id, gt_maps in svbrdf_fixtures:
        with torch.no_grad():
            flash_gt = shade(gt_maps, geom).srgb

        def run_method(rseed: int) -> MaterialMaps:
            if method is None:
                return gt_maps
            if isinstance(method, MaterialMaps):
                return method
            return method(flash_gt.permute(2, 0, 1), rseed)

        est_list = [run_method(s) for s in range(max(2, realizations))]
        est = est_list[0]
        relight_geom = CaptureGeometry(light_intensity=RELIGHT_INTENSITY)
        with torch.no_grad():
            flash_est = shade(est, geom).srgb
            relit_errors = []
            for light in lights:
                gt_lit = shade(gt_maps, relight_geom, light_pos=light).srgb
                est_lit = shade(est, relight_geom, light_pos=light).srgb
                relit_errors.append(style_error(est_lit, gt_lit, extractor))
            renders = [shade(m, geom).srgb for m in est_list]
        rows.append(
            {
                "material": fixture_id,
                "style_flash": style_error(flash_est, flash_gt, extractor),
                "style_relit": float(np.mean(relit_errors)),
                "diversity": diversity(renders, extractor),
                "xyz_hist_l1": xyz_histogram_l1(flash_est, flash_gt),
            }
        )

    keys = ("style_flash", "style_relit", "diversity", "xyz_hist_l1")
    aggregate = {k: float(np.mean([r[k] for r in rows])) for k in keys}
    metadata = {
        "n_lights": n_lights,
        "seed": seed,
        "lights": [list(l) for l in lights],
        "light_intensity": RELIGHT_INTENSITY,
        "cap_half_angle_deg": RELIGHT_CAP_HALF_ANGLE_DEG,
        "light_distance": RELIGHT_DISTANCE,
        "realizations": max(2, realizations),
        "extractor_fingerprint": extractor.fingerprint(),
        "checkpoint_hash": checkpoint_hash,
    }
    return BenchmarkReport(per_material=rows, aggregate=aggregate, metadata=metadata)


def write_report(report: BenchmarkReport, out_dir: str | Path) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / "report.json"
    csv_path = out_dir / "report.csv"
    json_path.write_text(report.to_json())
    csv_path.write_text(report.to_csv())
    return json_path, csv_path


# ----------------------------------------------------------------------------
# Fixtures: procedural stationary materials plus a directory-ingest convention.
# ----------------------------------------------------------------------------


def _gaussian_blur(field_2d: torch.Tensor, sigma: float) -> torch.Tensor:
    radius = max(1, int(3 * sigma))
    xs = torch.arange(-radius, radius + 1, dtype=torch.float32)
    kernel = torch.exp(-0.5 * (xs / sigma) ** 2)
    kernel = kernel / kernel.sum()
    x = field_2d[None, None]
    x = F.pad(x, (radius, radius, radius, radius), mode="replicate")
    x = F.conv2d(x, kernel.reshape(1, 1, 1, -1))
    x = F.conv2d(x, kernel.reshape(1, 1, -1, 1))
    return x[0, 0]


def _normalized(x: torch.Tensor) -> torch.Tensor:
    lo, hi = float(x.min()), float(x.max())
    return (x - lo) / (hi - lo + 1e-8)


def synthetic_fixture_set(
    count: int = 10, resolution: tuple[int, int] = (128, 128), seed: int = 0
) -> list[tuple[str, MaterialMaps]]:
    """Procedurally generated stationary SVBRDF fixtures (blotchy two-tone
    albedo, smooth roughness variation, gentle height relief)."""
    h, w = resolution
    rng = np.random.default_rng(seed)
    fixtures = []
    for i in range(count):
        field = NoiseField(seed=int(rng.integers(2**31)), channels=4)
        crop = torch.as_tensor(field.sample_crop((0, 0), (w, h)))
        mask = torch.sigmoid(4.0 * _normalized(_gaussian_blur(crop[0], 2.0 + 2.0 * rng.random())) * 2 - 4.0 + 2)
        color_a = torch.tensor(rng.uniform(0.1, 0.9, size=3), dtype=torch.float32)
        color_b = torch.tensor(rng.uniform(0.1, 0.9, size=3), dtype=torch.float32)
        diffuse = mask[:, :, None] * color_a + (1 - mask[:, :, None]) * color_b
        rough_base = _normalized(_gaussian_blur(crop[1], 3.0))
        roughness = (0.2 + 0.6 * rough_base)[:, :, None]
        specular = torch.full((h, w, 1), float(rng.uniform(0.04, 0.3)))
        specular = (specular[:, :, 0] + 0.05 * (mask - 0.5))[:, :, None].clamp(0.0, 1.0)
        height = (_gaussian_blur(crop[2], 2.0) * 0.4)[:, :, None].clamp(-1.9, 1.9)
        fixtures.append((f"fixture-{i:02d}", MaterialMaps(diffuse, specular, roughness, height)))
    return fixtures


def load_fixture_dir(path: str | Path) -> tuple[str, MaterialMaps]:
    """Ingests one material from the diffuse/specular/roughness/height(.png)
    directory convention. A missing height map falls back to flat."""
    path = Path(path)

    def plane(name: str, channels: int) -> torch.Tensor | None:
        for ext in ("png", "jpg", "jpeg"):
            f = path / f"{name}.{ext}"
            if f.exists():
                img = imgio.load_image(f).permute(1, 2, 0)
                return img[:, :, :channels]
        return None

    diffuse = plane("diffuse", 3)
    if diffuse is None:
        raise IOError(f"no diffuse map found in {path}")
    h, w = diffuse.shape[0], diffuse.shape[1]
    specular = plane("specular", 1)
    roughness = plane("roughness", 1)
    height = plane("height", 1)
    maps = MaterialMaps(
        diffuse,
        specular if specular is not None else torch.full((h, w, 1), 0.04),
        (roughness if roughness is not None else torch.full((h, w, 1), 0.5)).clamp(ROUGHNESS_MIN, 1.0),
        height if height is not None else torch.zeros(h, w, 1),
    )
    return path.name, maps
