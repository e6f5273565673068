"""User-facing latent material space.

A Material pairs a latent code with decoder weights. Materials come from
capturing a flash image (optionally fine-tuning a per-material decoder copy),
from sampling the latent prior, or from interpolating two parents (code and
weights together). Synthesis addresses the infinite parameter field by region:
tiles are decoded on a fixed global grid with a trimmed boundary margin, so
overlapping requests agree exactly in reference-statistics mode.
"""

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import imgio
from .nets import Checkpoint, Decoder, GRID, ModelConfig, squash_to_maps
from .noise import NoiseField
from .render import MaterialMaps, height_to_normals
from .training import FinetuneConfig, finetune

TILE = 256
MARGIN = 64  # receptive-field bound of the decoder
REFERENCE_NOISE_SEED = 0
MANIFEST_SCHEMA = 1
BUNDLE_SCHEMA = 1

MAP_NAMES = ("diffuse", "specular", "roughness", "normal", "height")


@dataclass
class SynthesisRequest:
    """A rectangular region of the infinite field, in map pixels.

    origin (x, y) and size (width, height) must be multiples of 16.
    """

    origin: tuple[int, int] = (0, 0)
    size: tuple[int, int] = (256, 256)
    seed: int = 0
    statistics_mode: str = "reference"  # "reference" | "per-crop"

    def __post_init__(self) -> None:
        ox, oy = self.origin
        w, h = self.size
        if ox % GRID or oy % GRID:
            raise ValueError(f"origin must be multiples of {GRID}, got {self.origin}")
        if w % GRID or h % GRID or w < GRID or h < GRID:
            raise ValueError(f"size must be positive multiples of {GRID}, got {self.size}")
        if self.statistics_mode not in ("reference", "per-crop"):
            raise ValueError(f"unknown statistics_mode {self.statistics_mode!r}")


@dataclass
class Material:
    """Immutable latent-space point: a code plus decoder weights."""

    z: torch.Tensor
    decoder: Decoder
    config: ModelConfig
    provenance: str  # "captured" | "sampled" | "interpolated"
    source_id: str | None = None
    parents: tuple[str, ...] = ()
    base_checkpoint_id: str | None = None
    reference_seed: int = REFERENCE_NOISE_SEED
    _reference_stats: list | None = field(default=None, repr=False, compare=False)

    @property
    def material_id(self) -> str:
        digest = hashlib.sha256()
        digest.update(self.z.detach().numpy().tobytes())
        for name, p in sorted(self.decoder.state_dict().items()):
            digest.update(name.encode())
            digest.update(p.numpy().tobytes())
        digest.update(self.provenance.encode())
        return digest.hexdigest()[:16]

    def reference_stats(self) -> list:
        """Per-layer AdaIN statistics frozen from one reference crop (cached)."""
        if self._reference_stats is None:
            size = self.config.reference_size
            noise = NoiseField(seed=self.reference_seed, channels=self.config.noise_channels)
            crop = torch.as_tensor(noise.sample_crop((0, 0), (size, size)))
            self._reference_stats = self.decoder.reference_statistics(crop, self.z)
        return self._reference_stats


def capture(
    checkpoint: Checkpoint,
    flash_image: torch.Tensor,
    finetune_decoder: bool = False,
    finetune_config: FinetuneConfig | None = None,
    extractor=None,
    source_id: str | None = None,
) -> Material:
    """Embeds a flash image as a Material.

    Without fine-tuning this is the fast path: the latent code is the
    posterior mean and the checkpoint decoder is shared. With fine-tuning, a
    per-material decoder copy is optimized against the image.
    """
    checkpoint.encoder.eval()
    if finetune_decoder:
        decoder, z = finetune(checkpoint, flash_image, finetune_config, extractor)
    else:
        with torch.no_grad():
            mean, _, _ = checkpoint.encoder.encode(flash_image)
        z, decoder = mean.detach(), checkpoint.decoder
    return Material(
        z=z,
        decoder=decoder,
        config=checkpoint.config,
        provenance="captured",
        source_id=source_id,
        base_checkpoint_id=checkpoint.checkpoint_id,
    )


def sample_prior(checkpoint: Checkpoint, rng: np.random.Generator | int) -> Material:
    """Draws z ~ N(0, I) in the latent space; decoder is the shared one."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    z = torch.from_numpy(rng.standard_normal(checkpoint.config.latent_dim)).float()
    return Material(
        z=z,
        decoder=checkpoint.decoder,
        config=checkpoint.config,
        provenance="sampled",
        base_checkpoint_id=checkpoint.checkpoint_id,
    )


def interpolate(m1: Material, m2: Material, t: float) -> Material:
    """Lerps both the latent code and the decoder weights.

    Endpoints are exact: t=0 reproduces m1's decoder and code bit-for-bit,
    t=1 reproduces m2's. Parents must share the architecture and, because
    element-wise weight interpolation is only meaningful between decoders
    descending from one optimization basin, the same base checkpoint.
    """
    if not (0.0 <= t <= 1.0):
        raise ValueError(f"t must lie in [0, 1], got {t}")
    if m1.config != m2.config:
        raise ValueError("materials have different decoder architectures")
    if m1.base_checkpoint_id is None or m1.base_checkpoint_id != m2.base_checkpoint_id:
        raise ValueError("materials must share a base checkpoint for weight interpolation")

    parents = (m1.material_id, m2.material_id)
    if t == 0.0 or t == 1.0:
        src = m1 if t == 0.0 else m2
        return Material(
            z=src.z.clone(),
            decoder=src.decoder,
            config=src.config,
            provenance="interpolated",
            parents=parents,
            base_checkpoint_id=src.base_checkpoint_id,
        )
    decoder = copy.deepcopy(m1.decoder)
    with torch.no_grad():
        s1, s2 = m1.decoder.state_dict(), m2.decoder.state_dict()
        merged = {k: (1.0 - t) * s1[k] + t * s2[k] for k in s1}
        decoder.load_state_dict(merged)
    z = (1.0 - t) * m1.z + t * m2.z
    return Material(
        z=z,
        decoder=decoder,
        config=m1.config,
        provenance="interpolated",
        parents=parents,
        base_checkpoint_id=m1.base_checkpoint_id,
    )


def synthesize(material: Material, request: SynthesisRequest) -> MaterialMaps:
    """Material maps for the requested region of the infinite field.

    Reference mode decodes fixed 256px tiles on a global grid (plus a trimmed
    64px margin) with frozen normalization statistics, so overlapping regions
    from different calls agree exactly. Per-crop mode decodes the region in
    one piece with statistics from that crop.
    """
    x0, y0 = request.origin
    w, h = request.size
    noise = NoiseField(seed=request.seed, channels=material.config.noise_channels)
    decoder = material.decoder
    z = material.z

    if request.statistics_mode == "per-crop":
        crop = torch.as_tensor(
            noise.sample_crop((x0 - MARGIN, y0 - MARGIN), (w + 2 * MARGIN, h + 2 * MARGIN))
        )
        with torch.no_grad():
            out = decoder.forward(crop[None], z.reshape(1, -1))[0]
        raw = out[:, MARGIN : MARGIN + h, MARGIN : MARGIN + w]
        return squash_to_maps(raw, material.config.height_max)

    stats = material.reference_stats()
    raw = torch.empty(6, h, w)
    tx0, tx1 = x0 // TILE, (x0 + w - 1) // TILE
    ty0, ty1 = y0 // TILE, (y0 + h - 1) // TILE
    for ty in range(ty0, ty1 + 1):
        for tx in range(tx0, tx1 + 1):
            crop = torch.as_tensor(
                noise.sample_crop(
                    (tx * TILE - MARGIN, ty * TILE - MARGIN),
                    (TILE + 2 * MARGIN, TILE + 2 * MARGIN),
                )
            )
            with torch.no_grad():
                out = decoder.forward(crop[None], z.reshape(1, -1), frozen_stats=stats)[0]
            tile = out[:, MARGIN : MARGIN + TILE, MARGIN : MARGIN + TILE]
            # Intersection of this tile with the requested region.
            ix0, ix1 = max(x0, tx * TILE), min(x0 + w, (tx + 1) * TILE)
            iy0, iy1 = max(y0, ty * TILE), min(y0 + h, (ty + 1) * TILE)
            raw[:, iy0 - y0 : iy1 - y0, ix0 - x0 : ix1 - x0] = tile[
                :, iy0 - ty * TILE : iy1 - ty * TILE, ix0 - tx * TILE : ix1 - tx * TILE
            ]
    return squash_to_maps(raw, material.config.height_max)


# ----------------------------------------------------------------------------
# Map export / import (the viewer's wire format).
# ----------------------------------------------------------------------------


def export_maps(
    maps: MaterialMaps,
    directory: str | Path,
    fmt: str = "png16",
    material_id: str = "",
    parents: tuple[str, ...] = (),
    seed: int = 0,
    region: SynthesisRequest | None = None,
    alpha_mode: str = "squared",
    height_range: tuple[float, float] | None = None,
    manifest_extra: dict | None = None,
) -> Path:
    """Writes the five map images plus a JSON manifest; returns the manifest path.

    png16 quantizes to 16 bits per channel; exr keeps float32 bit-exactly.
    Normals are derived from the height field and encoded as 0.5 (n + 1).
    """
    if fmt not in ("png16", "exr"):
        raise ValueError(f"format must be 'png16' or 'exr', got {fmt!r}")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    if height_range is None:
        bound = max(1.0, float(maps.height.abs().max()))
        height_range = (-bound, bound)
    lo, hi = height_range
    normals = height_to_normals(maps.height)
    height = maps.height.detach()[:, :, 0]
    planes = {
        "diffuse": maps.diffuse.detach(),
        "specular": maps.specular.detach()[:, :, 0],
        "roughness": maps.roughness.detach()[:, :, 0],
        "normal": 0.5 * (normals.detach() + 1.0),
        # EXR stores raw float heights (bitwise round trip); png16 range-encodes.
        "height": height if fmt == "exr" else (height - lo) / (hi - lo),
    }

    ext = "png" if fmt == "png16" else "exr"
    entries = {}
    for name, data in planes.items():
        filename = f"{name}.{ext}"
        path = directory / filename
        if fmt == "png16":
            imgio.save_png16(path, data)
        else:
            imgio.write_exr(path, data.numpy())
        entries[name] = {"file": filename, "sha256": _sha256(path)}
    entries["height"]["range"] = [lo, hi]

    manifest = {
        "schema": MANIFEST_SCHEMA,
        "id": material_id,
        "parents": list(parents),
        "seed": seed,
        "region": {
            "origin": list(region.origin) if region else [0, 0],
            "size": list(region.size) if region else [maps.resolution[1], maps.resolution[0]],
        },
        "format": fmt,
        "maps": entries,
        "render": {"alpha_mode": alpha_mode, "fov_deg": 45},
    }
    if manifest_extra:
        manifest.update(manifest_extra)
    manifest_path = directory / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest_path


def import_maps(manifest_path: str | Path) -> tuple[MaterialMaps, dict]:
    """Reads a map bundle back into MaterialMaps (plus the parsed manifest)."""
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("schema") != MANIFEST_SCHEMA:
        raise ValueError(f"unsupported manifest schema {manifest.get('schema')!r}")
    directory = manifest_path.parent
    fmt = manifest.get("format", "png16")

    def read_plane(name: str) -> torch.Tensor:
        path = directory / manifest["maps"][name]["file"]
        if fmt == "exr":
            data, names = imgio.read_exr(path)
            if data.shape[2] == 3:
                lookup = {n: i for i, n in enumerate(names)}
                data = data[:, :, [lookup["R"], lookup["G"], lookup["B"]]]
            return torch.from_numpy(data.copy())
        img = imgio.load_image(path)  # (3, H, W), gray replicated
        return img.permute(1, 2, 0)

    diffuse = read_plane("diffuse")[:, :, :3]
    specular = read_plane("specular")[:, :, :1]
    roughness = read_plane("roughness")[:, :, :1]
    height = read_plane("height")[:, :, :1]
    if fmt != "exr":
        lo, hi = manifest["maps"]["height"].get("range", [-1.0, 1.0])
        height = height * (hi - lo) + lo
    return MaterialMaps(diffuse, specular, roughness, height), manifest


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    digest.update(path.read_bytes())
    return digest.hexdigest()


# ----------------------------------------------------------------------------
# Material bundles (persisted Materials for the CLI).
# ----------------------------------------------------------------------------


def save_material(material: Material, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    torch.save(material.z, directory / "z.pt")
    torch.save(material.decoder.state_dict(), directory / "decoder.pt")
    info = {
        "schema": BUNDLE_SCHEMA,
        "id": material.material_id,
        "provenance": material.provenance,
        "source_id": material.source_id,
        "parents": list(material.parents),
        "base_checkpoint_id": material.base_checkpoint_id,
        "reference_seed": material.reference_seed,
        "model": material.config.to_dict(),
    }
    (directory / "material.json").write_text(json.dumps(info, indent=2, sort_keys=True))
    return directory


def load_material(directory: str | Path) -> Material:
    directory = Path(directory)
    info = json.loads((directory / "material.json").read_text())
    if info.get("schema") != BUNDLE_SCHEMA:
        raise ValueError(f"unsupported material bundle schema {info.get('schema')!r}")
    config = ModelConfig.from_dict(info["model"])
    decoder = Decoder(config)
    decoder.load_state_dict(torch.load(directory / "decoder.pt", map_location="cpu", weights_only=True))
    z = torch.load(directory / "z.pt", map_location="cpu", weights_only=True)
    return Material(
        z=z,
        decoder=decoder,
        config=config,
        provenance=info["provenance"],
        source_id=info.get("source_id"),
        parents=tuple(info.get("parents", ())),
        base_checkpoint_id=info.get("base_checkpoint_id"),
        reference_seed=info.get("reference_seed", REFERENCE_NOISE_SEED),
    )
