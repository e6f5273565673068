"""Command-line interface.

Subcommands cover the whole pipeline: train, capture, synthesize,
interpolate, sample, render, evaluate. Exit codes: 0 success, 1 runtime
failure (diagnostic on stderr), 2 usage error. All randomness flows from
--seed; every run directory receives the fully resolved configuration.
"""

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np
import torch

from . import evalharness, imgio, space
from .config import build_app_config, write_resolved
from .nets import load_checkpoint, save_checkpoint
from .render import CaptureGeometry, shade
from .training import train


def _runtime_errors(fn):
    """Map runtime failures to exit code 1 with a diagnostic."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except Exception as exc:  # noqa: BLE001 - CLI boundary
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)

    return wrapper


def _app_config(config_file, **overrides):
    grouped: dict[str, dict[str, str]] = {}
    for dotted, value in overrides.items():
        section, key = dotted.split(".", 1)
        grouped.setdefault(section, {})[key] = value
    return build_app_config(config_file=config_file, overrides=grouped)


def _parse_size(text: str) -> tuple[int, int]:
    w, _, h = text.lower().partition("x")
    return int(w), int(h)


def _parse_pair(text: str) -> tuple[int, int]:
    x, _, y = text.partition(",")
    return int(x), int(y)


@click.group()
def main():
    """Material capture and generative texture toolkit."""


@main.command("train")
@click.option("--data", "data_dir", type=click.Path(), default=None, help="Flash image directory.")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--steps", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--config", "config_file", type=click.Path(exists=True), default=None)
@_runtime_errors
def cmd_train(data_dir, out_dir, steps, batch_size, seed, config_file):
    """Train the encoder/decoder pair on a directory of flash images."""
    app = _app_config(
        config_file,
        **{"train.steps": steps, "train.batch_size": batch_size, "train.seed": seed},
    )
    data_dir = data_dir or app.data_root
    if not data_dir:
        raise click.UsageError("no data directory: pass --data or set NEURALMAT_DATA")
    paths = sorted(
        p for p in Path(data_dir).iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg")
    )
    if not paths:
        raise click.UsageError(f"no images found in {data_dir}")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(app, out / "resolved.cfg")
    model_cfg = app.model
    dataset = [imgio.resize_image(imgio.load_image(p), model_cfg.input_size) for p in paths]
    click.echo(f"training on {len(dataset)} images for {app.train.steps} steps")
    final = train(
        dataset,
        app.train,
        model_cfg,
        out,
        extractor=app.make_extractor(),
        on_step=lambda b: click.echo(
            f"step {b['step']}: texture={b['texture']:.5f} kl={b['kl']:.4f} total={b['total']:.5f}"
        ),
    )
    click.echo(f"checkpoint: {final}")


@main.command("capture")
@click.option("--image", "image_path", type=click.Path(), required=True)
@click.option("--checkpoint", "checkpoint_dir", type=click.Path(exists=True), required=True)
@click.option("--finetune/--no-finetune", default=False)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--steps", type=int, default=None, help="Fine-tuning steps override.")
@click.option("--seed", type=int, default=None)
@click.option("--config", "config_file", type=click.Path(exists=True), default=None)
@_runtime_errors
def cmd_capture(image_path, checkpoint_dir, finetune, out_dir, steps, seed, config_file):
    """Embed a flash image as a material bundle (optionally fine-tuned)."""
    app = _app_config(config_file, **{"finetune.steps": steps, "finetune.seed": seed})
    checkpoint = load_checkpoint(checkpoint_dir)
    try:
        image = imgio.load_image(image_path)
    except IOError as exc:
        raise click.ClickException(f"cannot read --image {image_path}: {exc}") from exc
    image = imgio.resize_image(image, checkpoint.config.input_size)
    material = space.capture(
        checkpoint,
        image,
        finetune_decoder=finetune,
        finetune_config=app.finetune,
        extractor=app.make_extractor() if finetune else None,
        source_id=Path(image_path).stem,
    )
    out = Path(out_dir)
    space.save_material(material, out)
    write_resolved(app, out / "resolved.cfg")
    click.echo(f"material {material.material_id} -> {out}")


@main.command("sample")
@click.option("--checkpoint", "checkpoint_dir", type=click.Path(exists=True), required=True)
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@_runtime_errors
def cmd_sample(checkpoint_dir, seed, out_dir):
    """Draw a new material from the latent prior."""
    checkpoint = load_checkpoint(checkpoint_dir)
    material = space.sample_prior(checkpoint, seed)
    space.save_material(material, out_dir)
    click.echo(f"material {material.material_id} -> {out_dir}")


@main.command("synthesize")
@click.option("--material", "material_dir", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--size", default="256x256", help="WIDTHxHEIGHT, multiples of 16.")
@click.option("--origin", default="0,0", help="x,y region origin, multiples of 16.")
@click.option("--seed", type=int, default=0)
@click.option("--mode", type=click.Choice(["reference", "per-crop"]), default="reference")
@click.option("--format", "fmt", type=click.Choice(["png16", "exr"]), default="png16")
@_runtime_errors
def cmd_synthesize(material_dir, out_dir, size, origin, seed, mode, fmt):
    """Synthesize a region of the infinite field and export its maps."""
    material = space.load_material(material_dir)
    request = space.SynthesisRequest(
        origin=_parse_pair(origin), size=_parse_size(size), seed=seed, statistics_mode=mode
    )
    maps = space.synthesize(material, request)
    manifest = space.export_maps(
        maps,
        out_dir,
        fmt=fmt,
        material_id=material.material_id,
        parents=material.parents,
        seed=seed,
        region=request,
        alpha_mode=material.config.alpha_mode,
        height_range=(-material.config.height_max, material.config.height_max),
    )
    click.echo(f"maps -> {manifest}")


@main.command("interpolate")
@click.option("--material-a", type=click.Path(exists=True), required=True)
@click.option("--material-b", type=click.Path(exists=True), required=True)
@click.option("--t", "t_value", type=float, required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--size", default=None, help="Also synthesize+export maps at WIDTHxHEIGHT.")
@click.option("--seed", type=int, default=0)
@click.option("--format", "fmt", type=click.Choice(["png16", "exr"]), default="png16")
@_runtime_errors
def cmd_interpolate(material_a, material_b, t_value, out_dir, size, seed, fmt):
    """Interpolate two material bundles (code and decoder weights)."""
    m1 = space.load_material(material_a)
    m2 = space.load_material(material_b)
    mid = space.interpolate(m1, m2, t_value)
    out = Path(out_dir)
    space.save_material(mid, out / "material")
    if size:
        request = space.SynthesisRequest(size=_parse_size(size), seed=seed)
        maps = space.synthesize(mid, request)
        space.export_maps(
            maps,
            out / "maps",
            fmt=fmt,
            material_id=mid.material_id,
            parents=mid.parents,
            seed=seed,
            region=request,
            alpha_mode=mid.config.alpha_mode,
            height_range=(-mid.config.height_max, mid.config.height_max),
        )
    click.echo(f"material {mid.material_id} -> {out}")


@main.command("render")
@click.option("--maps", "manifest_path", type=click.Path(exists=True), required=True,
              help="Path to an exported maps manifest.json.")
@click.option("--light", default=None, help="x,y,z point light position (default: flash).")
@click.option("--intensity", type=float, default=None)
@click.option("--out", "out_path", type=click.Path(), required=True)
@_runtime_errors
def cmd_render(manifest_path, light, intensity, out_path):
    """Shade exported maps under a user-selected light for inspection."""
    maps, manifest = space.import_maps(manifest_path)
    light_pos = tuple(float(v) for v in light.split(",")) if light else None
    default_intensity = (
        evalharness.RELIGHT_INTENSITY if light_pos is not None else CaptureGeometry().light_intensity
    )
    geom = CaptureGeometry(light_intensity=intensity if intensity is not None else default_intensity)
    image = shade(maps, geom, light_pos=light_pos, alpha_mode=manifest["render"]["alpha_mode"])
    imgio.save_png8(out_path, image.srgb)
    click.echo(f"render -> {out_path}")


@main.command("evaluate")
@click.option("--checkpoint", "checkpoint_dir", type=click.Path(exists=True), default=None,
              help="Evaluate captures from this checkpoint; omit for ground-truth pass-through.")
@click.option("--fixtures", "fixtures_dir", type=click.Path(exists=True), default=None,
              help="Directory of fixture material directories; omit for synthetic fixtures.")
@click.option("--synthetic-count", type=int, default=10)
@click.option("--resolution", default="128x128")
@click.option("--lights", "n_lights", type=int, default=10)
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--config", "config_file", type=click.Path(exists=True), default=None)
@_runtime_errors
def cmd_evaluate(checkpoint_dir, fixtures_dir, synthetic_count, resolution, n_lights, seed, out_dir, config_file):
    """Run the synthetic flash-capture / relighting benchmark."""
    app = _app_config(config_file)
    w, h = _parse_size(resolution)
    if fixtures_dir:
        fixtures = [
            evalharness.load_fixture_dir(p) for p in sorted(Path(fixtures_dir).iterdir()) if p.is_dir()
        ]
    else:
        fixtures = evalharness.synthetic_fixture_set(synthetic_count, (h, w), seed=seed)

    extractor = app.make_extractor()
    method = None
    checkpoint_hash = None
    if checkpoint_dir:
        checkpoint = load_checkpoint(checkpoint_dir)
        checkpoint_hash = checkpoint.checkpoint_id

        def method(flash_image, realization_seed, _ck=checkpoint):
            image = imgio.resize_image(flash_image, _ck.config.input_size)
            material = space.capture(_ck, image)
            request = space.SynthesisRequest(size=(w, h), seed=realization_seed)
            return space.synthesize(material, request)

    report = evalharness.relight_benchmark(
        fixtures, method, n_lights=n_lights, seed=seed, extractor=extractor,
        checkpoint_hash=checkpoint_hash,
    )
    json_path, csv_path = evalharness.write_report(report, out_dir)
    write_resolved(app, Path(out_dir) / "resolved.cfg")
    click.echo(report.to_markdown())
    click.echo(f"report -> {json_path}, {csv_path}")


if __name__ == "__main__":
    main()
