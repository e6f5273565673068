#!/usr/bin/env python3
"""Builds the viewer's test fixtures through the exporter's public surfaces.

Creates a desk-scale checkpoint, then drives the `neuralmat` CLI to sample
materials, synthesize map bundles (including seed variants and an
interpolation sequence), and render reference images under a set of parity
lights. Everything the viewer tests consume lands in frontend/fixtures/.

Usage: python3 scripts/gen_fixtures.py  (from the frontend/ directory)
"""

import json
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"
PARITY_LIGHTS = [
    [0.0, 0.0, 0.0],
    [0.8, 0.4, -0.2],
    [-0.6, -0.5, 0.1],
    [0.3, -0.9, 0.4],
    [-1.0, 0.7, 0.0],
]


def run_cli(*args: str) -> None:
    result = subprocess.run([sys.executable, "-m", "neuralmat.cli", *args], capture_output=True, text=True)
    if result.returncode != 0:
        raise SystemExit(f"cli {' '.join(args)} failed:\n{result.stdout}\n{result.stderr}")


def make_checkpoint(directory: Path) -> None:
    from neuralmat.nets import Decoder, Encoder, ModelConfig, save_checkpoint

    config = ModelConfig(
        latent_dim=16,
        widths=(8, 16, 32, 64, 64),
        input_size=(96, 128),
        encoder_backbone="tiny",
        reference_size=128,
        init_seed=5,
    )
    save_checkpoint(directory, Encoder(config), Decoder(config), config)


def main() -> None:
    from neuralmat.evalharness import RELIGHT_INTENSITY

    if FIXTURES.exists():
        shutil.rmtree(FIXTURES)
    FIXTURES.mkdir(parents=True)

    with tempfile.TemporaryDirectory() as tmp:
        tmp_path = Path(tmp)
        checkpoint = tmp_path / "checkpoint"
        make_checkpoint(checkpoint)

        parity = {"intensity": RELIGHT_INTENSITY, "bundles": []}
        for index, sample_seed in enumerate((1, 2, 3)):
            material = tmp_path / f"material-{index}"
            bundle = FIXTURES / f"bundle-{index}"
            run_cli("sample", "--checkpoint", str(checkpoint), "--seed", str(sample_seed),
                    "--out", str(material))
            run_cli("synthesize", "--material", str(material), "--out", str(bundle),
                    "--size", "64x64", "--seed", "100")
            renders = []
            for li, light in enumerate(PARITY_LIGHTS):
                out = bundle / f"render-{li}.png"
                run_cli("render", "--maps", str(bundle / "manifest.json"),
                        "--light", ",".join(str(v) for v in light),
                        "--intensity", str(RELIGHT_INTENSITY), "--out", str(out))
                renders.append(out.name)
            parity["bundles"].append({
                "dir": bundle.name,
                "lights": PARITY_LIGHTS,
                "renders": renders,
            })

        # Seed realizations of bundle-0 plus an interpolation sequence, to
        # exercise the optional viewer manifest lists.
        seeds = []
        for seed in (101, 102):
            out = FIXTURES / "bundle-0" / f"seed-{seed}"
            run_cli("synthesize", "--material", str(tmp_path / "material-0"), "--out", str(out),
                    "--size", "64x64", "--seed", str(seed))
            seeds.append({"seed": seed, "path": f"seed-{seed}/manifest.json"})
        sequence = []
        for t in (0.0, 0.5, 1.0):
            out = FIXTURES / "bundle-0" / f"t-{t:.2f}"
            run_cli("interpolate", "--material-a", str(tmp_path / "material-0"),
                    "--material-b", str(tmp_path / "material-1"), "--t", str(t),
                    "--out", str(tmp_path / f"interp-{t}"), "--size", "64x64", "--seed", "100")
            shutil.copytree(tmp_path / f"interp-{t}" / "maps", out)
            sequence.append({"t": t, "path": f"t-{t:.2f}/manifest.json"})

        manifest_path = FIXTURES / "bundle-0" / "manifest.json"
        manifest = json.loads(manifest_path.read_text())
        manifest["seeds"] = seeds
        manifest["sequence"] = sequence
        manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))

        (FIXTURES / "parity.json").write_text(json.dumps(parity, indent=2, sort_keys=True))
    print(f"fixtures written to {FIXTURES}")


if __name__ == "__main__":
    main()
