import pytest
import torch

from neuralmat.features import FeatureExtractor
from neuralmat.nets import Decoder, Encoder, ModelConfig, load_checkpoint, save_checkpoint
from neuralmat.render import CaptureGeometry, shade
from neuralmat.evalharness import synthetic_fixture_set

# Desk-scale architecture used across the suite: same topology as the default,
# reduced widths so CPU runs stay fast.
TINY = ModelConfig(
    latent_dim=16,
    widths=(8, 16, 32, 64, 64),
    input_size=(96, 128),
    encoder_backbone="tiny",
    reference_size=128,
)


@pytest.fixture(scope="session")
def extractor():
    return FeatureExtractor(width_mult=0.25, seed=911)


@pytest.fixture(scope="session")
def tiny_config():
    return TINY


@pytest.fixture(scope="session")
def tiny_checkpoint(tmp_path_factory, tiny_config):
    directory = tmp_path_factory.mktemp("ckpt")
    save_checkpoint(directory, Encoder(tiny_config), Decoder(tiny_config), tiny_config)
    return load_checkpoint(directory)


@pytest.fixture(scope="session")
def fixture_materials():
    """Three procedural ground-truth materials at the tiny input size."""
    return synthetic_fixture_set(3, TINY.input_size, seed=21)


@pytest.fixture(scope="session")
def fixture_flash_images(fixture_materials):
    """Flash renders of the ground-truth materials, (3, H, W) sRGB."""
    geom = CaptureGeometry()
    with torch.no_grad():
        return [shade(maps, geom).srgb.permute(2, 0, 1) for _, maps in fixture_materials]
