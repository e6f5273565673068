"""neuralmat: material capture and generative BRDF texture synthesis."""

from .noise import NoiseField
from .render import (
    CaptureGeometry,
    MaterialMaps,
    RenderedImage,
    fresnel_schlick,
    ggx_ndf,
    height_to_normals,
    shade,
    shade_gradient,
    smith_g,
)
from .features import FeatureExtractor
from .stats import CropSpec, TextureDescriptor, extract_patch, gram, power_spectrum, texture_distance
from .nets import Decoder, Encoder, ModelConfig, adain, load_checkpoint, reparameterize, save_checkpoint
from .training import FinetuneConfig, TrainConfig, finetune, kl_divergence, train, train_step
from .space import Material, SynthesisRequest, capture, export_maps, import_maps, interpolate, sample_prior, synthesize
from .evalharness import BenchmarkReport, diversity, relight_benchmark, style_error, xyz_histogram_l1

__version__ = "0.1.0"
