"""Convolutional feature extractor backing the texture statistics.

A 19-layer-VGG-style conv stack tapped after the first convolution of each of
its five blocks. Convolutions are bias-free and consume sRGB [0,1] images
directly, so an all-zero image produces exactly-zero features at every tap.
Weights either come from a serialized state-dict file or from a deterministic
seeded initialization; both are fingerprinted with SHA-256 for run manifests.
"""

import hashlib
from functools import lru_cache
from pathlib import Path

import torch
from torch import nn

NATIVE_SIZE = 224

# Conv widths up to the fifth block's first conv; "P" marks 2x2 max-pooling.
_PLAN = (64, 64, "P", 128, 128, "P", 256, 256, 256, 256, "P", 512, 512, 512, 512, "P", 512)
# Indices (among convs) whose post-ReLU activations are the style taps.
_TAP_CONVS = (0, 2, 4, 8, 12)


class FeatureExtractor(nn.Module):
    """Fixed (non-trainable) multi-scale conv features for texture statistics.

    Args:
        width_mult: channel multiplier; 1.0 is the full VGG-19 plan.
        seed: generator seed for the default initialization.
        weights_file: optional path to a state-dict ``.pt`` to load instead.
    """

    def __init__(self, width_mult: float = 1.0, seed: int = 911, weights_file: str | None = None):
        super().__init__()
        self.width_mult = width_mult
        self.seed = seed
        self.weights_file = str(weights_file) if weights_file else None

        layers: list[nn.Module] = []
        tap_layer_indices = []
        in_ch = 3
        conv_idx = 0
        for item in _PLAN:
            if item == "P":
                layers.append(nn.MaxPool2d(2, 2))
                continue
            out_ch = max(1, round(item * width_mult))
            layers.append(nn.Conv2d(in_ch, out_ch, 3, padding=1, bias=False))
            layers.append(nn.ReLU(inplace=False))
            if conv_idx in _TAP_CONVS:
                tap_layer_indices.append(len(layers) - 1)
            in_ch = out_ch
            conv_idx += 1
        self.layers = nn.ModuleList(layers)
        self.tap_indices = tuple(tap_layer_indices)

        if self.weights_file is not None:
            state = torch.load(self.weights_file, map_location="cpu", weights_only=True)
            self.load_state_dict(state)
        else:
            self._seeded_init(seed)

        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def _seeded_init(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)
        for module in self.layers:
            if isinstance(module, nn.Conv2d):
                fan_in = module.in_channels * 9
                module.weight.data.normal_(0.0, (2.0 / fan_in) ** 0.5, generator=gen)

    @property
    def tap_channels(self) -> tuple[int, ...]:
        convs = [m for m in self.layers if isinstance(m, nn.Conv2d)]
        return tuple(convs[i].out_channels for i in _TAP_CONVS)

    def forward(self, image: torch.Tensor) -> list[torch.Tensor]:
        """Returns the five tap activations for an sRGB image in [0, 1].

        Accepts (3, H, W) or (B, 3, H, W); tap tensors match the batching of
        the input.
        """
        squeeze = image.ndim == 3
        x = image[None] if squeeze else image
        taps = []
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i in self.tap_indices:
                taps.append(x[0] if squeeze else x)
            if i == self.tap_indices[-1]:
                break
        return taps

    def fingerprint(self) -> str:
        """SHA-256 over the weight tensors (stable across processes)."""
        digest = hashlib.sha256()
        for name, tensor in sorted(self.state_dict().items()):
            digest.update(name.encode())
            digest.update(str(tuple(tensor.shape)).encode())
            digest.update(tensor.numpy().tobytes())
        return digest.hexdigest()

    def weights_source(self) -> str:
        if self.weights_file is not None:
            return self.weights_file
        return f"seeded:{self.seed}"

    def save_weights(self, path: str | Path) -> str:
        """Writes the state dict to ``path``; returns the file's SHA-256."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(self.state_dict(), path)
        return file_sha256(path)


def file_sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@lru_cache(maxsize=4)
def get_extractor(width_mult: float = 1.0, seed: int = 911, weights_file: str | None = None) -> FeatureExtractor:
    """Process-wide cache of extractor instances (read-only after load)."""
    return FeatureExtractor(width_mult=width_mult, seed=seed, weights_file=weights_file)
