"""Seeded infinite Gaussian noise field with pure random access.

Every sample is a counter-based hash of (seed, channel, x, y), so crops taken
at arbitrary integer offsets are mutually consistent and the field needs no
stored state: it can be addressed anywhere on the signed 32-bit plane.
"""

from dataclasses import dataclass

import numpy as np

# SplitMix64 constants.
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
# Decorrelates the second uniform lane used by the Box-Muller transform.
_LANE2 = np.uint64(0xD6E8FEB86659FD93)

_U30 = np.uint64(30)
_U27 = np.uint64(27)
_U31 = np.uint64(31)
_U11 = np.uint64(11)
_INV53 = float(2.0**-53)

COORD_MIN = -(2**31)
COORD_MAX = 2**31 - 1


def _mix64(x: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer; a bijection on uint64 (wrapping is intended)."""
    with np.errstate(over="ignore"):
        z = x + _GAMMA
        z = (z ^ (z >> _U30)) * _MIX1
        z = (z ^ (z >> _U27)) * _MIX2
        return z ^ (z >> _U31)


def _as_u64(values: np.ndarray) -> np.ndarray:
    """Two's-complement reinterpretation of signed coordinates."""
    return values.astype(np.int64).view(np.uint64)


@dataclass(frozen=True)
class NoiseField:
    """Deterministic infinite random field with N(0,1) marginals per sample.

    Args:
        seed: 64-bit seed selecting the field.
        channels: number of independent noise channels.
    """

    seed: int
    channels: int = 8

    def __post_init__(self) -> None:
        if self.channels < 1:
            raise ValueError(f"channels must be >= 1, got {self.channels}")

    def sample_crop(
        self,
        origin: tuple[int, int],
        size: tuple[int, int],
        dtype=np.float32,
    ) -> np.ndarray:
        """Samples the rectangular crop at ``origin`` of ``size`` (width, height).

        crop[c, i, j] is the field value at channel c, x = origin_x + j,
        y = origin_y + i. Pure in (seed, origin, size); negative coordinates
        are valid.

        Returns:
            Array of shape (channels, height, width).
        """
        width, height = int(size[0]), int(size[1])
        if width < 1 or height < 1:
            raise ValueError(f"crop size must be positive, got {size}")
        x0, y0 = int(origin[0]), int(origin[1])
        if not (COORD_MIN <= x0 and x0 + width - 1 <= COORD_MAX):
            raise ValueError(f"x range [{x0}, {x0 + width}) outside signed 32-bit")
        if not (COORD_MIN <= y0 and y0 + height - 1 <= COORD_MAX):
            raise ValueError(f"y range [{y0}, {y0 + height}) outside signed 32-bit")

        ux = _as_u64(x0 + np.arange(width, dtype=np.int64))
        uy = _as_u64(y0 + np.arange(height, dtype=np.int64))
        seed_key = _mix64(np.uint64(self.seed & 0xFFFFFFFFFFFFFFFF))

        out = np.empty((self.channels, height, width), dtype=np.float64)
        for c in range(self.channels):
            chan_key = _mix64(seed_key ^ np.uint64(c))
            hx = _mix64(chan_key ^ ux)  # (width,)
            h = _mix64(hx[None, :] ^ uy[:, None])  # (height, width)
            h2 = _mix64(h ^ _LANE2)
            # Box-Muller on two hashed uniforms; u1 in (0,1] keeps log finite.
            u1 = ((h >> _U11) + np.uint64(1)).astype(np.float64) * _INV53
            u2 = (h2 >> _U11).astype(np.float64) * _INV53
            out[c] = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        return out.astype(dtype, copy=False)
