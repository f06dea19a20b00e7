"""Sinusoidal positional encoding of continuous and quantized coordinates."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from cqfield.grid import GridSpec


class CoordMode(str, Enum):
    """Which coordinate feeds the network and which one feeds the encoding.

    ``mixed_pe_continuous`` pairs discrete coordinates with the encoding of the
    continuous ones; ``mixed_coord_continuous`` is the reverse pairing.
    """

    CONTINUOUS = "continuous"
    DISCRETE = "discrete"
    MIXED_PE_CONTINUOUS = "mixed_pe_continuous"
    MIXED_COORD_CONTINUOUS = "mixed_coord_continuous"

    @property
    def quantizes(self) -> bool:
        return self is not CoordMode.CONTINUOUS

    @property
    def discrete_coord(self) -> bool:
        return self in (CoordMode.DISCRETE, CoordMode.MIXED_PE_CONTINUOUS)

    @property
    def discrete_pe(self) -> bool:
        return self in (CoordMode.DISCRETE, CoordMode.MIXED_COORD_CONTINUOUS)


@dataclass(frozen=True)
class FrequencyBand:
    """``count`` frequencies ``2**(l-1) * pi`` for ``l = 1..count``."""

    count: int

    def __post_init__(self):
        if int(self.count) != self.count or self.count < 1:
            raise ValueError(f"frequency count must be a positive integer, got {self.count}")

    @property
    def frequencies(self) -> np.ndarray:
        # scaling pi by exact powers of two keeps every ratio exactly 2
        return np.ldexp(np.pi, np.arange(self.count))

    def encoded_size(self, dim: int) -> int:
        return 2 * self.count * dim


def encode(band: FrequencyBand, x) -> np.ndarray:
    """Encode the last axis of ``x``.

    Each element expands to ``(sin w1 x, cos w1 x, ..., sin wL x, cos wL x)``
    and the per-element blocks are concatenated in element order.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot encode non-finite coordinates")
    scaled = x[..., :, None] * band.frequencies  # (..., d, L)
    out = np.empty(x.shape + (band.count, 2))
    out[..., 0] = np.sin(scaled)
    out[..., 1] = np.cos(scaled)
    return out.reshape(x.shape[:-1] + (2 * band.count * x.shape[-1],))


def encode_discrete(band: FrequencyBand, grid: GridSpec, q) -> np.ndarray:
    """Encoding of the nearest voxel center; constant inside each voxel."""
    q = np.asarray(q, dtype=np.float64)
    if not np.all(np.isfinite(q)):
        raise ValueError("cannot encode non-finite coordinates")
    return encode(band, grid.quantize(q)[1])


def position_input(band: FrequencyBand, mode: CoordMode, continuous, discrete) -> np.ndarray:
    """Network input ``(coordinate, encoding)`` for the chosen coordinate mode.

    ``discrete`` must already hold the quantized counterpart of ``continuous``.
    """
    mode = CoordMode(mode)
    coord = discrete if mode.discrete_coord else continuous
    pe_src = discrete if mode.discrete_pe else continuous
    coord = np.asarray(coord, dtype=np.float64)
    return np.concatenate([coord, encode(band, pe_src)], axis=-1)


def direction_input(band: FrequencyBand, d) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    return np.concatenate([d, encode(band, d)], axis=-1)


def position_input_size(band: FrequencyBand) -> int:
    return 3 + band.encoded_size(3)


def direction_input_size(band: FrequencyBand) -> int:
    return 3 + band.encoded_size(3)
