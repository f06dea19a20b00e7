"""Coordinate MLP for geometry and view-dependent color, with exact backprop.

Parameters live in one flat float64 vector; layers are views into it. The
geometry trunk maps ``(coordinate, encoding)`` to a geometry logit and a
feature vector; the color head maps ``(feature, direction, encoding)`` to RGB.
"""

from __future__ import annotations

import math
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from cqfield.encoding import FrequencyBand, direction_input_size, position_input_size

CHECKPOINT_MAGIC = b"CQFLD\x00\x00\x01"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Architecture:
    pos_freqs: int = 6
    dir_freqs: int = 4
    geo_layers: int = 4
    geo_width: int = 64
    feature_dim: int = 32
    color_layers: int = 2
    color_width: int = 64
    init_prior: float = 1.0 / (1.0 + math.exp(2.0))

    def __post_init__(self):
        for f in ("pos_freqs", "dir_freqs", "geo_layers", "geo_width", "color_layers", "color_width"):
            if getattr(self, f) < 1:
                raise ValueError(f"architecture field {f} must be >= 1")
        if self.feature_dim < 0:
            raise ValueError("feature_dim must be >= 0")
        if not 0.0 < self.init_prior < 1.0:
            raise ValueError("init_prior must lie in (0, 1)")

    @property
    def pos_dim(self) -> int:
        return position_input_size(FrequencyBand(self.pos_freqs))

    @property
    def dir_dim(self) -> int:
        return direction_input_size(FrequencyBand(self.dir_freqs))

    def layer_shapes(self) -> list[tuple[int, int]]:
        geo = [self.pos_dim] + [self.geo_width] * self.geo_layers + [1 + self.feature_dim]
        col = [self.feature_dim + self.dir_dim] + [self.color_width] * self.color_layers + [3]
        return list(zip(geo[:-1], geo[1:])) + list(zip(col[:-1], col[1:]))

    @property
    def num_geo_linear(self) -> int:
        return self.geo_layers + 1

    @property
    def num_params(self) -> int:
        return sum(i * o + o for i, o in self.layer_shapes())

    def to_text(self) -> str:
        return "".join(f"{k}={v!r}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str) -> "Architecture":
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, val = line.partition("=")
            if key not in types:
                raise ValueError(f"unknown architecture key {key!r}")
            kw[key] = float(val) if key == "init_prior" else int(val)
        return cls(**kw)


@dataclass
class FieldParams:
    arch: Architecture
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.arch.num_params,):
            raise ValueError(
                f"parameter vector has shape {self.values.shape}, architecture needs ({self.arch.num_params},)"
            )

    def layers(self, vec: np.ndarray | None = None) -> list[tuple[np.ndarray, np.ndarray]]:
        """``(W, b)`` views into ``vec`` (defaults to the parameters)."""
        vec = self.values if vec is None else vec
        out, off = [], 0
        for i, o in self.arch.layer_shapes():
            W = vec[off:off + i * o].reshape(i, o)
            off += i * o
            b = vec[off:off + o]
            off += o
            out.append((W, b))
        return out

    def copy(self) -> "FieldParams":
        return FieldParams(self.arch, self.values.copy())


@dataclass
class FieldOutput:
    geometry: np.ndarray  # (N,) raw logit / pre-activation density
    color: np.ndarray  # (N, 3) in [0, 1]
    feature: np.ndarray  # (N, F)


class GradientTape:
    """Gradient accumulator plus the activations of the last recorded forward."""

    def __init__(self, params: FieldParams):
        self.grad = np.zeros_like(params.values)
        self._cache = None
        self._arch = params.arch

    def zero(self):
        self.grad[:] = 0.0


def _softplus(x):
    """Softplus and its slope (the logistic function), without branches."""
    e = np.abs(x)
    np.negative(e, out=e)
    np.exp(e, out=e)
    e += 1.0
    out = np.log(e)
    out += np.maximum(x, 0.0)
    return out, _sigmoid(x)


def _sigmoid(x):
    with np.errstate(over="ignore"):
        s = np.exp(-x)
    s += 1.0
    return np.reciprocal(s, out=s)


def init_params(seed: int, arch: Architecture) -> FieldParams:
    """Glorot-uniform weights and zero biases; the geometry output starts at ``logit(init_prior)`` everywhere."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 0x1A17])))
    params = FieldParams(arch, np.zeros(arch.num_params))
    for W, b in params.layers():
        a = math.sqrt(6.0 / (W.shape[0] + W.shape[1]))
        W[...] = rng.uniform(-a, a, size=W.shape)
    W_geo, b_geo = params.layers()[arch.num_geo_linear - 1]
    # zero geometry column: the initial occupancy is the prior at every point
    W_geo[:, 0] = 0.0
    b_geo[0] = math.log(arch.init_prior / (1.0 - arch.init_prior))
    return params


def field_forward(params: FieldParams, pos_in: np.ndarray, dir_in: np.ndarray,
                  tape: GradientTape | None = None) -> FieldOutput:
    arch = params.arch
    pos_in = np.asarray(pos_in, dtype=np.float64)
    dir_in = np.asarray(dir_in, dtype=np.float64)
    if pos_in.ndim != 2 or pos_in.shape[1] != arch.pos_dim:
        raise ValueError(f"position input must have shape (N, {arch.pos_dim}), got {pos_in.shape}")
    if dir_in.shape != (pos_in.shape[0], arch.dir_dim):
        raise ValueError(f"direction input must have shape ({pos_in.shape[0]}, {arch.dir_dim}), got {dir_in.shape}")

    layers = params.layers()
    ng = arch.num_geo_linear
    inputs, slopes = [], []

    h = pos_in
    for li in range(ng):
        W, b = layers[li]
        inputs.append(h)
        z = h @ W + b
        if li < ng - 1:
            h, s = _softplus(z)
            slopes.append(s)
        else:
            h = z
    geometry = h[:, 0]
    feature = h[:, 1:]

    h = np.concatenate([feature, dir_in], axis=1)
    for li in range(ng, len(layers)):
        W, b = layers[li]
        inputs.append(h)
        z = h @ W + b
        if li < len(layers) - 1:
            h, s = _softplus(z)
            slopes.append(s)
        else:
            h = _sigmoid(z)
    color = h

    if tape is not None:
        if tape._arch != arch:
            raise ValueError("tape was created for a different architecture")
        tape._cache = (inputs, slopes, color, params.values.copy())
    return FieldOutput(geometry=geometry, color=color, feature=feature)


def field_backward(params: FieldParams, tape: GradientTape, d_geometry, d_color, d_feature=None) -> None:
    """Accumulate ``dLoss/dtheta`` into ``tape.grad`` for the last forward on ``tape``."""
    if tape._cache is None:
        raise RuntimeError("backward called without a recorded forward pass")
    inputs, slopes, color, snapshot = tape._cache
    if not np.array_equal(snapshot, params.values):
        raise RuntimeError("parameters changed since the recorded forward pass")
    arch = params.arch
    n = color.shape[0]
    d_geometry = np.asarray(d_geometry, dtype=np.float64).reshape(n)
    d_color = np.asarray(d_color, dtype=np.float64).reshape(n, 3)

    layers = params.layers()
    grads = params.layers(tape.grad)
    ng = arch.num_geo_linear
    nl = len(layers)

    # color head, output layer is sigmoid
    g = d_color * color * (1.0 - color)
    si = len(slopes) - 1
    for li in range(nl - 1, ng - 1, -1):
        W, _ = layers[li]
        gW, gb = grads[li]
        gW += inputs[li].T @ g
        gb += g.sum(axis=0)
        g = g @ W.T
        if li > ng:
            g *= slopes[si]
            si -= 1
    g_feature = g[:, :arch.feature_dim]
    if d_feature is not None:
        g_feature = g_feature + np.asarray(d_feature, dtype=np.float64).reshape(n, arch.feature_dim)

    g = np.concatenate([d_geometry[:, None], g_feature], axis=1)
    for li in range(ng - 1, -1, -1):
        W, _ = layers[li]
        gW, gb = grads[li]
        gW += inputs[li].T @ g
        gb += g.sum(axis=0)
        if li > 0:
            g = g @ W.T
            g *= slopes[si]
            si -= 1


def save_checkpoint(path, params: FieldParams) -> None:
    arch_text = params.arch.to_text().encode("utf-8")
    header = CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(arch_text)) + arch_text
    body = params.values.astype("<f8").tobytes()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(header + struct.pack("<Q", len(params.values)) + body)
    tmp.replace(path)


def load_checkpoint(path) -> FieldParams:
    path = Path(path)
    data = path.read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a field checkpoint (bad magic)")
    off = len(CHECKPOINT_MAGIC)
    try:
        version, n_text = struct.unpack_from("<II", data, off)
        off += 8
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        arch = Architecture.from_text(data[off:off + n_text].decode("utf-8"))
        off += n_text
        (count,) = struct.unpack_from("<Q", data, off)
        off += 8
    except struct.error as exc:
        raise ValueError(f"{path}: truncated checkpoint header") from exc
    if count != arch.num_params or len(data) - off != 8 * count:
        raise ValueError(f"{path}: parameter block does not match the stored architecture")
    values = np.frombuffer(data, dtype="<f8", count=count, offset=off).astype(np.float64)
    return FieldParams(arch, values)
