"""Training loop: photometric loss, Adam, deterministic ray batches, logging."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from cqfield.encoding import CoordMode, FrequencyBand
from cqfield.field import Architecture, FieldParams, GradientTape, init_params, save_checkpoint
from cqfield.grid import GridSpec
from cqfield.render import COMPOSITING, Renderer, mse_to_psnr
from cqfield.scene import Dataset

log = logging.getLogger(__name__)

# RNG purposes; keys of the counter-based streams are (seed, purpose, counter)
STREAM_BATCH = 1
STREAM_MONITOR = 2
STREAM_STATS = 3
STREAM_EVAL = 4


def stream(seed: int, purpose: int, counter: int = 0) -> np.random.Generator:
    """Independent Philox generator keyed by ``(seed, purpose, counter)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(purpose), int(counter)])))


class NumericalAbort(RuntimeError):
    def __init__(self, iteration: int, rays):
        self.iteration = iteration
        self.rays = list(rays)
        super().__init__(f"non-finite loss at iteration {iteration} (ray slots {self.rays[:16]})")


class ConfigError(ValueError):
    pass


def _rgb(text) -> tuple | None:
    if text is None or text == "" or text == "scene":
        return None
    if isinstance(text, (tuple, list)):
        vals = tuple(float(v) for v in text)
    else:
        vals = tuple(float(v) for v in str(text).split(","))
    if len(vals) != 3:
        raise ValueError("expected three comma-separated values")
    return vals


@dataclass
class TrainConfig:
    iterations: int = 5000
    batch_rays: int = 512
    samples_per_ray: int = 64
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 1
    mode: str = "discrete"
    compositing: str = "occupancy"
    grid_lo: float = -1.0
    grid_hi: float = 1.0
    grid_resolution: int = 256
    pos_freqs: int = 6
    dir_freqs: int = 4
    background: tuple | None = None
    log_every: int = 500
    checkpoint_every: int = 1000
    holdout_view: int = -1
    geo_layers: int = 4
    geo_width: int = 64
    feature_dim: int = 32
    color_layers: int = 2
    color_width: int = 64
    init_prior: float = 1.0 / (1.0 + math.exp(2.0))

    def __post_init__(self):
        self.mode = CoordMode(self.mode).value
        if self.compositing not in COMPOSITING:
            raise ConfigError(f"render.compositing must be one of {COMPOSITING}")
        for name in ("iterations", "log_every", "checkpoint_every"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{KEY_OF[name]} must be >= 0")
        for name in ("batch_rays", "learning_rate", "adam_eps", "grid_resolution"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{KEY_OF[name]} must be positive")
        if self.samples_per_ray < 2:
            raise ConfigError("render.samples_per_ray must be >= 2")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        self.background = _rgb(self.background)

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.grid_lo, self.grid_hi, self.grid_resolution)

    @property
    def architecture(self) -> Architecture:
        return Architecture(self.pos_freqs, self.dir_freqs, self.geo_layers, self.geo_width, self.feature_dim,
                            self.color_layers, self.color_width, self.init_prior)

    def renderer(self, background=(0.0, 0.0, 0.0)) -> Renderer:
        bg = self.background if self.background is not None else tuple(background)
        return Renderer(self.grid, FrequencyBand(self.pos_freqs), FrequencyBand(self.dir_freqs), CoordMode(self.mode),
                        self.compositing, self.samples_per_ray, bg)

    def with_overrides(self, **kw) -> "TrainConfig":
        return replace(self, **kw)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "background":
                v = "scene" if v is None else ",".join(repr(x) for x in v)
            lines.append(f"{KEY_OF[f.name]}={v}")
        return "\n".join(lines) + "\n"


# flat config keys accepted in files and --set overrides
CONFIG_KEYS = {
    "train.iterations": "iterations",
    "train.batch_rays": "batch_rays",
    "train.learning_rate": "learning_rate",
    "train.adam_beta1": "adam_beta1",
    "train.adam_beta2": "adam_beta2",
    "train.adam_eps": "adam_eps",
    "train.seed": "seed",
    "train.log_every": "log_every",
    "train.checkpoint_every": "checkpoint_every",
    "train.holdout_view": "holdout_view",
    "grid.lo": "grid_lo",
    "grid.hi": "grid_hi",
    "grid.resolution": "grid_resolution",
    "encoding.pos_freqs": "pos_freqs",
    "encoding.dir_freqs": "dir_freqs",
    "encoding.mode": "mode",
    "render.samples_per_ray": "samples_per_ray",
    "render.background": "background",
    "render.compositing": "compositing",
    "model.geo_layers": "geo_layers",
    "model.geo_width": "geo_width",
    "model.feature_dim": "feature_dim",
    "model.color_layers": "color_layers",
    "model.color_width": "color_width",
    "model.init_prior": "init_prior",
}
KEY_OF = {v: k for k, v in CONFIG_KEYS.items()}
# render.mode is accepted as an alias of encoding.mode
ALIASES = {"render.mode": "encoding.mode"}


def parse_config_text(text: str, source: str = "config") -> dict:
    """Parse ``key=value`` lines into field values. ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        out.update(coerce_items({key: val}, f"{source}:{lineno}"))
    return out


def coerce_items(items: dict, source: str = "config") -> dict:
    types = {f.name: f.type for f in fields(TrainConfig)}
    out = {}
    for key, val in items.items():
        canonical = ALIASES.get(key, key)
        if canonical not in CONFIG_KEYS:
            raise ConfigError(f"{source}: unknown config key {key!r}")
        name = CONFIG_KEYS[canonical]
        if name in out and out[name] != val:
            raise ConfigError(f"{source}: conflicting values for {canonical!r}")
        kind = types[name]
        try:
            if name == "background":
                out[name] = _rgb(val)
            elif kind == "int":
                out[name] = int(val)
            elif kind == "float":
                out[name] = float(val)
            else:
                out[name] = str(val)
        except ValueError as exc:
            raise ConfigError(f"{source}: bad value for {canonical!r}: {val!r}") from exc
    return out


def load_config(path=None, overrides: dict | None = None) -> TrainConfig:
    values = {}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text(), str(path)))
    values.update(overrides or {})
    try:
        return TrainConfig(**values)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_update(values: np.ndarray, grad: np.ndarray, state: AdamState, lr: float, beta1: float, beta2: float,
                eps: float) -> None:
    """One bias-corrected Adam step, in place."""
    state.step += 1
    state.m *= beta1
    state.m += (1.0 - beta1) * grad
    state.v *= beta2
    state.v += (1.0 - beta2) * (grad * grad)
    m_hat = state.m / (1.0 - beta1**state.step)
    v_hat = state.v / (1.0 - beta2**state.step)
    values -= lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class RayTable:
    """Pixel-center rays and colors of every view, shape ``(V, P, 3)``."""

    origins: np.ndarray
    dirs: np.ndarray
    colors: np.ndarray
    views: np.ndarray = field(default=None)  # views eligible for sampling

    @classmethod
    def from_dataset(cls, dataset: Dataset, views=None) -> "RayTable":
        o, d, c = [], [], []
        for k, cam in enumerate(dataset.cameras):
            ok, dk = cam.pixel_rays(np.arange(cam.width * cam.height))
            o.append(ok)
            d.append(dk)
            c.append(dataset.image_float(k).reshape(-1, 3))
        views = np.arange(len(dataset.cameras)) if views is None else np.asarray(views)
        return cls(np.stack(o), np.stack(d), np.stack(c), views)


@dataclass
class RayBatch:
    origins: np.ndarray
    dirs: np.ndarray
    colors: np.ndarray
    view: np.ndarray
    pixel: np.ndarray


def sample_ray_batch(source, batch_rays: int, rng: np.random.Generator) -> RayBatch:
    """Uniform (view, pixel) draws; ``source`` is a :class:`RayTable` or a dataset."""
    table = source if isinstance(source, RayTable) else RayTable.from_dataset(source)
    if len(table.views) == 0:
        raise ValueError("no views to sample rays from")
    view = table.views[rng.integers(0, len(table.views), size=batch_rays)]
    pixel = rng.integers(0, table.origins.shape[1], size=batch_rays)
    return RayBatch(table.origins[view, pixel], table.dirs[view, pixel], table.colors[view, pixel], view, pixel)


def train_step(params: FieldParams, adam: AdamState, batch: RayBatch, config: TrainConfig, renderer: Renderer,
               rng: np.random.Generator, iteration: int = 0) -> float:
    """Render, average the squared errors, backprop and take one Adam step.

    Returns the mean loss before the update.
    """
    tape = GradientTape(params)
    res = renderer.render(params, batch.origins, batch.dirs, rng, tape=tape)
    diff = res.color - batch.colors
    per_ray = np.sum(diff * diff, axis=1)
    if not np.all(np.isfinite(per_ray)):
        raise NumericalAbort(iteration, np.flatnonzero(~np.isfinite(per_ray)))
    loss = float(per_ray.mean())
    renderer.backward(params, tape, res, 2.0 * diff / len(per_ray))
    if not np.all(np.isfinite(tape.grad)):
        raise NumericalAbort(iteration, range(len(per_ray)))
    adam_update(params.values, tape.grad, adam, config.learning_rate, config.adam_beta1, config.adam_beta2,
                config.adam_eps)
    return loss


def render_view(params: FieldParams, renderer: Renderer, camera, chunk: int = 4096) -> np.ndarray:
    """Deterministic (midpoint-sampled) render of a whole view, ``(H, W, 3)``."""
    pix = np.arange(camera.width * camera.height)
    o, d = camera.pixel_rays(pix)
    out = np.empty((len(pix), 3))
    for s in range(0, len(pix), chunk):
        out[s:s + chunk] = renderer.render(params, o[s:s + chunk], d[s:s + chunk], strategy="midpoint").color
    return out.reshape(camera.height, camera.width, 3)


def holdout_psnr(params: FieldParams, renderer: Renderer, dataset: Dataset, view: int) -> float:
    img = render_view(params, renderer, dataset.cameras[view])
    return mse_to_psnr(float(np.mean((img - dataset.image_float(view)) ** 2)))


def resolve_holdout(dataset: Dataset, config: TrainConfig) -> int:
    n = len(dataset.cameras)
    h = config.holdout_view % n if config.holdout_view < 0 else config.holdout_view
    if not 0 <= h < n:
        raise ConfigError(f"train.holdout_view {config.holdout_view} out of range for {n} views")
    return h


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)  # (iter, loss, psnr_holdout)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "loss", "psnr_holdout"])
            for it, loss, psnr in self.rows:
                w.writerow([it, repr(loss), repr(psnr)])


def train(dataset: Dataset, config: TrainConfig, out_dir=None, callback=None,
          params: FieldParams | None = None) -> tuple[FieldParams, TrainLog]:
    """Run ``config.iterations`` Adam steps on all views except the held-out one.

    Batch ``k`` and its depth jitter come from the stream keyed by
    ``(seed, STREAM_BATCH, k)``, so two runs that differ only in mode see the
    same rays and the same continuous samples.
    """
    out_dir = Path(out_dir) if out_dir is not None else None
    params = params if params is not None else init_params(config.seed, config.architecture)
    renderer = config.renderer(dataset.scene.background)
    holdout = resolve_holdout(dataset, config)
    train_views = [v for v in range(len(dataset.cameras)) if v != holdout]
    table = RayTable.from_dataset(dataset, train_views)
    adam = AdamState.zeros(len(params.values))
    tlog = TrainLog()
    window = []

    for it in range(1, config.iterations + 1):
        rng = stream(config.seed, STREAM_BATCH, it)
        batch = sample_ray_batch(table, config.batch_rays, rng)
        window.append(train_step(params, adam, batch, config, renderer, rng, it))
        if callback is not None:
            callback(it, params)
        last = it == config.iterations
        if (config.log_every and it % config.log_every == 0) or last:
            psnr = holdout_psnr(params, renderer, dataset, holdout)
            tlog.rows.append((it, float(np.mean(window)), psnr))
            log.info("iter %d loss %.6f holdout psnr %.2f dB", it, tlog.rows[-1][1], psnr)
            window = []
        if out_dir is not None and ((config.checkpoint_every and it % config.checkpoint_every == 0) or last):
            save_checkpoint(out_dir / "checkpoint.bin", params)
            tlog.write_csv(out_dir / "train_log.csv")

    if out_dir is not None and config.iterations == 0:
        save_checkpoint(out_dir / "checkpoint.bin", params)
        tlog.write_csv(out_dir / "train_log.csv")
    return params, tlog
