"""Ray sampling, volume compositing and the photometric loss.

Two compositing rules are supported. ``density`` uses
``alpha_i = 1 - exp(-sigma_i * delta_i)`` with ``T_i = exp(-sum_{j<i} sigma_j delta_j)``;
``occupancy`` uses the occupancy itself as alpha with ``T_i = prod_{j<i} (1 - o_j)``.
In quantized modes the network sees one evaluation per deduplicated run and
``delta`` is the merged length of the continuous segments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cqfield.encoding import CoordMode, FrequencyBand, direction_input, position_input
from cqfield.field import FieldParams, GradientTape, _sigmoid, _softplus, field_backward, field_forward
from cqfield.grid import GridSpec, RaySampleRun, RunBatch, dedup_ray_batch

COMPOSITING = ("occupancy", "density")
STRATEGIES = ("stratified", "midpoint")


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_near: float
    t_far: float

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")
        if not 0.0 <= self.t_near < self.t_far:
            raise ValueError(f"need 0 <= t_near < t_far, got ({self.t_near}, {self.t_far})")
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64))
        object.__setattr__(self, "direction", d)


@dataclass
class RenderResult:
    color: np.ndarray
    weights: np.ndarray
    transmittances: np.ndarray
    accumulated_opacity: float | np.ndarray


def ray_box(origins, dirs, lo: float, hi: float):
    """Slab intersection with ``[lo, hi]^3``; returns ``(t_near, t_far, hit)``, ``t_near >= 0``."""
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (lo - origins) * inv
        t1 = (hi - origins) * inv
    tmin = np.nan_to_num(np.minimum(t0, t1), nan=-np.inf)
    tmax = np.nan_to_num(np.maximum(t0, t1), nan=np.inf)
    t_near = np.maximum(tmin.max(axis=-1), 0.0)
    t_far = tmax.min(axis=-1)
    hit = t_far > t_near
    t_far = np.where(hit, t_far, t_near + 1.0)
    return t_near, t_far, hit


def sample_depths(t_near, t_far, count: int, rng: np.random.Generator | None, strategy: str = "stratified"):
    """Depths ``(B, count)``: one per equal-width bin of ``[t_near, t_far]``."""
    if count < 2:
        raise ValueError("need at least 2 samples per ray")
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown sampling strategy {strategy!r}")
    t_near = np.atleast_1d(np.asarray(t_near, dtype=np.float64))
    t_far = np.atleast_1d(np.asarray(t_far, dtype=np.float64))
    if strategy == "midpoint":
        u = np.full((len(t_near), count), 0.5)
    else:
        u = rng.random((len(t_near), count))
    width = (t_far - t_near)[:, None] / count
    return t_near[:, None] + (np.arange(count) + u) * width


def sample_ray(ray: Ray, count: int, rng: np.random.Generator | None = None, strategy: str = "stratified"):
    t = sample_depths(ray.t_near, ray.t_far, count, rng, strategy)[0]
    return ray.origin + t[:, None] * ray.direction


def _transmittance(alpha, sigma_delta=None):
    if sigma_delta is not None:
        tau = np.cumsum(sigma_delta, axis=-1)
        T = np.exp(-np.concatenate([np.zeros_like(tau[..., :1]), tau[..., :-1]], axis=-1))
    else:
        keep = np.cumprod(1.0 - alpha, axis=-1)
        T = np.concatenate([np.ones_like(keep[..., :1]), keep[..., :-1]], axis=-1)
    return T


def _composite(alpha, colors, background, sigma_delta=None):
    T = _transmittance(alpha, sigma_delta)
    weights = T * alpha
    acc = weights.sum(axis=-1)
    rgb = (weights[..., None] * colors).sum(axis=-2) + (1.0 - acc)[..., None] * np.asarray(background)
    return rgb, weights, T, acc


def _deltas(runs) -> np.ndarray:
    if len(runs) and isinstance(runs[0], RaySampleRun):
        return np.array([r.delta for r in runs], dtype=np.float64)
    return np.asarray(runs, dtype=np.float64)


def composite_density(runs, sigmas, colors, background=(0.0, 0.0, 0.0)) -> RenderResult:
    """Density compositing of one ray; ``runs`` is a run list or an array of deltas."""
    delta = _deltas(runs)
    sigmas = np.asarray(sigmas, dtype=np.float64)
    colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
    if not (len(delta) == len(sigmas) == len(colors)):
        raise ValueError("runs, sigmas and colors must have equal length")
    if np.any(sigmas < 0):
        raise ValueError("negative density")
    sd = sigmas * delta
    alpha = -np.expm1(-sd)
    rgb, w, T, acc = _composite(alpha, colors, background, sigma_delta=sd)
    return RenderResult(rgb, w, T, float(acc))


def composite_occupancy(runs, occupancies, colors, background=(0.0, 0.0, 0.0)) -> RenderResult:
    occ = np.asarray(occupancies, dtype=np.float64)
    colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
    if not (len(runs) == len(occ) == len(colors)):
        raise ValueError("runs, occupancies and colors must have equal length")
    if np.any((occ < 0) | (occ > 1)):
        raise ValueError("occupancy outside [0, 1]")
    rgb, w, T, acc = _composite(occ, colors, background)
    return RenderResult(rgb, w, T, float(acc))


def rendering_loss(rendered, gt_color) -> float:
    c = rendered.color if isinstance(rendered, RenderResult) else np.asarray(rendered)
    diff = np.asarray(gt_color, dtype=np.float64) - c
    return float(np.sum(diff * diff))


@dataclass
class BatchRender:
    color: np.ndarray  # (B, 3)
    weights: np.ndarray  # (B, M)
    transmittances: np.ndarray  # (B, M)
    accumulated_opacity: np.ndarray  # (B,)
    runs: RunBatch
    geometry: np.ndarray  # raw network geometry per run
    run_color: np.ndarray
    alpha: np.ndarray  # (B, M)
    _act: np.ndarray = field(repr=False, default=None)  # occupancy or sigma per run


@dataclass(frozen=True)
class Renderer:
    """Renders batches of rays through the field in one coordinate mode."""

    grid: GridSpec
    pos_band: FrequencyBand
    dir_band: FrequencyBand
    mode: CoordMode = CoordMode.DISCRETE
    compositing: str = "occupancy"
    samples_per_ray: int = 64
    background: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "mode", CoordMode(self.mode))
        if self.compositing not in COMPOSITING:
            raise ValueError(f"unknown compositing {self.compositing!r}")
        if self.samples_per_ray < 2:
            raise ValueError("need at least 2 samples per ray")

    def sample(self, origins, dirs, rng, strategy="stratified"):
        """Sample points and build runs; draws from ``rng`` identically in every mode."""
        tn, tf, hit = ray_box(origins, dirs, self.grid.lo, self.grid.hi)
        t = sample_depths(tn, tf, self.samples_per_ray, rng, strategy)
        points = origins[:, None, :] + t[..., None] * dirs[:, None, :]
        terminal = (tf - tn) / self.samples_per_ray
        return dedup_ray_batch(self.grid, points, hit, terminal, merge=self.mode.quantizes)

    def render(self, params: FieldParams, origins, dirs, rng=None, strategy="stratified",
               tape: GradientTape | None = None, runs: RunBatch | None = None) -> BatchRender:
        origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
        dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
        if runs is None:
            runs = self.sample(origins, dirs, rng, strategy)
        B, M = runs.slot.shape
        pos_in = position_input(self.pos_band, self.mode, runs.rep_point, runs.discrete_point)
        dir_in = direction_input(self.dir_band, dirs)[runs.ray]
        out = field_forward(params, pos_in, dir_in, tape)

        z = out.geometry
        mask = runs.slot >= 0
        sl = np.where(mask, runs.slot, 0)
        colors = np.where(mask[..., None], out.color[sl], 0.0)
        if self.compositing == "occupancy":
            act = _sigmoid(z)
            alpha = np.where(mask, act[sl], 0.0)
            sd = None
        else:
            act = _softplus(z)[0]
            sd = np.where(mask, (act * runs.delta)[sl], 0.0)
            alpha = -np.expm1(-sd)
        rgb, w, T, acc = _composite(alpha, colors, self.background, sigma_delta=sd)
        return BatchRender(rgb, w, T, acc, runs, z, out.color, alpha, act)

    def backward(self, params: FieldParams, tape: GradientTape, result: BatchRender, d_color) -> None:
        """Push ``dLoss/dC`` (shape ``(B, 3)``) through compositing and the network."""
        runs = result.runs
        mask = runs.slot >= 0
        B, M = mask.shape
        d_color = np.asarray(d_color, dtype=np.float64).reshape(B, 3)
        sl = np.where(mask, runs.slot, 0)
        colors = np.where(mask[..., None], result.run_color[sl], 0.0)

        # d alpha_k = T_k (g.c_k - U_{k+1}),  U_k = a_k g.c_k + (1 - a_k) U_{k+1},  U_{M} = g.bg
        gc = np.einsum("bmc,bc->bm", colors, d_color)
        U = d_color @ np.asarray(self.background, dtype=np.float64)
        d_alpha = np.zeros((B, M))
        a, T = result.alpha, result.transmittances
        for k in range(M - 1, -1, -1):
            d_alpha[:, k] = T[:, k] * (gc[:, k] - U)
            U = a[:, k] * gc[:, k] + (1.0 - a[:, k]) * U

        n = len(runs.delta)
        d_run_alpha = np.zeros(n)
        d_run_color = np.zeros((n, 3))
        d_run_alpha[runs.slot[mask]] = d_alpha[mask]
        d_run_color[runs.slot[mask]] = result.weights[mask][:, None] * d_color[np.nonzero(mask)[0]]

        z, act = result.geometry, result._act
        if self.compositing == "occupancy":
            d_z = d_run_alpha * act * (1.0 - act)
        else:
            # alpha = 1 - exp(-softplus(z) delta)
            d_z = d_run_alpha * runs.delta * np.exp(-act * runs.delta) * _sigmoid(z)
        field_backward(params, tape, d_z, d_run_color)


def render_pixel(params: FieldParams, grid: GridSpec, bands, ray: Ray, mode=CoordMode.DISCRETE,
                 compositing="occupancy", samples_per_ray=64, rng=None, strategy="stratified",
                 background=(0.0, 0.0, 0.0)) -> RenderResult:
    """Render one ray; sampling is restricted to ``[t_near, t_far]`` of ``ray``."""
    pos_band, dir_band = bands
    renderer = Renderer(grid, pos_band, dir_band, mode, compositing, samples_per_ray, tuple(background))
    t = sample_depths(ray.t_near, ray.t_far, samples_per_ray, rng, strategy)
    points = ray.origin + t[..., None] * ray.direction
    runs = dedup_ray_batch(grid, points, np.array([True]),
                           np.array([(ray.t_far - ray.t_near) / samples_per_ray]), merge=renderer.mode.quantizes)
    res = renderer.render(params, ray.origin[None], ray.direction[None], runs=runs)
    return RenderResult(res.color[0], res.weights[0], res.transmittances[0], float(res.accumulated_opacity[0]))


def mse_to_psnr(mse: float) -> float:
    return float("inf") if mse <= 0 else float(-10.0 * np.log10(mse))
