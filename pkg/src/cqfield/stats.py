"""Counting experiments on a fixed set of monitored rays.

Two accumulated statistics are tracked in continuous and quantized form:

* how many distinct sample coordinates the network has been shown, and
* how often a monitored ray and its re-projection into a neighbouring view
  place samples on the same surface location (a multi-view "trigger").
"""

from __future__ import annotations

import csv
import math
from dataclasses import astuple, dataclass, field

import numpy as np

from cqfield.grid import GridSpec
from cqfield.render import ray_box, sample_depths
from cqfield.scene import Dataset, analytic_sdf, sphere_trace, trace_limit
from cqfield.train import STREAM_MONITOR, STREAM_STATS, stream

STATS_HEADER = ["iter", "uniq_cont", "uniq_disc", "log_uniq_cont", "log_uniq_disc", "cons_cont", "cons_disc",
                "log_cons_cont", "log_cons_disc"]
VISIBILITY_TOL = 1e-3


class KeySet:
    """Exact, growing set of fixed-width keys kept as one sorted numpy array."""

    def __init__(self, dtype):
        self._keys = np.empty(0, dtype=dtype)

    def __len__(self) -> int:
        return len(self._keys)

    def add(self, keys: np.ndarray) -> int:
        """Insert ``keys``; returns how many were new."""
        new = np.unique(keys)
        if len(self._keys):
            pos = np.searchsorted(self._keys, new)
            hit = pos < len(self._keys)
            hit[hit] = self._keys[pos[hit]] == new[hit]
            new, pos = new[~hit], pos[~hit]
            self._keys = np.insert(self._keys, pos, new)
        else:
            self._keys = new
        return len(new)


def float_keys(points: np.ndarray) -> np.ndarray:
    """Bit-exact 24-byte keys of float64 triples (``-0.0`` folded into ``0.0``)."""
    p = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3) + 0.0)
    return p.view(np.dtype((np.void, 24))).ravel()


@dataclass
class UniqueAccumulator:
    grid: GridSpec
    continuous: KeySet = field(default_factory=lambda: KeySet(np.dtype((np.void, 24))))
    discrete: KeySet = None

    def __post_init__(self):
        if self.discrete is None:
            self.discrete = KeySet(np.int64 if self.grid.flat_fits else np.dtype((np.void, 24)))

    def add(self, points: np.ndarray) -> tuple[int, int]:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        self.continuous.add(float_keys(points))
        self.discrete.add(self.grid.voxel_keys(self.grid.voxel_index(points)))
        return len(self.continuous), len(self.discrete)


def count_unique(points, grid: GridSpec, accumulator: UniqueAccumulator | None = None) -> UniqueAccumulator:
    """Fold one iteration's samples into ``accumulator`` (created when ``None``)."""
    acc = accumulator if accumulator is not None else UniqueAccumulator(grid)
    if acc.grid != grid:
        raise ValueError("accumulator was built for a different grid")
    acc.add(points)
    return acc


@dataclass
class MonitorSet:
    view: np.ndarray
    pixel: np.ndarray

    def __len__(self) -> int:
        return len(self.view)

    @classmethod
    def draw(cls, dataset: Dataset, size: int, seed: int) -> "MonitorSet":
        if size < 1:
            raise ValueError("monitor set needs at least one ray")
        rng = stream(seed, STREAM_MONITOR)
        cam = dataset.cameras[0]
        view = rng.integers(0, len(dataset.cameras), size=size)
        pixel = rng.integers(0, cam.width * cam.height, size=size)
        return cls(view, pixel)


def neighbor_views(cameras) -> np.ndarray:
    """Camera with the smallest azimuth difference to each camera (ties: lower index)."""
    az = np.array([c.azimuth() for c in cameras])
    diff = np.abs(az[:, None] - az[None, :]) % (2.0 * math.pi)
    diff = np.minimum(diff, 2.0 * math.pi - diff)
    np.fill_diagonal(diff, np.inf)
    # gaps equal up to round-off count as ties; argmax picks the lowest such index
    return np.argmax(diff <= diff.min(axis=1, keepdims=True) + 1e-9, axis=1)


@dataclass
class ProbeGeometry:
    """Per monitored ray: its own ray, its surface hit and the re-projected ray."""

    origin: np.ndarray
    dir: np.ndarray
    hits: np.ndarray  # ray hits the surface
    hit_point: np.ndarray
    origin2: np.ndarray
    dir2: np.ndarray
    paired: np.ndarray  # hit point visible from the neighbouring view


def probe_geometry(monitor: MonitorSet, dataset: Dataset) -> ProbeGeometry:
    scene, cams = dataset.scene, dataset.cameras
    n = len(monitor)
    origin, dirs = np.empty((n, 3)), np.empty((n, 3))
    t = np.zeros(n)
    hits = np.zeros(n, dtype=bool)
    for v in np.unique(monitor.view):
        sel = monitor.view == v
        o, d = cams[v].pixel_rays(monitor.pixel[sel])
        origin[sel], dirs[sel] = o, d
        t[sel], hits[sel] = sphere_trace(scene, o, d, trace_limit(cams[v], scene))
    hit_point = origin + t[:, None] * dirs

    nbr = neighbor_views(cams)[monitor.view]
    origin2 = np.array([cams[k].position for k in nbr], dtype=np.float64).reshape(n, 3)
    to_hit = hit_point - origin2
    dist = np.linalg.norm(to_hit, axis=1)
    dir2 = to_hit / np.maximum(dist, 1e-300)[:, None]
    paired = hits.copy()
    for k in np.unique(nbr):
        sel = (nbr == k) & hits
        if not sel.any():
            continue
        cam = cams[k]
        px, py, z = cam.project(hit_point[sel])
        inside = (z > 0) & (px >= 0) & (px < cam.width) & (py >= 0) & (py < cam.height)
        t2, hit2 = sphere_trace(scene, origin2[sel], dir2[sel], trace_limit(cam, scene))
        visible = hit2 & (np.abs(t2 - dist[sel]) < VISIBILITY_TOL)
        paired[sel] = inside & visible
    return ProbeGeometry(origin, dirs, hits, hit_point, origin2, dir2, paired)


def _sample_points(origin, dirs, grid: GridSpec, count: int, rng):
    tn, tf, inside = ray_box(origin, dirs, grid.lo, grid.hi)
    t = sample_depths(tn, tf, count, rng, "stratified")
    return origin[:, None, :] + t[..., None] * dirs[:, None, :], inside


def consistency_probe(geom: ProbeGeometry, points1: np.ndarray, points2: np.ndarray, scene, grid: GridSpec,
                      threshold_frac: float = 1.0 / 16.0) -> tuple[int, int]:
    """Count continuous and discrete triggers for one iteration's samples.

    ``points1``/``points2`` hold the samples ``(n, I, 3)`` of the monitored rays
    and of their re-projected partners. A sample is on the surface when
    ``|sdf| < interval / 2``. Each pair triggers at most once per mode.
    """
    sel = np.flatnonzero(geom.paired)
    if len(sel) == 0:
        return 0, 0
    p1, p2 = points1[sel], points2[sel]
    half = 0.5 * grid.interval
    on1 = np.abs(analytic_sdf(scene, p1)) < half
    on2 = np.abs(analytic_sdf(scene, p2)) < half
    both = on1.any(axis=1) & on2.any(axis=1)
    p1, p2, on1, on2 = p1[both], p2[both], on1[both], on2[both]
    if len(p1) == 0:
        return 0, 0
    pair_ok = on1[:, :, None] & on2[:, None, :]

    d = np.linalg.norm(p1[:, :, None, :] - p2[:, None, :, :], axis=-1)
    cont = np.any(pair_ok & (d < grid.interval * threshold_frac), axis=(1, 2))

    v1, v2 = grid.voxel_index(p1), grid.voxel_index(p2)
    same = np.all(v1[:, :, None, :] == v2[:, None, :, :], axis=-1)
    disc = np.any(pair_ok & same, axis=(1, 2))
    return int(cont.sum()), int(disc.sum())


@dataclass
class StatsRow:
    iteration: int
    unique_continuous: int
    unique_discrete: int
    consistency_continuous: int
    consistency_discrete: int


class StatsCollector:
    """Accumulates both counting experiments over iterations.

    Iteration ``k`` samples the monitored rays from the stream keyed by
    ``(seed, STREAM_STATS, k)``; it never touches the training streams.
    """

    def __init__(self, dataset: Dataset, grid: GridSpec, monitor_size: int = 1024, samples_per_ray: int = 64,
                 seed: int = 1, threshold_frac: float = 1.0 / 16.0):
        self.dataset = dataset
        self.grid = grid
        self.samples = samples_per_ray
        self.seed = seed
        self.threshold_frac = threshold_frac
        self.monitor = MonitorSet.draw(dataset, monitor_size, seed)
        self.geom = probe_geometry(self.monitor, dataset)
        self.unique = UniqueAccumulator(grid)
        self.cons_cont = 0
        self.cons_disc = 0
        self.rows: list[StatsRow] = []

    def step(self, iteration: int, params=None) -> StatsRow:
        rng = stream(self.seed, STREAM_STATS, iteration)
        g = self.geom
        pts1, in1 = _sample_points(g.origin, g.dir, self.grid, self.samples, rng)
        pts2, _ = _sample_points(g.origin2, g.dir2, self.grid, self.samples, rng)
        count_unique(pts1[g.hits & in1], self.grid, self.unique)
        c, d = consistency_probe(g, pts1, pts2, self.dataset.scene, self.grid, self.threshold_frac)
        self.cons_cont += c
        self.cons_disc += d
        row = StatsRow(iteration, len(self.unique.continuous), len(self.unique.discrete), self.cons_cont,
                       self.cons_disc)
        self.rows.append(row)
        return row

    def run(self, iterations: int) -> list[StatsRow]:
        for it in range(1, iterations + 1):
            self.step(it)
        return self.rows


def _ln(count: int) -> float:
    return math.log(max(count, 1))


def export_stats(rows, path) -> None:
    """CSV with raw counts and their natural logs (``ln(max(count, 1))``)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STATS_HEADER)
        for r in rows:
            w.writerow([r.iteration, r.unique_continuous, r.unique_discrete, repr(_ln(r.unique_continuous)),
                        repr(_ln(r.unique_discrete)), r.consistency_continuous, r.consistency_discrete,
                        repr(_ln(r.consistency_continuous)), repr(_ln(r.consistency_discrete))])


def read_stats(path) -> list[StatsRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != STATS_HEADER:
            raise ValueError(f"{path}: unexpected stats header {header}")
        return [StatsRow(int(r[0]), int(r[1]), int(r[2]), int(r[5]), int(r[6])) for r in reader]


def count_ratios(row: StatsRow) -> dict:
    """Continuous-over-discrete ratios of the accumulated counts."""
    def ratio(a, b):
        return a / b if b else float("inf") if a else float("nan")

    return {
        "unique_ratio": ratio(row.unique_continuous, row.unique_discrete),
        "consistency_ratio": ratio(row.consistency_continuous, row.consistency_discrete),
    }


def rows_as_tuples(rows) -> list[tuple]:
    return [astuple(r) for r in rows]
