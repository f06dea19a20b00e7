"""Virtual voxel grid and nearest-center quantization of coordinates.

The set of voxel centers is never stored. Every center is computed from the
cube bounds and the resolution, so a grid with ``R = 2**30`` costs the same
memory as one with ``R = 2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned cube ``[lo, hi]^3`` split into ``resolution`` voxels per axis."""

    lo: float = -1.0
    hi: float = 1.0
    resolution: int = 256

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)) or self.hi <= self.lo:
            raise ValueError(f"grid bounds must satisfy lo < hi, got [{self.lo}, {self.hi}]")
        if int(self.resolution) != self.resolution or self.resolution < 1:
            raise ValueError(f"grid resolution must be a positive integer, got {self.resolution}")
        object.__setattr__(self, "lo", float(self.lo))
        object.__setattr__(self, "hi", float(self.hi))
        object.__setattr__(self, "resolution", int(self.resolution))

    @property
    def interval(self) -> float:
        return (self.hi - self.lo) / self.resolution

    @property
    def num_voxels(self) -> int:
        return self.resolution**3

    def voxel_index(self, q) -> np.ndarray:
        """Integer voxel indices of points ``q`` (shape ``(..., 3)``), clamped to the grid."""
        q = np.asarray(q, dtype=np.float64)
        idx = np.floor((q - self.lo) / self.interval)
        # clip in float space first so huge/inf coordinates never overflow int64
        idx = np.clip(idx, 0, self.resolution - 1)
        return idx.astype(np.int64)

    def voxel_center(self, v) -> np.ndarray:
        """Center of voxel(s) ``v``; indices outside ``[0, R-1]`` are rejected."""
        v = np.asarray(v)
        if v.shape[-1:] != (3,):
            raise ValueError(f"voxel index must have a trailing axis of size 3, got {v.shape}")
        if not np.issubdtype(v.dtype, np.integer):
            if not np.all(v == np.floor(v)):
                raise ValueError("voxel index components must be integers")
            v = v.astype(np.int64)
        if np.any(v < 0) or np.any(v >= self.resolution):
            raise ValueError(f"voxel index out of range [0, {self.resolution - 1}]")
        return self.lo + (v + 0.5) * self.interval

    def quantize(self, q) -> tuple[np.ndarray, np.ndarray]:
        """Nearest voxel center of each point; returns ``(indices, centers)``."""
        idx = self.voxel_index(q)
        return idx, self.lo + (idx + 0.5) * self.interval

    @property
    def flat_fits(self) -> bool:
        """Whether flat voxel indices fit in int64."""
        return self.resolution**3 <= np.iinfo(np.int64).max

    def flat_index(self, v) -> np.ndarray:
        if not self.flat_fits:
            raise OverflowError(f"resolution {self.resolution} has no int64 flat index; use voxel_keys")
        v = np.asarray(v, dtype=np.int64)
        r = self.resolution
        return (v[..., 0] * r + v[..., 1]) * r + v[..., 2]

    def voxel_keys(self, v) -> np.ndarray:
        """Hashable per-voxel keys: flat int64 when it fits, else 24-byte records."""
        if self.flat_fits:
            return self.flat_index(v)
        v = np.ascontiguousarray(np.asarray(v, dtype=np.int64).reshape(-1, 3))
        return v.view(np.dtype((np.void, 24))).ravel()

    def unflat_index(self, flat) -> np.ndarray:
        flat = np.asarray(flat, dtype=np.int64)
        r = self.resolution
        return np.stack([flat // (r * r), (flat // r) % r, flat % r], axis=-1)

    def to_dict(self) -> dict:
        return {"lo": self.lo, "hi": self.hi, "resolution": self.resolution}

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(lo=float(d["lo"]), hi=float(d["hi"]), resolution=int(d["resolution"]))


def voxel_center(grid: GridSpec, v) -> np.ndarray:
    return grid.voxel_center(v)


def quantize(grid: GridSpec, q) -> tuple[np.ndarray, np.ndarray]:
    return grid.quantize(q)


@dataclass(frozen=True)
class RaySampleRun:
    """Consecutive samples of one ray that fall in the same voxel."""

    rep_point: np.ndarray
    voxel: tuple[int, int, int]
    discrete_point: np.ndarray
    delta: float


def dedup_ray_samples(grid: GridSpec, points, terminal_gap: float | None = None) -> list[RaySampleRun]:
    """Merge consecutive samples of one ray that share a voxel.

    The gap between sample ``n`` and ``n + 1`` is credited to the run holding
    sample ``n``. The last run also receives ``terminal_gap``, which defaults to
    the mean of the inter-sample gaps (zero for a single sample).
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3 or len(points) == 0:
        raise ValueError("invalid ray: expected a non-empty (n, 3) array of samples")
    gaps = np.linalg.norm(np.diff(points, axis=0), axis=1)
    if terminal_gap is None:
        terminal_gap = float(gaps.mean()) if len(gaps) else 0.0
    seg = np.append(gaps, terminal_gap)

    idx, centers = grid.quantize(points)
    starts = np.flatnonzero(np.r_[True, np.any(idx[1:] != idx[:-1], axis=1)])
    deltas = np.add.reduceat(seg, starts)
    return [
        RaySampleRun(
            rep_point=points[s].copy(),
            voxel=tuple(int(c) for c in idx[s]),
            discrete_point=centers[s].copy(),
            delta=float(d),
        )
        for s, d in zip(starts, deltas)
    ]


@dataclass
class RunBatch:
    """Deduplicated runs of many rays, stored flat with a padded lookup.

    ``slot[b, m]`` is the flat run index of the ``m``-th run of ray ``b`` or -1
    when ray ``b`` has fewer than ``m + 1`` runs.
    """

    rep_point: np.ndarray  # (N, 3)
    voxel: np.ndarray  # (N, 3) int64
    discrete_point: np.ndarray  # (N, 3)
    delta: np.ndarray  # (N,)
    ray: np.ndarray  # (N,) owning ray
    slot: np.ndarray  # (B, M)

    @property
    def counts(self) -> np.ndarray:
        return (self.slot >= 0).sum(axis=1)


def dedup_ray_batch(grid: GridSpec, points: np.ndarray, valid: np.ndarray, terminal_gap: np.ndarray,
                    merge: bool = True) -> RunBatch:
    """Vectorised ``dedup_ray_samples`` for ``points`` of shape ``(B, I, 3)``.

    Rays with ``valid[b] == False`` get no runs. With ``merge=False`` every
    sample becomes its own run (the continuous-coordinate path).
    """
    B, I, _ = points.shape
    gaps = np.linalg.norm(points[:, 1:] - points[:, :-1], axis=-1)
    seg = np.concatenate([gaps, np.asarray(terminal_gap, dtype=np.float64).reshape(B, 1)], axis=1)
    idx, centers = grid.quantize(points)

    if merge:
        new_run = np.ones((B, I), dtype=bool)
        new_run[:, 1:] = np.any(idx[:, 1:] != idx[:, :-1], axis=-1)
    else:
        new_run = np.ones((B, I), dtype=bool)
    new_run &= valid[:, None]

    run_of_sample = np.cumsum(new_run.ravel()) - 1
    starts = np.flatnonzero(new_run.ravel())
    n_runs = len(starts)
    sample_mask = np.repeat(valid, I)
    delta = np.bincount(run_of_sample[sample_mask], weights=seg.ravel()[sample_mask], minlength=n_runs)

    ray = starts // I
    counts = new_run.sum(axis=1)
    M = int(counts.max()) if B else 0
    slot = np.full((B, M), -1, dtype=np.int64)
    first = np.cumsum(counts) - counts
    pos = np.arange(n_runs) - first[ray]
    slot[ray, pos] = np.arange(n_runs)

    flat_pts = points.reshape(-1, 3)
    return RunBatch(
        rep_point=flat_pts[starts],
        voxel=idx.reshape(-1, 3)[starts],
        discrete_point=centers.reshape(-1, 3)[starts],
        delta=delta,
        ray=ray,
        slot=slot,
    )
