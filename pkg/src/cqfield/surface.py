"""Marching-cubes extraction of the learned level set and Chamfer evaluation."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree
from skimage.measure import marching_cubes

from cqfield.encoding import CoordMode, FrequencyBand, direction_input, position_input
from cqfield.field import FieldParams, _sigmoid, _softplus, field_forward
from cqfield.grid import GridSpec
from cqfield.scene import SceneDef, analytic_sdf

log = logging.getLogger(__name__)


@dataclass
class TriMesh:
    vertices: np.ndarray  # (V, 3)
    triangles: np.ndarray  # (F, 3) int64
    status: str = "ok"

    @property
    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    def areas(self) -> np.ndarray:
        v = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)


def lattice_points(lo: float, hi: float, n: int) -> np.ndarray:
    """``(n, n, n, 3)`` lattice with ``n`` points per axis spanning ``[lo, hi]``."""
    ax = np.linspace(lo, hi, n)
    return np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1)


def mesh_from_volume(values: np.ndarray, lo: float, hi: float, level: float) -> TriMesh:
    """Polygonize a sampled scalar volume; vertices are mapped back to scene units."""
    n = values.shape[0]
    if not (values.min() < level < values.max()):
        log.warning("field does not cross level %g on the lattice; returning an empty mesh", level)
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64), status="no-crossing")
    spacing = (hi - lo) / (n - 1)
    verts, faces, _, _ = marching_cubes(values, level=level, spacing=(spacing,) * 3, allow_degenerate=False,
                                        method="lewiner")
    mesh = TriMesh(verts.astype(np.float64) + lo, faces.astype(np.int64))
    keep = mesh.areas() > 0.0
    if not keep.all():
        mesh = TriMesh(mesh.vertices, mesh.triangles[keep])
    return mesh


def field_scalar(params: FieldParams, grid: GridSpec, points: np.ndarray, coord_mode="discrete",
                 compositing: str = "occupancy", chunk: int = 65536) -> np.ndarray:
    """Geometry of the field at ``points``: occupancy, or density in density mode."""
    arch = params.arch
    mode = CoordMode(coord_mode)
    band = FrequencyBand(arch.pos_freqs)
    flat = points.reshape(-1, 3)
    dir_in = direction_input(FrequencyBand(arch.dir_freqs), np.array([[0.0, 0.0, 1.0]]))
    out = np.empty(len(flat))
    for s in range(0, len(flat), chunk):
        p = flat[s:s + chunk]
        disc = grid.quantize(p)[1] if mode.quantizes else p
        pos_in = position_input(band, mode, p, disc)
        z = field_forward(params, pos_in, np.broadcast_to(dir_in, (len(p), dir_in.shape[1]))).geometry
        out[s:s + chunk] = _sigmoid(z) if compositing == "occupancy" else _softplus(z)[0]
    return out.reshape(points.shape[:-1])


def extract_mesh(params: FieldParams, grid: GridSpec, mc_resolution: int = 128, level: float | None = None,
                 coord_mode="discrete", compositing: str = "occupancy") -> TriMesh:
    """Marching cubes over an ``mc_resolution^3`` lattice spanning the grid cube.

    In quantized coordinate modes each lattice point is snapped to its voxel
    center before it is encoded.
    """
    if mc_resolution < 8:
        raise ValueError("mc_resolution must be >= 8")
    if level is None:
        level = 0.5 if compositing == "occupancy" else 1.0
    if compositing == "occupancy" and not 0.0 < level < 1.0:
        raise ValueError("occupancy level must lie in (0, 1)")
    pts = lattice_points(grid.lo, grid.hi, mc_resolution)
    values = field_scalar(params, grid, pts, coord_mode, compositing)
    return mesh_from_volume(values, grid.lo, grid.hi, level)


def sample_surface(mesh: TriMesh, n: int, rng: np.random.Generator) -> np.ndarray:
    """Area-weighted uniform samples on the triangles of ``mesh``."""
    if mesh.is_empty:
        raise ValueError("empty mesh")
    if n < 1:
        raise ValueError("need at least one sample")
    areas = mesh.areas()
    tri = rng.choice(len(areas), size=n, p=areas / areas.sum())
    u, v = rng.random(n), rng.random(n)
    flip = u + v > 1.0
    u[flip], v[flip] = 1.0 - u[flip], 1.0 - v[flip]
    a, b, c = (mesh.vertices[mesh.triangles[tri, k]] for k in range(3))
    return a + u[:, None] * (b - a) + v[:, None] * (c - a)


def sample_scene_surface(scene: SceneDef, n: int, rng: np.random.Generator, mc_resolution: int = 256) -> np.ndarray:
    """Ground-truth surface samples: exact for spheres, dense marching cubes otherwise."""
    if scene.shape == "sphere":
        x = rng.normal(size=(n, 3))
        return scene.size[0] * x / np.linalg.norm(x, axis=1, keepdims=True)
    ext = 1.1 * scene.extent()
    pts = lattice_points(-ext, ext, mc_resolution)
    return sample_surface(mesh_from_volume(analytic_sdf(scene, pts), -ext, ext, 0.0), n, rng)


@dataclass
class ChamferReport:
    accuracy: float
    completeness: float
    chamfer: float
    n_pred: int
    n_gt: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "accuracy": self.accuracy,
                "completeness": self.completeness,
                "chamfer": self.chamfer,
                "n_pred": self.n_pred,
                "n_gt": self.n_gt,
            },
            indent=2,
        ) + "\n"


def chamfer(pred_points, gt_points) -> ChamferReport:
    """Mean nearest-neighbor distances in both directions (exact kd-tree queries)."""
    pred = np.asarray(pred_points, dtype=np.float64).reshape(-1, 3)
    gt = np.asarray(gt_points, dtype=np.float64).reshape(-1, 3)
    if len(pred) == 0 or len(gt) == 0:
        raise ValueError("chamfer needs non-empty point sets")
    acc = float(cKDTree(gt).query(pred, k=1)[0].mean())
    comp = float(cKDTree(pred).query(gt, k=1)[0].mean())
    return ChamferReport(acc, comp, 0.5 * (acc + comp), len(pred), len(gt))


def write_obj(path, mesh: TriMesh) -> None:
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_obj(path) -> TriMesh:
    verts, faces = [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            faces.append([int(x.split("/")[0]) - 1 for x in parts[1:4]])
    return TriMesh(np.asarray(verts, dtype=np.float64).reshape(-1, 3), np.asarray(faces, dtype=np.int64).reshape(-1, 3))


def edge_use_counts(mesh: TriMesh) -> np.ndarray:
    """How many triangles share each undirected edge."""
    e = np.concatenate([mesh.triangles[:, [0, 1]], mesh.triangles[:, [1, 2]], mesh.triangles[:, [2, 0]]])
    e.sort(axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    return counts
