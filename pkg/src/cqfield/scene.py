"""Synthetic ground truth: analytic SDF scenes, pinhole rigs and PPM datasets."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from cqfield.grid import GridSpec

SHAPES = ("sphere", "box", "torus")
ALBEDOS = ("constant", "gradient", "checker")
AMBIENT = 0.15
TRACE_STEPS = 256
HIT_EPS = 1e-5
NORMAL_EPS = 1e-4


class DatasetError(Exception):
    """A dataset directory is missing a file or holds a malformed one."""


@dataclass(frozen=True)
class SceneDef:
    shape: str = "sphere"
    # sphere: (radius,), box: half extents (x, y, z), torus: (major, minor) about the y axis
    size: tuple = (0.5,)
    albedo: str = "constant"
    # constant: (r, g, b); gradient: (axis, r0, g0, b0, r1, g1, b1); checker: (scale, r0, g0, b0, r1, g1, b1)
    albedo_params: tuple = (0.85, 0.55, 0.3)
    light_dir: tuple = (0.4, 0.8, 0.45)
    background: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        if self.albedo not in ALBEDOS:
            raise ValueError(f"unknown albedo {self.albedo!r}")
        need = {"sphere": 1, "box": 3, "torus": 2}[self.shape]
        if len(self.size) != need or min(self.size) <= 0:
            raise ValueError(f"{self.shape} needs {need} positive size parameters, got {self.size}")
        need = {"constant": 3, "gradient": 7, "checker": 7}[self.albedo]
        if len(self.albedo_params) != need:
            raise ValueError(f"{self.albedo} albedo needs {need} parameters")
        light = np.asarray(self.light_dir, dtype=np.float64)
        object.__setattr__(self, "size", tuple(float(s) for s in self.size))
        object.__setattr__(self, "albedo_params", tuple(float(s) for s in self.albedo_params))
        norm = np.linalg.norm(light)
        if abs(norm - 1.0) > 1e-12:  # leave unit vectors alone so saved scenes round-trip exactly
            light = light / norm
        object.__setattr__(self, "light_dir", tuple(float(v) for v in light))
        object.__setattr__(self, "background", tuple(float(v) for v in self.background))

    def extent(self) -> float:
        """Largest absolute coordinate reached by the shape."""
        if self.shape == "sphere":
            return self.size[0]
        if self.shape == "box":
            return max(self.size)
        return self.size[0] + self.size[1]

    def check_fits(self, grid: GridSpec) -> None:
        half = 0.5 * (grid.hi - grid.lo)
        center = 0.5 * (grid.hi + grid.lo)
        room = half - abs(center) - self.extent()
        if room < 0.1 * half:
            raise ValueError("shape must fit inside the scene cube with a 10% margin")

    def to_dict(self) -> dict:
        return {
            "shape": self.shape,
            "size": list(self.size),
            "albedo": self.albedo,
            "albedo_params": list(self.albedo_params),
            "light_dir": list(self.light_dir),
            "background": list(self.background),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneDef":
        return cls(
            shape=d["shape"],
            size=tuple(d["size"]),
            albedo=d["albedo"],
            albedo_params=tuple(d["albedo_params"]),
            light_dir=tuple(d["light_dir"]),
            background=tuple(d.get("background", (0.0, 0.0, 0.0))),
        )


def analytic_sdf(scene: SceneDef, p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if scene.shape == "sphere":
        return np.linalg.norm(p, axis=-1) - scene.size[0]
    if scene.shape == "box":
        q = np.abs(p) - np.asarray(scene.size)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return outside + inside
    major, minor = scene.size
    ring = np.hypot(p[..., 0], p[..., 2]) - major
    return np.hypot(ring, p[..., 1]) - minor


def albedo_at(scene: SceneDef, p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    a = scene.albedo_params
    if scene.albedo == "constant":
        return np.broadcast_to(np.asarray(a), p.shape).copy()
    c0, c1 = np.asarray(a[1:4]), np.asarray(a[4:7])
    if scene.albedo == "gradient":
        s = np.clip(0.5 * (p[..., int(a[0])] + 1.0), 0.0, 1.0)[..., None]
        return (1.0 - s) * c0 + s * c1
    parity = np.floor(p * a[0]).astype(np.int64).sum(axis=-1) % 2
    return np.where(parity[..., None] == 0, c0, c1)


def sdf_normal(scene: SceneDef, p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    n = np.empty(p.shape)
    for ax in range(3):
        e = np.zeros(3)
        e[ax] = NORMAL_EPS
        n[..., ax] = analytic_sdf(scene, p + e) - analytic_sdf(scene, p - e)
    return n / np.maximum(np.linalg.norm(n, axis=-1, keepdims=True), 1e-300)


def shade(scene: SceneDef, p) -> np.ndarray:
    """Lambertian color: ``albedo * (ambient + max(0, n.l))`` clipped to [0, 1]."""
    n = sdf_normal(scene, p)
    lam = np.maximum(n @ np.asarray(scene.light_dir), 0.0)
    return np.clip(albedo_at(scene, p) * (AMBIENT + lam)[..., None], 0.0, 1.0)


def sphere_trace(scene: SceneDef, origins, dirs, t_max: float):
    """March rays until ``|sdf| < 1e-5``; returns ``(t, hit)``."""
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    t = np.zeros(origins.shape[:-1])
    active = np.ones(t.shape, dtype=bool)
    hit = np.zeros(t.shape, dtype=bool)
    for _ in range(TRACE_STEPS):
        if not active.any():
            break
        idx = np.nonzero(active)
        d = analytic_sdf(scene, origins[idx] + t[idx][..., None] * dirs[idx])
        close = np.abs(d) < HIT_EPS
        hit[idx] |= close
        t[idx] += np.where(close, 0.0, d)
        active[idx] = ~close & (t[idx] < t_max)
    return t, hit


@dataclass(frozen=True)
class CameraModel:
    position: tuple
    look_at: tuple = (0.0, 0.0, 0.0)
    up: tuple = (0.0, 1.0, 0.0)
    fov_y: float = math.radians(40.0)
    width: int = 64
    height: int = 64

    def __post_init__(self):
        for name in ("position", "look_at", "up"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if np.allclose(self.position, self.look_at, atol=0.0, rtol=0.0):
            raise ValueError("camera position coincides with look_at")
        if not 0.0 < self.fov_y < math.pi:
            raise ValueError("fov_y must lie in (0, pi)")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")

    def frame(self):
        pos = np.asarray(self.position)
        fwd = np.asarray(self.look_at) - pos
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(self.up))
        right /= np.linalg.norm(right)
        up = np.cross(right, fwd)
        return pos, fwd, right, up

    def rays(self, px, py):
        """Unit rays through continuous pixel coordinates (pixel ``x`` spans ``[x, x+1)``)."""
        pos, fwd, right, up = self.frame()
        tan = math.tan(0.5 * self.fov_y)
        sx = (2.0 * np.asarray(px, dtype=np.float64) / self.width - 1.0) * tan * self.width / self.height
        sy = (1.0 - 2.0 * np.asarray(py, dtype=np.float64) / self.height) * tan
        d = fwd + sx[..., None] * right + sy[..., None] * up
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        return np.broadcast_to(pos, d.shape).copy(), d

    def pixel_rays(self, flat_pixels):
        """Rays through the centers of flat pixel indices ``y * width + x``."""
        flat_pixels = np.asarray(flat_pixels)
        return self.rays(flat_pixels % self.width + 0.5, flat_pixels // self.width + 0.5)

    def project(self, points):
        """Continuous pixel coordinates ``(px, py)`` and depth along the view axis."""
        pos, fwd, right, up = self.frame()
        rel = np.asarray(points, dtype=np.float64) - pos
        z = rel @ fwd
        tan = math.tan(0.5 * self.fov_y)
        sx = (rel @ right) / z
        sy = (rel @ up) / z
        px = (sx / (tan * self.width / self.height) + 1.0) * 0.5 * self.width
        py = (1.0 - sy / tan) * 0.5 * self.height
        return px, py, z

    def azimuth(self) -> float:
        rel = np.asarray(self.position) - np.asarray(self.look_at)
        return math.atan2(rel[2], rel[0])

    def to_dict(self) -> dict:
        return {
            "position": list(self.position),
            "look_at": list(self.look_at),
            "up": list(self.up),
            "fov_y_rad": self.fov_y,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        return cls(tuple(d["position"]), tuple(d["look_at"]), tuple(d["up"]), float(d["fov_y_rad"]),
                   int(d["width"]), int(d["height"]))


def make_rig(n_views: int, radius: float = 2.0, elevation_deg: float = 20.0, look_at=(0.0, 0.0, 0.0),
             fov_y: float = math.radians(40.0), width: int = 64, height: int = 64,
             azimuth_offset: float = 0.0) -> list[CameraModel]:
    """Cameras evenly spaced in azimuth on a circle about the vertical (y) axis."""
    if n_views < 2:
        raise ValueError("a rig needs at least 2 views")
    el = math.radians(elevation_deg)
    center = np.asarray(look_at, dtype=np.float64)
    cams = []
    for k in range(n_views):
        az = azimuth_offset + 2.0 * math.pi * k / n_views
        offset = radius * np.array([math.cos(el) * math.cos(az), math.sin(el), math.cos(el) * math.sin(az)])
        cams.append(CameraModel(tuple(center + offset), tuple(center), (0.0, 1.0, 0.0), fov_y, width, height))
    return cams


def trace_limit(camera: CameraModel, scene: SceneDef) -> float:
    return float(np.linalg.norm(np.asarray(camera.position))) + 2.0 * scene.extent() + 1.0


def render_gt_image(scene: SceneDef, camera: CameraModel) -> np.ndarray:
    """Float RGB image ``(H, W, 3)`` in [0, 1]."""
    pix = np.arange(camera.width * camera.height)
    o, d = camera.pixel_rays(pix)
    t, hit = sphere_trace(scene, o, d, trace_limit(camera, scene))
    img = np.broadcast_to(np.asarray(scene.background), (len(pix), 3)).copy()
    if hit.any():
        img[hit] = shade(scene, o[hit] + t[hit][:, None] * d[hit])
    return img.reshape(camera.height, camera.width, 3)


def to_uint8(img) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


@dataclass
class Dataset:
    cameras: list
    images: list  # uint8 (H, W, 3)
    scene: SceneDef
    grid: GridSpec = field(default_factory=GridSpec)

    def __post_init__(self):
        if len(self.images) != len(self.cameras):
            raise ValueError("need exactly one image per camera")
        shapes = {img.shape for img in self.images}
        if len(shapes) > 1:
            raise ValueError("all images must share dimensions")
        for cam, img in zip(self.cameras, self.images):
            if img.shape != (cam.height, cam.width, 3):
                raise ValueError("image size does not match its camera")

    def image_float(self, view: int) -> np.ndarray:
        return self.images[view].astype(np.float64) / 255.0


def synthesize(scene: SceneDef, cameras, grid: GridSpec | None = None) -> Dataset:
    grid = grid or GridSpec()
    scene.check_fits(grid)
    return Dataset(list(cameras), [to_uint8(render_gt_image(scene, c)) for c in cameras], scene, grid)


def write_ppm(path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.uint8)
    h, w, _ = img.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


def read_ppm(path) -> np.ndarray:
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError as exc:
        raise DatasetError(f"missing image file {path}") from exc
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DatasetError(f"corrupt PPM header in {path}")
        tokens.append(data[start:pos])
    pos += 1
    if tokens[0] != b"P6" or tokens[3] != b"255":
        raise DatasetError(f"{path} is not a binary maxval-255 PPM")
    w, h = int(tokens[1]), int(tokens[2])
    body = data[pos:]
    if len(body) != w * h * 3:
        raise DatasetError(f"{path}: expected {w * h * 3} pixel bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).copy()


def _read_json(path: Path):
    try:
        return json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise DatasetError(f"missing dataset file {path}") from exc
    except json.JSONDecodeError as exc:
        raise DatasetError(f"corrupt JSON in {path}: {exc}") from exc


def save_dataset(dataset: Dataset, directory) -> list[Path]:
    """Write the dataset layout; returns the written paths."""
    d = Path(directory)
    (d / "images").mkdir(parents=True, exist_ok=True)
    written = []
    files = {
        "cameras.json": [c.to_dict() for c in dataset.cameras],
        "scene.json": dataset.scene.to_dict(),
        "grid.json": dataset.grid.to_dict(),
    }
    for name, obj in files.items():
        (d / name).write_text(json.dumps(obj, indent=2) + "\n")
        written.append(d / name)
    for k, img in enumerate(dataset.images):
        p = d / "images" / f"view_{k:03d}.ppm"
        write_ppm(p, img)
        written.append(p)
    return written


def load_dataset(directory) -> Dataset:
    d = Path(directory)
    if not d.is_dir():
        raise DatasetError(f"dataset directory {d} does not exist")
    try:
        cameras = [CameraModel.from_dict(c) for c in _read_json(d / "cameras.json")]
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"malformed camera record in {d / 'cameras.json'}: {exc}") from exc
    try:
        scene = SceneDef.from_dict(_read_json(d / "scene.json"))
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"malformed scene in {d / 'scene.json'}: {exc}") from exc
    try:
        grid = GridSpec.from_dict(_read_json(d / "grid.json"))
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"malformed grid in {d / 'grid.json'}: {exc}") from exc
    images = [read_ppm(d / "images" / f"view_{k:03d}.ppm") for k in range(len(cameras))]
    try:
        return Dataset(cameras, images, scene, grid)
    except ValueError as exc:
        raise DatasetError(f"inconsistent dataset in {d}: {exc}") from exc


def default_dataset(views: int = 16, res: int = 64, shape: str = "sphere") -> Dataset:
    size = {"sphere": (0.5,), "box": (0.35, 0.35, 0.35), "torus": (0.45, 0.15)}[shape]
    scene = SceneDef(shape=shape, size=size)
    return synthesize(scene, make_rig(views, width=res, height=res))
