"""Point clouds, depth images and the conversions between them.

Point clouds are plain ``(n, 3)`` float arrays in meters. World frame is
right-handed with z up. Cameras use the pinhole convention (x right, y down,
z forward); radar sensors use x right, y boresight, z up.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

SHAPE_KINDS = ("box", "lbox", "carlike")


# ---------------------------------------------------------------------------
# rigid transforms


@dataclass(frozen=True)
class Pose:
    """Rigid transform ``p -> R p + t``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("pose contains non-finite values")
        if np.abs(r @ r.T - np.eye(3)).max() > 1e-6 or abs(np.linalg.det(r) - 1) > 1e-6:
            raise ValueError("rotation is not orthonormal with det +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return points @ self.rotation.T + self.translation

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """``self`` after ``other``."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    @property
    def origin_in_parent(self) -> np.ndarray:
        """Position of this frame's origin in the source frame (for world->sensor poses)."""
        return -self.rotation.T @ self.translation

    def to_floats(self) -> list[float]:
        return [float(v) for v in self.rotation.reshape(-1)] + [float(v) for v in self.translation]

    @classmethod
    def from_floats(cls, values: Sequence[float]) -> "Pose":
        values = np.asarray(values, dtype=np.float64)
        if values.size != 12:
            raise ValueError(f"pose needs 12 floats, got {values.size}")
        return cls(values[:9].reshape(3, 3), values[9:])


def rotation_z(angle_rad: float) -> np.ndarray:
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def transform(cloud: np.ndarray, pose: Pose) -> np.ndarray:
    return pose.apply(cloud)


def _look_axes(eye, target, up=(0.0, 0.0, 1.0)):
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-9:
        raise ValueError("view direction is parallel to the up vector")
    right /= np.linalg.norm(right)
    up_true = np.cross(right, forward)
    return eye, right, forward, up_true


def camera_look_at(eye, target) -> Pose:
    """World->camera pose, camera axes (right, down, forward)."""
    eye, right, forward, up = _look_axes(eye, target)
    r = np.stack([right, -up, forward])
    return Pose(r, -r @ eye)


def sensor_look_at(eye, target) -> Pose:
    """World->radar pose, sensor axes (right, boresight, up)."""
    eye, right, forward, up = _look_axes(eye, target)
    r = np.stack([right, forward, up])
    return Pose(r, -r @ eye)


def camera_to_sensor() -> Pose:
    """Maps camera-frame points into the co-located radar frame."""
    return Pose(np.array([[1.0, 0, 0], [0, 0, 1.0], [0, -1.0, 0]]), np.zeros(3))


def canonical_viewpoints(center, radius: float, height: float, k: int = 4,
                         start_deg: float = 0.0) -> list[np.ndarray]:
    """``k`` eye positions evenly spaced on a horizontal circle around ``center``."""
    center = np.asarray(center, dtype=np.float64)
    eyes = []
    for i in range(k):
        a = np.deg2rad(start_deg + 360.0 * i / k)
        eyes.append(center + np.array([radius * np.cos(a), radius * np.sin(a), height]))
    return eyes


# ---------------------------------------------------------------------------
# procedural shapes


def _solid_boxes(kind: str, size) -> list[tuple[np.ndarray, np.ndarray]]:
    """Axis-aligned boxes (lo, hi) whose union is the solid, centered on the origin."""
    sx, sy, sz = (float(v) for v in size)
    hx, hy, hz = sx / 2, sy / 2, sz / 2
    if kind == "box":
        return [(np.array([-hx, -hy, -hz]), np.array([hx, hy, hz]))]
    if kind == "lbox":
        # full box minus the +x,+z quarter (half extents in x and z), extruded along y
        return [(np.array([-hx, -hy, -hz]), np.array([0.0, hy, hz])),
                (np.array([0.0, -hy, -hz]), np.array([hx, hy, 0.0]))]
    if kind == "carlike":
        body_top = -hz + 0.55 * sz
        cabin_len = 0.55 * sx
        cabin_x0 = -hx + 0.2 * sx
        return [(np.array([-hx, -hy, -hz]), np.array([hx, hy, body_top])),
                (np.array([cabin_x0, -0.45 * sy, body_top]),
                 np.array([cabin_x0 + cabin_len, 0.45 * sy, hz]))]
    raise ValueError(f"unknown shape kind {kind!r}; expected one of {SHAPE_KINDS}")


def _inside_open(points: np.ndarray, lo: np.ndarray, hi: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    return np.all((points > lo + tol) & (points < hi - tol), axis=1)


def _inside_closed(points: np.ndarray, lo: np.ndarray, hi: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    return np.all((points >= lo - tol) & (points <= hi + tol), axis=1)


def _sample_box_faces(lo, hi, count: int, rng: np.random.Generator):
    ext = hi - lo
    areas = np.array([ext[1] * ext[2], ext[1] * ext[2], ext[0] * ext[2],
                      ext[0] * ext[2], ext[0] * ext[1], ext[0] * ext[1]])
    per_face = rng.multinomial(count, areas / areas.sum())
    pts, normals = [], []
    for face, n in enumerate(per_face):
        axis, side = divmod(face, 2)
        p = lo + rng.random((n, 3)) * ext
        p[:, axis] = hi[axis] if side else lo[axis]
        normal = np.zeros((n, 3))
        normal[:, axis] = 1.0 if side else -1.0
        pts.append(p)
        normals.append(normal)
    return np.concatenate(pts), np.concatenate(normals)


def generate_shape(kind: str, size, surface_density: float, seed: int,
                   return_normals: bool = False):
    """Uniform random samples of the solid's outer surface, centered on the origin."""
    size = np.asarray(size, dtype=np.float64)
    if size.shape != (3,) or np.any(size <= 0):
        raise ValueError(f"shape size must be three positive extents, got {size}")
    if not surface_density > 0:
        raise ValueError(f"surface density must be positive, got {surface_density}")
    boxes = _solid_boxes(kind, size)
    rng = np.random.default_rng(seed)
    pts, normals = [], []
    for i, (lo, hi) in enumerate(boxes):
        ext = hi - lo
        area = 2 * (ext[0] * ext[1] + ext[1] * ext[2] + ext[0] * ext[2])
        p, n = _sample_box_faces(lo, hi, int(round(area * surface_density)), rng)
        keep = np.ones(len(p), dtype=bool)
        for j, (lo2, hi2) in enumerate(boxes):
            if j == i:
                continue
            # drop points inside another box or on faces shared with it
            keep &= ~_inside_open(p, lo2, hi2)
            keep &= ~_inside_closed(p + 1e-7 * n, lo2, hi2, tol=0.0)
        pts.append(p[keep])
        normals.append(n[keep])
    points, normals = np.concatenate(pts), np.concatenate(normals)
    return (points, normals) if return_normals else points


def surface_distance_box(points: np.ndarray, size) -> np.ndarray:
    """|max_i |c_i|/h_i - 1| for a centered box; zero exactly on the surface."""
    half = np.asarray(size, dtype=np.float64) / 2
    return np.abs(np.max(np.abs(points) / half, axis=1) - 1.0)


# ---------------------------------------------------------------------------
# cameras and depth images


@dataclass(frozen=True)
class CameraModel:
    focal: float = 128.0
    cx: float = 64.0
    cy: float = 64.0
    width: int = 128
    height: int = 128
    pose: Pose = field(default_factory=Pose)   # world -> camera

    def __post_init__(self):
        if not self.focal > 0:
            raise ValueError(f"focal length must be positive, got {self.focal}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height}")

    def with_pose(self, pose: Pose) -> "CameraModel":
        return CameraModel(self.focal, self.cx, self.cy, self.width, self.height, pose)

    @property
    def position(self) -> np.ndarray:
        return self.pose.origin_in_parent


@dataclass
class DepthImage:
    """Per-pixel camera-frame depth in meters; 0 means no return."""

    depth: np.ndarray
    camera: CameraModel

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        if self.depth.shape != (self.camera.height, self.camera.width):
            raise ValueError(f"depth shape {self.depth.shape} != camera {self.camera.height}x{self.camera.width}")
        if not np.all(np.isfinite(self.depth)) or np.any(self.depth < 0):
            raise ValueError("depth must be finite and non-negative")

    @property
    def width(self) -> int:
        return self.camera.width

    @property
    def height(self) -> int:
        return self.camera.height


def render_depth(cloud: np.ndarray, cam: CameraModel) -> DepthImage:
    """One-pixel point splats with a z-buffer; points behind the camera are skipped."""
    cloud = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    if len(cloud) == 0:
        raise ValueError("render_depth needs a non-empty cloud")
    pc = cam.pose.apply(cloud)
    pc = pc[pc[:, 2] > 0]
    u = np.floor(cam.focal * pc[:, 0] / pc[:, 2] + cam.cx + 0.5).astype(np.int64)
    v = np.floor(cam.focal * pc[:, 1] / pc[:, 2] + cam.cy + 0.5).astype(np.int64)
    ok = (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)
    buf = np.full(cam.height * cam.width, np.inf)
    np.minimum.at(buf, v[ok] * cam.width + u[ok], pc[ok, 2])
    buf[np.isinf(buf)] = 0.0
    return DepthImage(buf.reshape(cam.height, cam.width), cam)


def backproject(img: DepthImage) -> np.ndarray:
    """World-frame points for every pixel with positive depth, in row-major pixel order."""
    cam = img.camera
    v, u = np.nonzero(img.depth > 0)
    d = img.depth[v, u]
    pc = np.stack([d * (u - cam.cx) / cam.focal, d * (v - cam.cy) / cam.focal, d], axis=1)
    return cam.pose.inverse().apply(pc)


def quantization_bound(depth: np.ndarray, focal: float) -> np.ndarray:
    """Upper bound on the lateral error of a back-projected pixel at ``depth``."""
    return np.asarray(depth) * np.sqrt(2.0) / focal


def union_views(views: Sequence) -> np.ndarray:
    """Concatenate views in the world frame; no deduplication.

    Each entry is a DepthImage (back-projected through its camera), an
    ``(n, 3)`` cloud already in world coordinates, or a ``(item, pose)`` pair
    whose pose maps the item's frame into the world.
    """
    if len(views) == 0:
        raise ValueError("union_views needs at least one view")
    clouds = []
    for entry in views:
        pose = None
        if isinstance(entry, tuple):
            entry, pose = entry
        cloud = backproject(entry) if isinstance(entry, DepthImage) else np.asarray(entry, dtype=np.float64)
        cloud = cloud.reshape(-1, 3)
        clouds.append(pose.apply(cloud) if pose is not None else cloud)
    return np.concatenate(clouds, axis=0)


# ---------------------------------------------------------------------------
# voxels and resampling


@dataclass(frozen=True)
class VoxelGrid:
    """Occupied cells of a bounded lattice, stored sorted and unique."""

    origin: np.ndarray
    voxel_size: float
    dims: tuple[int, int, int]
    indices: np.ndarray   # (k, 3) int64, lexicographically sorted

    def __post_init__(self):
        if not self.voxel_size > 0:
            raise ValueError(f"voxel size must be positive, got {self.voxel_size}")

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def keys(self) -> np.ndarray:
        d = np.asarray(self.dims, dtype=np.int64)
        return (self.indices[:, 0] * d[1] + self.indices[:, 1]) * d[2] + self.indices[:, 2]

    def centers(self) -> np.ndarray:
        return self.origin + (self.indices + 0.5) * self.voxel_size

    def same_lattice(self, other: "VoxelGrid") -> bool:
        return (np.array_equal(self.origin, other.origin) and self.voxel_size == other.voxel_size
                and tuple(self.dims) == tuple(other.dims))


def voxelize(cloud: np.ndarray, origin, voxel_size: float, dims) -> VoxelGrid:
    """Half-open cells: index = floor((p - origin) / voxel_size); out-of-range points dropped."""
    if not voxel_size > 0:
        raise ValueError(f"voxel size must be positive, got {voxel_size}")
    origin = np.asarray(origin, dtype=np.float64).reshape(3)
    dims = tuple(int(d) for d in dims)
    cloud = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    idx = np.floor((cloud - origin) / voxel_size).astype(np.int64)
    ok = np.all((idx >= 0) & (idx < np.asarray(dims)), axis=1)
    idx = np.unique(idx[ok], axis=0) if ok.any() else np.zeros((0, 3), dtype=np.int64)
    return VoxelGrid(origin, float(voxel_size), dims, idx.reshape(-1, 3))


def resample(cloud: np.ndarray, n: int, seed) -> np.ndarray:
    """``n`` points: a random subset when enough exist, otherwise draws with replacement."""
    cloud = np.asarray(cloud).reshape(-1, 3)
    if n <= 0:
        raise ValueError(f"resample size must be positive, got {n}")
    if len(cloud) == 0:
        raise ValueError("cannot resample an empty cloud")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    replace = len(cloud) < n
    return cloud[rng.choice(len(cloud), size=n, replace=replace)]


def canonical_order(cloud: np.ndarray) -> np.ndarray:
    """Lexicographic point order, so set-valued inputs resample identically under permutation."""
    cloud = np.asarray(cloud).reshape(-1, 3)
    return cloud[np.lexsort((cloud[:, 2], cloud[:, 1], cloud[:, 0]))]


def bounding_box(cloud: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    cloud = np.asarray(cloud).reshape(-1, 3)
    return cloud.min(axis=0), cloud.max(axis=0)
