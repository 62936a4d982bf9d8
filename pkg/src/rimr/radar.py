"""FMCW radar synthesis on a virtual planar array and three-FFT intensity maps.

Raw cubes are indexed (elevation element, azimuth element, fast-time sample);
intensity maps are indexed (elevation bin, azimuth bin, range bin). The
sensor frame has x right, y boresight and z up, so a direction with unit
vector u contributes spatial phase (spacing / wavelength) * (p * u_x + q * u_z).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from .geometry import Pose

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class RadarConfig:
    carrier_freq: float = 60e9
    bandwidth: float = 4e9
    samples_per_chirp: int = 256
    azimuth_elements: int = 64
    elevation_elements: int = 64
    element_spacing: float = 0.0        # 0 selects half a wavelength
    snapshot_count: int = 2
    fft_sizes: tuple[int, int, int] = (64, 64, 256)   # (elevation, azimuth, range)

    def __post_init__(self):
        object.__setattr__(self, "fft_sizes", tuple(int(v) for v in self.fft_sizes))
        if self.element_spacing == 0.0:
            object.__setattr__(self, "element_spacing", self.wavelength / 2)
        if self.carrier_freq <= 0 or self.bandwidth <= 0 or self.element_spacing <= 0:
            raise ValueError("carrier frequency, bandwidth and element spacing must be positive")
        if self.samples_per_chirp != self.fft_sizes[2]:
            raise ValueError(f"samples_per_chirp {self.samples_per_chirp} != range FFT size {self.fft_sizes[2]}")
        if self.elevation_elements > self.fft_sizes[0] or self.azimuth_elements > self.fft_sizes[1]:
            raise ValueError("element counts must not exceed the angle FFT sizes")
        if not 1 <= self.snapshot_count <= self.elevation_elements:
            raise ValueError(f"snapshot_count {self.snapshot_count} outside [1, {self.elevation_elements}]")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq

    @property
    def range_resolution(self) -> float:
        return SPEED_OF_LIGHT / (2 * self.bandwidth)

    @property
    def range_bin_spacing(self) -> float:
        return self.range_resolution * self.samples_per_chirp / self.fft_sizes[2]

    @property
    def max_range(self) -> float:
        """Unambiguous range c * N / (2 B)."""
        return self.range_resolution * self.samples_per_chirp

    @property
    def raw_shape(self) -> tuple[int, int, int]:
        return (self.elevation_elements, self.azimuth_elements, self.samples_per_chirp)

    def to_lines(self) -> list[str]:
        out = []
        for key, value in asdict(self).items():
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            else:
                value = repr(value) if isinstance(value, float) else str(value)
            out.append(f"{key}={value}")
        return out

    @classmethod
    def from_mapping(cls, mapping: dict[str, str]) -> "RadarConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name not in mapping:
                continue
            raw = mapping[f.name]
            if f.name == "fft_sizes":
                kwargs[f.name] = tuple(int(v) for v in raw.split(","))
            elif f.type in ("int", int):
                kwargs[f.name] = int(raw)
            else:
                kwargs[f.name] = float(raw)
        return cls(**kwargs)

    @staticmethod
    def keys() -> list[str]:
        return [f.name for f in fields(RadarConfig)]


@dataclass
class ReflectorScene:
    positions: np.ndarray                 # (n, 3) scene frame
    reflectivity: np.ndarray              # (n,)
    sensor_pose: Pose = field(default_factory=Pose)   # scene -> sensor
    normals: np.ndarray | None = None     # optional outward normals, scene frame

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.reflectivity = np.broadcast_to(
            np.asarray(self.reflectivity, dtype=np.float64), (len(self.positions),)).copy()
        if np.any(self.reflectivity < 0):
            raise ValueError("reflectivity must be non-negative")
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)

    def __len__(self) -> int:
        return len(self.positions)


@dataclass
class IntensityMap:
    values: np.ndarray                    # (elevation, azimuth, range), non-negative
    frame: str                            # "polar" or "cartesian"
    config: RadarConfig
    sensor_pose: Pose = field(default_factory=Pose)
    bounds: np.ndarray | None = None      # cartesian only: ((xmin, xmax), (ymin, ymax), (zmin, zmax))

    def __post_init__(self):
        if self.frame not in ("polar", "cartesian"):
            raise ValueError(f"unknown frame {self.frame!r}")
        if self.bounds is not None:
            self.bounds = np.asarray(self.bounds, dtype=np.float64).reshape(3, 2)


@dataclass(frozen=True)
class Degradation:
    """Optional non-idealities applied during synthesis; all off by default."""

    snr_db: float | None = None           # additive complex Gaussian noise
    specular_max_angle_deg: float | None = None   # drop reflectors facing away from the sensor


def sensor_coordinates(scene: ReflectorScene) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Range and direction sines (u_x = sin(az) cos(el), u_z = sin(el)) per reflector."""
    ps = scene.sensor_pose.apply(scene.positions)
    rng = np.linalg.norm(ps, axis=1)
    if np.any(rng <= 0):
        raise ValueError("reflector located at the sensor origin")
    return rng, ps[:, 0] / rng, ps[:, 2] / rng


def _specular_mask(scene: ReflectorScene, max_angle_deg: float) -> np.ndarray:
    if scene.normals is None:
        return np.ones(len(scene), dtype=bool)
    sensor_pos = scene.sensor_pose.origin_in_parent
    los = sensor_pos - scene.positions
    los /= np.linalg.norm(los, axis=1, keepdims=True)
    cosang = np.sum(los * scene.normals, axis=1)
    return cosang >= np.cos(np.deg2rad(max_angle_deg))


def synthesize_raw(scene: ReflectorScene, cfg: RadarConfig, rows: Sequence[int] | None = None,
                   degradation: Degradation | None = None,
                   rng: np.random.Generator | None = None) -> np.ndarray:
    """Point-scatterer superposition on the virtual array.

    ``rows`` restricts evaluation to the listed elevation rows (others are
    left zero); the result equals synthesizing everything then selecting.
    """
    cube = np.zeros(cfg.raw_shape, dtype=np.complex128)
    if len(scene) == 0:
        return cube
    r, ux, uz = sensor_coordinates(scene)
    beyond = r >= cfg.max_range
    if np.any(beyond):
        raise ValueError(f"reflector at range {r[beyond].max():.4f} m beyond unambiguous range "
                         f"{cfg.max_range:.4f} m")
    amp = scene.reflectivity.copy()
    if degradation is not None and degradation.specular_max_angle_deg is not None:
        amp = amp * _specular_mask(scene, degradation.specular_max_angle_deg)

    row_idx = np.arange(cfg.elevation_elements) if rows is None else np.asarray(rows, dtype=np.int64)
    n = np.arange(cfg.samples_per_chirp)
    p = np.arange(cfg.azimuth_elements)
    s = cfg.element_spacing / cfg.wavelength
    beat = 2 * cfg.bandwidth * r / (SPEED_OF_LIGHT * cfg.samples_per_chirp)
    carrier_phase = np.mod(2 * cfg.carrier_freq * r / SPEED_OF_LIGHT, 1.0)

    two_pi_j = 2j * np.pi
    block = np.zeros((len(row_idx), cfg.azimuth_elements, cfg.samples_per_chirp), dtype=np.complex128)
    chunk = 256
    for lo in range(0, len(r), chunk):
        sl = slice(lo, lo + chunk)
        a = amp[sl] * np.exp(two_pi_j * carrier_phase[sl])
        e_n = np.exp(two_pi_j * np.outer(beat[sl], n))                  # (r, N)
        e_p = np.exp(two_pi_j * s * np.outer(ux[sl], p))                # (r, P)
        e_q = np.exp(two_pi_j * s * np.outer(uz[sl], row_idx))          # (r, Q')
        spatial = (a[:, None, None] * e_q[:, :, None] * e_p[:, None, :]).reshape(len(a), -1)
        block += (spatial.T @ e_n).reshape(block.shape)
    cube[row_idx] = block

    if degradation is not None and degradation.snr_db is not None:
        if rng is None:
            raise ValueError("noise requires an rng")
        power = np.mean(np.abs(block) ** 2)
        sigma = np.sqrt(power / (10 ** (degradation.snr_db / 10)) / 2)
        noise = sigma * (rng.standard_normal(block.shape) + 1j * rng.standard_normal(block.shape))
        cube[row_idx] += noise
    return cube


def select_snapshots(raw: np.ndarray, indices: Sequence[int], cfg: RadarConfig) -> np.ndarray:
    """Keep the listed elevation rows, zeroing the rest; shape is unchanged."""
    indices = [int(i) for i in indices]
    if len(indices) != cfg.snapshot_count:
        raise ValueError(f"expected {cfg.snapshot_count} snapshot indices, got {len(indices)}")
    if len(set(indices)) != len(indices):
        raise ValueError(f"duplicate snapshot indices {indices}")
    bad = [i for i in indices if not 0 <= i < raw.shape[0]]
    if bad:
        raise ValueError(f"snapshot indices {bad} outside [0, {raw.shape[0]})")
    out = np.zeros_like(raw)
    out[indices] = raw[indices]
    return out


def default_snapshot_rows(cfg: RadarConfig) -> list[int]:
    """The ``snapshot_count`` rows centered on the array."""
    start = (cfg.elevation_elements - cfg.snapshot_count) // 2
    return list(range(start, start + cfg.snapshot_count))


def process_fft(raw: np.ndarray, cfg: RadarConfig, sensor_pose: Pose | None = None) -> IntensityMap:
    """Magnitude of the range, azimuth and elevation FFTs (rectangular window).

    Angle axes are fft-shifted so the bin index grows monotonically with the
    direction sine, with the zero-frequency bin at ``size // 2``.
    """
    raw = np.asarray(raw)
    if raw.ndim != 3 or any(a > b for a, b in zip(raw.shape, cfg.fft_sizes)):
        raise ValueError(f"raw cube shape {raw.shape} incompatible with fft sizes {cfg.fft_sizes}")
    spec = np.fft.fftn(raw, s=cfg.fft_sizes, axes=(0, 1, 2))
    spec = np.fft.fftshift(spec, axes=(0, 1))
    return IntensityMap(np.abs(spec), "polar", cfg, sensor_pose or Pose())


def range_of_bin(cfg: RadarConfig, k) -> np.ndarray:
    return np.asarray(k) * cfg.range_bin_spacing


def sine_of_bin(size: int, cfg: RadarConfig, b) -> np.ndarray:
    s = cfg.element_spacing / cfg.wavelength
    return (np.asarray(b) - size // 2) / (size * s)


def polar_cell_position(cfg: RadarConfig, el_bin, az_bin, range_bin) -> np.ndarray:
    """Sensor-frame Cartesian position of a polar cell center."""
    r = range_of_bin(cfg, range_bin)
    ux = sine_of_bin(cfg.fft_sizes[1], cfg, az_bin)
    uz = sine_of_bin(cfg.fft_sizes[0], cfg, el_bin)
    uy = np.sqrt(np.clip(1 - ux ** 2 - uz ** 2, 0, None))
    return np.stack([r * ux, r * uy, r * uz], axis=-1)


def voxel_centers(bounds, grid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Centers along x, y, z for a ``grid`` of (nz, nx, ny) voxels."""
    b = np.asarray(bounds, dtype=np.float64).reshape(3, 2)
    nz, nx, ny = grid
    axes = []
    for (lo, hi), count in zip(b, (nx, ny, nz)):
        step = (hi - lo) / count
        axes.append(lo + (np.arange(count) + 0.5) * step)
    return tuple(axes)


def to_cartesian(polar: IntensityMap, bounds, grid=(64, 64, 256)) -> IntensityMap:
    """Nearest-neighbour resampling onto a sensor-frame box.

    Output axes are (z, x, y): height, lateral, boresight depth, matching the
    (elevation, azimuth, range) ordering of the polar map. Voxels outside the
    polar coverage are zero.
    """
    if polar.frame != "polar":
        raise ValueError("to_cartesian expects a polar map")
    b = np.asarray(bounds, dtype=np.float64).reshape(3, 2)
    if np.any(b[:, 1] <= b[:, 0]) or not np.all(np.isfinite(b)):
        raise ValueError(f"degenerate bounds {b.tolist()}")
    cfg = polar.config
    xs, ys, zs = voxel_centers(b, grid)
    z, x, y = np.meshgrid(zs, xs, ys, indexing="ij")
    r = np.sqrt(x * x + y * y + z * z)
    with np.errstate(invalid="ignore", divide="ignore"):
        ux = np.where(r > 0, x / r, 0.0)
        uz = np.where(r > 0, z / r, 0.0)
    s = cfg.element_spacing / cfg.wavelength
    ne, na, nr = polar.values.shape
    rb = np.floor(r / cfg.range_bin_spacing + 0.5).astype(np.int64)
    ab = np.floor(ux * na * s + na // 2 + 0.5).astype(np.int64)
    eb = np.floor(uz * ne * s + ne // 2 + 0.5).astype(np.int64)
    valid = (r > 0) & (y > 0) & (rb >= 0) & (rb < nr) & (ab >= 0) & (ab < na) & (eb >= 0) & (eb < ne)
    out = np.zeros(grid, dtype=polar.values.dtype)
    out[valid] = polar.values[eb[valid], ab[valid], rb[valid]]
    return IntensityMap(out, "cartesian", cfg, polar.sensor_pose, b)


def cartesian_voxel_position(bounds, grid, index) -> np.ndarray:
    xs, ys, zs = voxel_centers(bounds, grid)
    iz, ix, iy = index
    return np.array([xs[ix], ys[iy], zs[iz]])
