"""File formats: RIMRVOL intensity maps, ASCII PLY clouds, PGM depth images with a
camera sidecar, the dataset manifest, and key=value config files.

Every binary or line-oriented reader validates its input completely, so a file
cut short at any byte is rejected rather than silently read as something else.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import CameraModel, DepthImage, Pose
from .radar import IntensityMap, RadarConfig


class FormatError(ValueError):
    """Malformed or truncated file content."""


def _truncated(what: str, expected: int, actual: int) -> FormatError:
    return FormatError(f"{what}: truncated, expected {expected} bytes, got {actual}")


# ---------------------------------------------------------------------------
# RIMRVOL

VOL_MAGIC = b"RIMRVOL"
VOL_VERSION = 1
_FRAMES = ("polar", "cartesian")
_VOL_FIXED = struct.Struct("<7sHB3II")


def encode_volume(m: IntensityMap) -> bytes:
    values = np.asarray(m.values)
    if values.ndim != 3:
        raise ValueError(f"intensity map must be 3-D, got shape {values.shape}")
    lines = m.config.to_lines()
    if m.frame == "cartesian":
        if m.bounds is None:
            raise ValueError("cartesian map needs bounds")
        lines.append("bounds=" + ",".join(repr(float(v)) for v in m.bounds.reshape(-1)))
    header = "".join(line + "\n" for line in lines).encode("utf-8")
    fixed = _VOL_FIXED.pack(VOL_MAGIC, VOL_VERSION, _FRAMES.index(m.frame), *values.shape, len(header))
    pose = np.asarray(m.sensor_pose.to_floats(), dtype="<f8").tobytes()
    return fixed + header + pose + values.astype("<f4").tobytes()


def _parse_lines(text: str, what: str) -> dict[str, str]:
    if text and not text.endswith("\n"):
        raise FormatError(f"{what}: last line is not terminated")
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        key, sep, value = line.partition("=")
        if not sep or not key:
            raise FormatError(f"{what}: line {n} is not key=value: {line!r}")
        if key in out:
            raise FormatError(f"{what}: duplicate key {key!r}")
        out[key] = value
    return out


def decode_volume(buf: bytes) -> IntensityMap:
    if buf[:len(VOL_MAGIC)] != VOL_MAGIC[:len(buf)]:
        raise FormatError("RIMRVOL: bad magic at offset 0")
    if len(buf) < _VOL_FIXED.size:
        raise _truncated("RIMRVOL", _VOL_FIXED.size, len(buf))
    _, version, frame, e0, e1, e2, hlen = _VOL_FIXED.unpack_from(buf)
    if version != VOL_VERSION:
        raise FormatError(f"RIMRVOL: unsupported version {version} at offset 7")
    if frame >= len(_FRAMES):
        raise FormatError(f"RIMRVOL: unknown frame code {frame} at offset 9")
    count = e0 * e1 * e2
    expected = _VOL_FIXED.size + hlen + 96 + 4 * count
    if len(buf) != expected:
        if len(buf) < expected:
            raise _truncated("RIMRVOL", expected, len(buf))
        raise FormatError(f"RIMRVOL: {len(buf) - expected} trailing bytes after offset {expected}")
    off = _VOL_FIXED.size
    try:
        text = buf[off:off + hlen].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"RIMRVOL: header is not UTF-8 at offset {off}") from exc
    meta = _parse_lines(text, "RIMRVOL header")
    keys = set(RadarConfig.keys()) | ({"bounds"} if _FRAMES[frame] == "cartesian" else set())
    if set(meta) != keys:
        raise FormatError(f"RIMRVOL: header keys {sorted(meta)} != {sorted(keys)}")
    bounds = None
    try:
        cfg = RadarConfig.from_mapping(meta)
        if "bounds" in meta:
            bounds = np.array([float(v) for v in meta["bounds"].split(",")])
            if bounds.size != 6:
                raise ValueError("bounds needs 6 values")
        off += hlen
        pose = Pose.from_floats(np.frombuffer(buf, "<f8", 12, off))
    except ValueError as exc:
        raise FormatError(f"RIMRVOL: {exc}") from exc
    off += 96
    values = np.frombuffer(buf, "<f4", count, off).reshape(e0, e1, e2).copy()
    return IntensityMap(values, _FRAMES[frame], cfg, pose, bounds)


# ---------------------------------------------------------------------------
# PLY (ascii)

_PLY_HEADER = ("ply\nformat ascii 1.0\nelement vertex {n}\nproperty float x\nproperty float y\n"
               "property float z\nend_header\n")


def encode_ply(cloud: np.ndarray) -> bytes:
    cloud = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    body = "".join(f"{x:.9g} {y:.9g} {z:.9g}\n" for x, y, z in cloud)
    return (_PLY_HEADER.format(n=len(cloud)) + body).encode("ascii")


def decode_ply(buf: bytes) -> np.ndarray:
    try:
        text = buf.decode("ascii")
    except UnicodeDecodeError as exc:
        raise FormatError("PLY: file is not ASCII") from exc
    end = text.find("end_header\n")
    if not text.startswith("ply\n"):
        raise FormatError("PLY: bad magic at offset 0")
    if end < 0:
        raise FormatError("PLY: header is incomplete")
    header = text[:end].splitlines()
    try:
        n = next(int(line.split()[2]) for line in header if line.startswith("element vertex "))
    except (StopIteration, ValueError, IndexError) as exc:
        raise FormatError("PLY: missing vertex count") from exc
    if text[:end + len("end_header\n")] != _PLY_HEADER.format(n=n):
        raise FormatError("PLY: unsupported header (expected ascii x/y/z float vertices)")
    body = text[end + len("end_header\n"):]
    if body and not body.endswith("\n"):
        raise FormatError("PLY: last vertex line is not terminated")
    lines = body.splitlines()
    if len(lines) != n:
        raise FormatError(f"PLY: header declares {n} vertices, found {len(lines)}")
    out = np.zeros((n, 3))
    for i, line in enumerate(lines):
        parts = line.split()
        if len(parts) != 3:
            raise FormatError(f"PLY: vertex {i} has {len(parts)} values")
        try:
            out[i] = [float(p) for p in parts]
        except ValueError as exc:
            raise FormatError(f"PLY: vertex {i} is not numeric: {line!r}") from exc
    return out


# ---------------------------------------------------------------------------
# PGM depth (P5, 16 bit, 1 mm steps) and the camera sidecar

DEPTH_STEP = 1e-3
DEPTH_MAX = 65535 * DEPTH_STEP


def encode_pgm(depth: np.ndarray) -> bytes:
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2:
        raise ValueError(f"depth must be 2-D, got shape {depth.shape}")
    if np.any(depth < 0) or np.any(depth > DEPTH_MAX + DEPTH_STEP / 2) or not np.all(np.isfinite(depth)):
        raise ValueError(f"depth must lie in [0, {DEPTH_MAX}] m")
    q = np.minimum(np.floor(depth / DEPTH_STEP + 0.5), 65535).astype(">u2")
    h, w = depth.shape
    return f"P5\n{w} {h}\n65535\n".encode("ascii") + q.tobytes()


def decode_pgm(buf: bytes) -> np.ndarray:
    if not buf.startswith(b"P5\n"):
        raise FormatError("PGM: bad magic at offset 0")
    parts = buf.split(b"\n", 3)
    if len(parts) < 4:
        raise FormatError("PGM: header is incomplete")
    try:
        w, h = (int(v) for v in parts[1].split())
        maxval = int(parts[2])
    except ValueError as exc:
        raise FormatError("PGM: malformed header") from exc
    if maxval != 65535:
        raise FormatError(f"PGM: expected maxval 65535, got {maxval}")
    data = parts[3]
    header_len = len(buf) - len(data)
    if len(data) != 2 * w * h:
        if len(data) < 2 * w * h:
            raise _truncated("PGM", header_len + 2 * w * h, len(buf))
        raise FormatError(f"PGM: trailing bytes after offset {header_len + 2 * w * h}")
    return np.frombuffer(data, ">u2").reshape(h, w).astype(np.float64) * DEPTH_STEP


_CAMERA_KEYS = ("focal", "cx", "cy", "width", "height", "pose")


def encode_camera(cam: CameraModel) -> bytes:
    lines = [f"focal={cam.focal!r}", f"cx={cam.cx!r}", f"cy={cam.cy!r}", f"width={cam.width}",
             f"height={cam.height}", "pose=" + ",".join(repr(v) for v in cam.pose.to_floats())]
    return ("".join(line + "\n" for line in lines)).encode("utf-8")


def decode_camera(buf: bytes) -> CameraModel:
    meta = _parse_lines(buf.decode("utf-8", errors="strict"), "camera")
    if set(meta) != set(_CAMERA_KEYS):
        raise FormatError(f"camera: keys {sorted(meta)} != {sorted(_CAMERA_KEYS)}")
    try:
        pose = Pose.from_floats([float(v) for v in meta["pose"].split(",")])
        return CameraModel(float(meta["focal"]), float(meta["cx"]), float(meta["cy"]),
                           int(meta["width"]), int(meta["height"]), pose)
    except ValueError as exc:
        raise FormatError(f"camera: {exc}") from exc


def write_depth(path, img: DepthImage) -> None:
    path = Path(path)
    path.write_bytes(encode_pgm(img.depth))
    path.with_suffix(".cam").write_bytes(encode_camera(img.camera))


def read_depth(path) -> DepthImage:
    path = Path(path)
    depth = decode_pgm(path.read_bytes())
    cam = decode_camera(path.with_suffix(".cam").read_bytes())
    return DepthImage(depth, cam)


# ---------------------------------------------------------------------------
# manifest

MANIFEST_FIELDS = ("id", "kind", "size", "pose", "cloud", "map0", "depth0", "map1", "depth1",
                   "map2", "depth2", "map3", "depth3")


@dataclass(frozen=True)
class SampleRecord:
    id: str
    kind: str
    size: tuple[float, float, float]
    pose: Pose                        # object -> world
    cloud: str                        # paths relative to the manifest
    maps: tuple[str, ...]
    depths: tuple[str, ...]

    def __post_init__(self):
        if len(self.maps) != 4 or len(self.depths) != 4:
            raise ValueError(f"sample {self.id}: expected 4 views, got {len(self.maps)} maps "
                             f"and {len(self.depths)} depths")

    def to_fields(self) -> list[str]:
        views = [p for pair in zip(self.maps, self.depths) for p in pair]
        return [self.id, self.kind, ",".join(repr(float(v)) for v in self.size),
                ",".join(repr(v) for v in self.pose.to_floats()), self.cloud, *views]

    @classmethod
    def from_fields(cls, fields: list[str]) -> "SampleRecord":
        size = tuple(float(v) for v in fields[2].split(","))
        if len(size) != 3:
            raise ValueError(f"size needs 3 values, got {len(size)}")
        pose = Pose.from_floats([float(v) for v in fields[3].split(",")])
        views = fields[5:]
        return cls(fields[0], fields[1], size, pose, fields[4], tuple(views[0::2]), tuple(views[1::2]))


def encode_manifest(records) -> bytes:
    lines = [f"#rimr-manifest v1 records={len(records)}"]
    for r in records:
        fields = r.to_fields()
        if any("\t" in f or "\n" in f for f in fields):
            raise ValueError(f"sample {r.id}: fields may not contain tabs or newlines")
        lines.append("\t".join(fields))
    return ("".join(line + "\n" for line in lines)).encode("utf-8")


def decode_manifest(buf: bytes) -> list[SampleRecord]:
    text = buf.decode("utf-8")
    if not text.startswith("#rimr-manifest v1 records="):
        raise FormatError("manifest: bad header at offset 0")
    if not text.endswith("\n"):
        raise FormatError("manifest: last line is not terminated")
    lines = text.splitlines()
    try:
        n = int(lines[0].split("=", 1)[1])
    except ValueError as exc:
        raise FormatError("manifest: malformed record count") from exc
    if len(lines) - 1 != n:
        raise FormatError(f"manifest: header declares {n} records, found {len(lines) - 1}")
    out = []
    for i, line in enumerate(lines[1:], 2):
        fields = line.split("\t")
        if len(fields) != len(MANIFEST_FIELDS):
            raise FormatError(f"manifest: line {i} has {len(fields)} fields, expected {len(MANIFEST_FIELDS)}")
        try:
            out.append(SampleRecord.from_fields(fields))
        except ValueError as exc:
            raise FormatError(f"manifest: line {i}: {exc}") from exc
    return out


def read_manifest(path) -> list[SampleRecord]:
    return decode_manifest(Path(path).read_bytes())


def write_manifest(path, records) -> None:
    Path(path).write_bytes(encode_manifest(records))


# ---------------------------------------------------------------------------
# config files


def parse_config(text: str) -> dict[str, str]:
    """``key=value`` lines; blank lines and ``#`` comments are ignored."""
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise FormatError(f"config line {n}: expected key=value, got {raw!r}")
        if key in out:
            raise FormatError(f"config line {n}: duplicate key {key!r}")
        out[key] = value
    return out


def format_config(mapping: dict[str, object]) -> str:
    return "".join(f"{k}={v}\n" for k, v in mapping.items())


def read_config(path) -> dict[str, str]:
    return parse_config(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# file-level helpers


def write_volume(path, m: IntensityMap) -> None:
    Path(path).write_bytes(encode_volume(m))


def read_volume(path) -> IntensityMap:
    return decode_volume(Path(path).read_bytes())


def write_ply(path, cloud: np.ndarray) -> None:
    Path(path).write_bytes(encode_ply(cloud))


def read_ply(path) -> np.ndarray:
    return decode_ply(Path(path).read_bytes())
