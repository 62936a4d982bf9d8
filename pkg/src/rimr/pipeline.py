"""Dataset synthesis, the two training loops, end-to-end reconstruction and evaluation."""
from __future__ import annotations

import contextlib
import math
import os
import shutil
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import codecs
from . import tensor as T
from .config import from_mapping, to_mapping
from .geometry import (SHAPE_KINDS, CameraModel, DepthImage, Pose, backproject, camera_look_at,
                       canonical_viewpoints, generate_shape, render_depth, rotation_z, sensor_look_at,
                       union_views)
from .metrics import MetricReport, aggregate, chamfer, full_report
from .radar import (Degradation, RadarConfig, ReflectorScene, default_snapshot_rows, process_fft,
                    synthesize_raw, to_cartesian)
from .rng import stream, stream_seed
from .stage1 import (PerceptualExtractor, Stage1Config, Stage1Discriminator, Stage1Generator,
                     Stage1LossWeights, g_r2i_forward, stage1_d_loss, stage1_g_loss)
from .stage2 import (Stage2Config, Stage2Discriminator, Stage2Generator, Stage2LossWeights, g_p2p_forward,
                     prepare_clouds, stage2_d_loss, stage2_g_loss)
from .tensor.checkpoint import decode_checkpoint, load_checkpoint, save_checkpoint
from .tensor.nn import Module

VIEWS = 4


class DataError(ValueError):
    """Missing or invalid input data."""


class NumericalAbort(RuntimeError):
    """A training loss became non-finite."""


# ---------------------------------------------------------------------------
# determinism


@contextlib.contextmanager
def deterministic(enabled: bool = True):
    """Pin BLAS to one thread so reductions happen in a fixed order."""
    enabled = enabled or os.environ.get("RIMR_DETERMINISTIC") == "1"
    if not enabled:
        yield
        return
    from threadpoolctl import threadpool_limits
    with threadpool_limits(limits=1):
        yield


# ---------------------------------------------------------------------------
# dataset synthesis


@dataclass(frozen=True)
class SceneSpec:
    samples: int = 10
    kinds: tuple[str, ...] = SHAPE_KINDS
    size_min: float = 0.3
    size_max: float = 0.8
    surface_density: float = 3000.0      # ground-truth cloud, points per square meter
    reflector_fraction: float = 0.15     # share of surface points acting as radar reflectors
    offset_max: float = 0.1              # object center jitter in xy, meters
    radius: float = 2.0                  # horizontal sensor distance from the scene center
    height: float = 0.5                  # sensor height above the object center
    half_extent: float = 1.0             # half-width of the Cartesian box around the target
    map_grid: tuple[int, int, int] = (64, 64, 256)
    snr_db: float | None = 20.0
    specular_max_angle_deg: float | None = 80.0
    focal: float = 128.0
    image_size: int = 128

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("samples must be positive")
        bad = [k for k in self.kinds if k not in SHAPE_KINDS]
        if bad or not self.kinds:
            raise ValueError(f"unknown shape kinds {bad}")
        if not 0 < self.size_min <= self.size_max:
            raise ValueError("need 0 < size_min <= size_max")
        if not 0 < self.reflector_fraction <= 1:
            raise ValueError("reflector_fraction must lie in (0, 1]")

    @property
    def camera(self) -> CameraModel:
        c = self.image_size / 2
        return CameraModel(self.focal, c, c, self.image_size, self.image_size)

    @property
    def view_distance(self) -> float:
        return float(np.hypot(self.radius, self.height))

    @property
    def bounds(self) -> np.ndarray:
        """Sensor-frame box (x, y, z) centered on the view target."""
        h, d = self.half_extent, self.view_distance
        return np.array([(-h, h), (d - h, d + h), (-h, h)])

    @classmethod
    def from_mapping(cls, mapping: dict[str, str]) -> tuple["SceneSpec", RadarConfig]:
        radar_keys = {k: v for k, v in mapping.items() if k.startswith("radar.")}
        radar = RadarConfig.from_mapping({k[6:]: v for k, v in radar_keys.items()})
        unknown = [k[6:] for k in radar_keys if k[6:] not in RadarConfig.keys()]
        if unknown:
            raise ValueError(f"unknown radar config keys {unknown}")
        rest = {k: v for k, v in mapping.items() if not k.startswith("radar.")}
        return from_mapping(cls, rest), radar


def _view_poses(spec: SceneSpec):
    target = np.zeros(3)
    eyes = canonical_viewpoints(target, spec.radius, spec.height, VIEWS)
    return [(camera_look_at(eye, target), sensor_look_at(eye, target)) for eye in eyes]


def synthesize_sample(spec: SceneSpec, radar: RadarConfig, seed: int, index: int):
    """Everything for one sample, in memory: (record fields, cloud, maps, depths)."""
    rng = stream(seed, "sample", index)
    kind = spec.kinds[int(rng.integers(len(spec.kinds)))]
    size = np.sort(rng.uniform(spec.size_min, spec.size_max, 3))[::-1]
    yaw = rng.uniform(0, 2 * np.pi)
    offset = np.append(rng.uniform(-spec.offset_max, spec.offset_max, 2), 0.0)
    obj_pose = Pose(rotation_z(yaw), offset)
    pts, normals = generate_shape(kind, size, spec.surface_density, int(rng.integers(2 ** 31)),
                                  return_normals=True)
    cloud = obj_pose.apply(pts)
    normals = normals @ obj_pose.rotation.T
    pick = rng.random(len(cloud)) < spec.reflector_fraction
    degr = Degradation(spec.snr_db, spec.specular_max_angle_deg)
    maps, depths = [], []
    for v, (cam_pose, sensor_pose) in enumerate(_view_poses(spec)):
        scene = ReflectorScene(cloud[pick], 1.0, sensor_pose, normals[pick])
        raw = synthesize_raw(scene, radar, rows=default_snapshot_rows(radar), degradation=degr,
                             rng=stream(seed, "noise", VIEWS * index + v))
        polar = process_fft(raw, radar, sensor_pose)
        maps.append(to_cartesian(polar, spec.bounds, spec.map_grid))
        depths.append(render_depth(cloud, spec.camera.with_pose(cam_pose)))
    return kind, tuple(float(s) for s in size), obj_pose, cloud, maps, depths


def _write_sample(args) -> codecs.SampleRecord:
    spec, radar, seed, index, out_dir = args
    sid = f"s{index:05d}"
    kind, size, pose, cloud, maps, depths = synthesize_sample(spec, radar, seed, index)
    final = Path(out_dir) / "samples" / sid
    # write into a scratch directory and rename, so a sample is either complete or absent
    tmp = Path(tempfile.mkdtemp(prefix=f".{sid}-", dir=final.parent))
    try:
        codecs.write_ply(tmp / "cloud.ply", cloud)
        for v in range(VIEWS):
            codecs.write_volume(tmp / f"view{v}.vol", maps[v])
            codecs.write_depth(tmp / f"view{v}.pgm", depths[v])
        if final.exists():
            shutil.rmtree(final)
        tmp.rename(final)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    rel = f"samples/{sid}"
    return codecs.SampleRecord(sid, kind, size, pose, f"{rel}/cloud.ply",
                               tuple(f"{rel}/view{v}.vol" for v in range(VIEWS)),
                               tuple(f"{rel}/view{v}.pgm" for v in range(VIEWS)))


def build_dataset(spec: SceneSpec, out_dir, seed: int, radar: RadarConfig = RadarConfig(),
                  workers: int = 1) -> Path:
    """Synthesize ``spec.samples`` samples under ``out_dir``; returns the manifest path."""
    out = Path(out_dir)
    try:
        (out / "samples").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create dataset directory {out}: {exc}") from exc
    jobs = [(spec, radar, seed, i, out) for i in range(spec.samples)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            records = list(pool.map(_write_sample, jobs))
    else:
        records = [_write_sample(j) for j in jobs]
    manifest = out / "manifest.txt"
    codecs.write_manifest(manifest, records)
    return manifest


def load_manifest(path) -> tuple[Path, list[codecs.SampleRecord]]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    try:
        records = codecs.read_manifest(path)
    except codecs.FormatError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if not records:
        raise DataError(f"manifest {path} has no records")
    return path.parent, records


def _read(root: Path, rel: str, reader):
    p = root / rel
    if not p.is_file():
        raise DataError(f"missing file {p}")
    try:
        return reader(p)
    except codecs.FormatError as exc:
        raise DataError(f"{p}: {exc}") from exc


def read_view(root: Path, rec: codecs.SampleRecord, v: int):
    return _read(root, rec.maps[v], codecs.read_volume), _read(root, rec.depths[v], codecs.read_depth)


def read_cloud(root: Path, rec: codecs.SampleRecord) -> np.ndarray:
    return _read(root, rec.cloud, codecs.read_ply)


# ---------------------------------------------------------------------------
# training configuration and bookkeeping


@dataclass(frozen=True)
class TrainConfig:
    stage: int = 1
    epochs: int = 200
    batch_size: int = 4
    seed: int = 0
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    lambda_1: float = 1000.0
    lambda_p: float = 20.0
    lambda_cf: float = 100.0
    lambda_iou: float = 10.0
    no_discriminator: bool = False       # generator-only baseline
    no_iou: bool = False                 # GAN without the IoU term
    checkpoint_every: int = 25
    max_samples: int | None = None       # use only the first records
    views: tuple[int, ...] = (0, 1, 2, 3)
    coarse_mode: str = "bootstrap"       # or "stage1"
    corruption_prob: float = 0.2
    corruption_amp: float = 0.1
    min_depth: float = 0.1               # predicted depths below this are treated as no return
    deterministic: bool = True

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise ValueError(f"stage must be 1 or 2, got {self.stage}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.coarse_mode not in ("bootstrap", "stage1"):
            raise ValueError(f"unknown coarse_mode {self.coarse_mode!r}")
        if any(v not in range(VIEWS) for v in self.views) or not self.views:
            raise ValueError(f"views must be drawn from 0..{VIEWS - 1}")

    @classmethod
    def from_file_mapping(cls, mapping: dict[str, str]):
        """Split ``train``, ``net1.`` and ``net2.`` keys into the three configs."""
        for key in mapping:
            if "." in key and not key.startswith(("net1.", "net2.")):
                raise ValueError(f"unknown config key {key!r}")
        train = from_mapping(cls, {k: v for k, v in mapping.items() if "." not in k})
        net1 = from_mapping(Stage1Config, mapping, prefix="net1.", strict=False)
        net2 = from_mapping(Stage2Config, mapping, prefix="net2.", strict=False)
        for key in mapping:
            if key.startswith("net1.") and key[5:] not in to_mapping(net1):
                raise ValueError(f"unknown config key {key!r}")
            if key.startswith("net2.") and key[5:] not in to_mapping(net2):
                raise ValueError(f"unknown config key {key!r}")
        return train, net1, net2


class LossLog:
    """Tab-separated per-epoch loss log; reopening appends after the last epoch."""

    def __init__(self, path, columns: Sequence[str], resume: bool = False):
        self.path = Path(path)
        self.columns = ["epoch", *columns]
        header = "\t".join(self.columns) + "\n"
        if resume and self.path.exists():
            if not self.path.read_text(encoding="utf-8").startswith(header):
                raise DataError(f"{self.path}: existing log has different columns")
        else:
            self.path.write_text(header, encoding="utf-8")

    def append(self, epoch: int, values: dict[str, float]) -> None:
        row = [str(epoch)] + [repr(float(values[c])) for c in self.columns[1:]]
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write("\t".join(row) + "\n")

    @staticmethod
    def read(path) -> tuple[list[str], list[list[float]]]:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return lines[0].split("\t"), [[float(v) for v in line.split("\t")] for line in lines[1:]]


class _Nets(Module):
    def __init__(self, gen: Module, disc: Module | None):
        self.gen = gen
        if disc is not None:
            self.disc = disc


def _check_finite(values: dict[str, float], batch_id: str) -> None:
    bad = [k for k, v in values.items() if not math.isfinite(v)]
    if bad:
        raise NumericalAbort(f"non-finite {', '.join(bad)} at batch {batch_id}")


def _save(path: Path, nets: _Nets, opts: dict[str, T.Adam], epoch: int, net_cfg, stage: int) -> None:
    extra = {"epoch": float(epoch), "stage": float(stage)}
    extra.update({f"step_{k}": float(o.step_count) for k, o in opts.items()})
    save_checkpoint(path, nets.state(), extra)
    path.with_suffix(".net").write_text(codecs.format_config(to_mapping(net_cfg)), encoding="utf-8")


def _resume(path: Path, nets: _Nets, opts: dict[str, T.Adam]) -> int:
    extra = load_checkpoint(path, nets.state())
    for k, o in opts.items():
        o.step_count = int(extra.get(f"step_{k}", 0))
    return int(extra.get("epoch", 0))


def _batches(n: int, batch_size: int, seed: int, purpose: str, epoch: int) -> list[np.ndarray]:
    order = stream(seed, purpose, epoch).permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


@dataclass
class TrainResult:
    checkpoint: Path
    log: Path
    history: list[dict[str, float]] = field(default_factory=list)


# ---------------------------------------------------------------------------
# stage 1


def stage1_examples(root: Path, records, cfg: TrainConfig, net: Stage1Config):
    """(maps, targets) with targets in units of ``net.max_range``, shape (N, 1, H, W)."""
    maps, targets = [], []
    for rec in records:
        for v in cfg.views:
            m, d = read_view(root, rec, v)
            if m.values.shape != tuple(net.map_shape):
                raise DataError(f"{rec.maps[v]}: map shape {m.values.shape} != network {net.map_shape}")
            if d.depth.shape != (net.image_size, net.image_size):
                raise DataError(f"{rec.depths[v]}: depth shape {d.depth.shape} != network image size")
            maps.append(m.values)
            targets.append(d.depth / net.max_range)
    return np.stack(maps), np.stack(targets)[:, None]


def build_stage1(net: Stage1Config, seed: int):
    gen = Stage1Generator(net, stream(seed, "stage1-gen"))
    disc = Stage1Discriminator(net, stream(seed, "stage1-disc"))
    return gen, disc


def train_stage1(manifest, cfg: TrainConfig, out_dir, net: Stage1Config = Stage1Config(),
                 resume: bool = False, on_step: Callable[[int, dict], None] | None = None) -> TrainResult:
    root, records = load_manifest(manifest)
    if cfg.max_samples is not None:
        records = records[:cfg.max_samples]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with deterministic(cfg.deterministic):
        maps, targets = stage1_examples(root, records, cfg, net)
        dtype = T.get_default_dtype()
        targets = targets.astype(dtype)
        gen, disc = build_stage1(net, cfg.seed)
        nets = _Nets(gen, disc)
        opts = {"g": T.Adam(gen.parameters(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps),
                "d": T.Adam(disc.parameters(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)}
        extractor = PerceptualExtractor()
        weights = Stage1LossWeights(cfg.lambda_1, cfg.lambda_p)
        ckpt = out / "stage1.ckpt"
        start = _resume(ckpt, nets, opts) if resume else 0
        log = LossLog(out / "stage1_loss.tsv", ["L_D", "L_GAN", "L_1", "L_p"], resume=resume)
        history = []
        step = 0
        for epoch in range(start + 1, cfg.epochs + 1):
            sums = {"L_D": 0.0, "L_GAN": 0.0, "L_1": 0.0, "L_p": 0.0}
            batches = _batches(len(maps), cfg.batch_size, cfg.seed, "stage1-order", epoch)
            for b, idx in enumerate(batches):
                m, tgt = maps[idx], T.Tensor(targets[idx])
                d_loss = stage1_d_loss(m, tgt, gen, disc)
                opts["d"].zero_grad()
                T.backward(d_loss)
                opts["d"].step()
                g_loss, parts = stage1_g_loss(m, tgt, gen, disc, extractor, weights)
                opts["g"].zero_grad()
                T.backward(g_loss)
                opts["g"].step()
                parts["L_D"] = float(d_loss.data)
                _check_finite(parts, f"{epoch}:{b}")
                for k in sums:
                    sums[k] += parts[k] / len(batches)
                step += 1
                if on_step is not None:
                    on_step(step, parts)
            log.append(epoch, sums)
            history.append(sums)
            if epoch % cfg.checkpoint_every == 0:
                _save(out / f"stage1_e{epoch:04d}.ckpt", nets, opts, epoch, net, 1)
        _save(ckpt, nets, opts, max(cfg.epochs, start), net, 1)
    return TrainResult(ckpt, log.path, history)


def load_stage1(path) -> Stage1Generator:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    net_path = path.with_suffix(".net")
    if not net_path.is_file():
        raise DataError(f"network config not found: {net_path}")
    net = from_mapping(Stage1Config, codecs.read_config(net_path))
    gen, disc = build_stage1(net, 0)
    load_checkpoint(path, _Nets(gen, disc).state())
    return gen.eval()


# ---------------------------------------------------------------------------
# stage 2


def corrupt_depth(depth: np.ndarray, rng: np.random.Generator, amp: float) -> np.ndarray:
    """Multiply depth by a smooth random field in ``[1 - amp, 1 + amp]``."""
    coarse = rng.uniform(-amp, amp, size=(4, 4))
    h, w = depth.shape
    ys, xs = np.linspace(0, 3, h), np.linspace(0, 3, w)
    y0, x0 = np.minimum(ys.astype(int), 2), np.minimum(xs.astype(int), 2)
    fy, fx = (ys - y0)[:, None], (xs - x0)[None, :]
    c = coarse
    field_ = ((1 - fy) * (1 - fx) * c[y0][:, x0] + (1 - fy) * fx * c[y0][:, x0 + 1]
              + fy * (1 - fx) * c[y0 + 1][:, x0] + fy * fx * c[y0 + 1][:, x0 + 1])
    return depth * (1 + field_)


def coarse_cloud(root: Path, rec: codecs.SampleRecord, index: int, cfg: TrainConfig,
                 stage1: Stage1Generator | None = None) -> np.ndarray:
    """Union of back-projected depth views: ground truth (optionally corrupted) or Stage-1 output."""
    views = []
    for v in range(VIEWS):
        m, d = read_view(root, rec, v)
        if cfg.coarse_mode == "stage1":
            if stage1 is None:
                raise DataError("coarse_mode=stage1 needs a Stage-1 checkpoint")
            depth = g_r2i_forward(stage1, m.values)
            depth[depth < cfg.min_depth] = 0.0
        else:
            depth = d.depth
            rng = stream(cfg.seed, "corrupt", VIEWS * index + v)
            if rng.random() < cfg.corruption_prob:
                depth = corrupt_depth(depth, rng, cfg.corruption_amp)
        views.append(DepthImage(depth, d.camera))
    cloud = union_views(views)
    if len(cloud) == 0:
        raise DataError(f"sample {rec.id}: all views are empty")
    return cloud


def build_stage2(net: Stage2Config, seed: int, with_disc: bool = True):
    gen = Stage2Generator(net, stream(seed, "stage2-gen"))
    disc = Stage2Discriminator(net, stream(seed, "stage2-disc")) if with_disc else None
    return gen, disc


def train_stage2(manifest, cfg: TrainConfig, out_dir, net: Stage2Config = Stage2Config(),
                 stage1_ckpt=None, resume: bool = False,
                 on_step: Callable[[int, dict], None] | None = None) -> TrainResult:
    root, records = load_manifest(manifest)
    if cfg.max_samples is not None:
        records = records[:cfg.max_samples]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with deterministic(cfg.deterministic):
        g1 = load_stage1(stage1_ckpt) if cfg.coarse_mode == "stage1" else None
        coarse = [coarse_cloud(root, r, i, cfg, g1) for i, r in enumerate(records)]
        truths = [read_cloud(root, r) for r in records]
        use_disc = not cfg.no_discriminator
        gen, disc = build_stage2(net, cfg.seed, use_disc)
        nets = _Nets(gen, disc)
        opts = {"g": T.Adam(gen.parameters(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)}
        if use_disc:
            opts["d"] = T.Adam(disc.parameters(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
        weights = Stage2LossWeights(cfg.lambda_cf, 0.0 if cfg.no_iou else cfg.lambda_iou)
        ckpt = out / "stage2.ckpt"
        start = _resume(ckpt, nets, opts) if resume else 0
        columns = (["L_D"] if use_disc else []) + ["L_GAN", "L_cf", "L_iou"]
        log = LossLog(out / "stage2_loss.tsv", columns, resume=resume)
        history = []
        step = 0
        for epoch in range(start + 1, cfg.epochs + 1):
            sums = dict.fromkeys(columns, 0.0)
            batches = _batches(len(records), cfg.batch_size, cfg.seed, "stage2-order", epoch)
            for b, idx in enumerate(batches):
                rs = stream_seed(cfg.seed, "resample", epoch) % (2 ** 32)
                x = T.Tensor(prepare_clouds([coarse[i] for i in idx], net.n_input, rs))
                tb = [truths[i] for i in idx]
                parts = {}
                if use_disc:
                    d_loss = stage2_d_loss(x, tb, gen, disc, truth_seed=rs)
                    opts["d"].zero_grad()
                    T.backward(d_loss)
                    opts["d"].step()
                    parts["L_D"] = float(d_loss.data)
                g_loss, g_parts = stage2_g_loss(x, tb, gen, disc, weights, net.voxel_size)
                opts["g"].zero_grad()
                T.backward(g_loss)
                opts["g"].step()
                parts.update(g_parts)
                _check_finite(parts, f"{epoch}:{b}")
                for k in sums:
                    sums[k] += parts[k] / len(batches)
                step += 1
                if on_step is not None:
                    on_step(step, parts)
            log.append(epoch, sums)
            history.append(sums)
            if epoch % cfg.checkpoint_every == 0:
                _save(out / f"stage2_e{epoch:04d}.ckpt", nets, opts, epoch, net, 2)
        _save(ckpt, nets, opts, max(cfg.epochs, start), net, 2)
    return TrainResult(ckpt, log.path, history)


def load_stage2(path) -> Stage2Generator:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    net_path = path.with_suffix(".net")
    if not net_path.is_file():
        raise DataError(f"network config not found: {net_path}")
    net = from_mapping(Stage2Config, codecs.read_config(net_path))
    entries = {e.name for e in decode_checkpoint(path.read_bytes())}
    gen, disc = build_stage2(net, 0, with_disc=any(n.startswith("disc.") for n in entries))
    load_checkpoint(path, _Nets(gen, disc).state())
    return gen.eval()


# ---------------------------------------------------------------------------
# inference and evaluation


@dataclass
class Reconstruction:
    cloud: np.ndarray
    depths: list[DepthImage]
    coarse: np.ndarray


def reconstruct(root: Path, rec: codecs.SampleRecord, g1: Stage1Generator, g2: Stage2Generator,
                min_depth: float = 0.1) -> Reconstruction:
    """Radar maps to four depth images, their back-projected union, then the refined cloud."""
    depths = []
    for v in range(VIEWS):
        if v >= len(rec.maps):
            raise DataError(f"sample {rec.id}: view {v} missing")
        m, d = read_view(root, rec, v)
        depth = g_r2i_forward(g1, m.values)
        depth[depth < min_depth] = 0.0
        depths.append(DepthImage(depth, d.camera))
    coarse = union_views(depths)
    if len(coarse) == 0:
        raise DataError(f"sample {rec.id}: the Stage-1 network produced no depth returns")
    return Reconstruction(g_p2p_forward(g2, coarse), depths, coarse)


@dataclass
class Evaluation:
    ids: list[str]
    reports: list[MetricReport]
    means: dict[str, float]
    stds: dict[str, float]

    def to_lines(self) -> list[str]:
        out = []
        for sid, rep in zip(self.ids, self.reports):
            out += rep.to_lines(prefix=f"{sid}.")
        out += [f"mean.{k}={v!r}" for k, v in self.means.items()]
        out += [f"std.{k}={v!r}" for k, v in self.stds.items()]
        return out

    def write(self, path) -> None:
        Path(path).write_text("".join(line + "\n" for line in self.to_lines()), encoding="utf-8")


def evaluate(manifest, predictor: Callable[[Path, codecs.SampleRecord], np.ndarray], tau: float = 0.05,
             voxel_size: float = 0.05, sensor_origin=(0.0, 0.0, 0.0)) -> Evaluation:
    root, records = load_manifest(manifest)
    reports = []
    for rec in records:
        truth = read_cloud(root, rec)
        reports.append(full_report(predictor(root, rec), truth, tau, voxel_size, sensor_origin))
    means, stds = aggregate(reports)
    return Evaluation([r.id for r in records], reports, means, stds)


def checkpoint_predictor(ckpt1, ckpt2, min_depth: float = 0.1):
    g1, g2 = load_stage1(ckpt1), load_stage2(ckpt2)
    return lambda root, rec: reconstruct(root, rec, g1, g2, min_depth).cloud


def truth_predictor(root: Path, rec: codecs.SampleRecord) -> np.ndarray:
    return read_cloud(root, rec)


def coarse_chamfer(manifest, cfg: TrainConfig) -> list[float]:
    """Chamfer of the bootstrap coarse clouds, the reference the refinement must beat."""
    root, records = load_manifest(manifest)
    return [chamfer(coarse_cloud(root, r, i, cfg), read_cloud(root, r)) for i, r in enumerate(records)]


__all__ = [
    "DataError", "NumericalAbort", "SceneSpec", "TrainConfig", "LossLog", "TrainResult", "Reconstruction",
    "Evaluation", "build_dataset", "synthesize_sample", "load_manifest", "read_view", "read_cloud",
    "train_stage1", "train_stage2", "load_stage1", "load_stage2", "coarse_cloud", "corrupt_depth",
    "reconstruct", "evaluate", "checkpoint_predictor", "truth_predictor", "coarse_chamfer",
    "deterministic",
]
