"""Point-cloud losses and evaluation metrics.

Distances are plain (unsquared) Euclidean norms throughout. Nearest
neighbours are found with a k-d tree and their distances recomputed as
``sqrt(sum((a - b)**2))`` so results agree exactly with brute-force search.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .geometry import VoxelGrid, voxelize
from .tensor import Tensor, straight_through

IOU_EPS = 1e-6
_TIE_CANDIDATES = 4


def _cloud(x) -> np.ndarray:
    arr = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64).reshape(-1, 3)
    return arr


def nearest(queries: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distance and index of each query's nearest target (ties to the lowest index)."""
    queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 3)
    if len(targets) == 0:
        raise ValueError("nearest-neighbour search against an empty cloud")
    k = min(_TIE_CANDIDATES, len(targets))
    _, cand = cKDTree(targets).query(queries, k=k)
    cand = cand.reshape(len(queries), k)
    d = np.sqrt(((queries[:, None, :] - targets[cand]) ** 2).sum(-1))
    best = d.min(axis=1, keepdims=True)
    # among exact ties, prefer the lowest target index
    masked = np.where(d == best, cand, np.iinfo(np.int64).max)
    idx = masked.min(axis=1)
    return best[:, 0], idx


def chamfer(s1, s2) -> float:
    a, b = _cloud(s1), _cloud(s2)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer distance is undefined for an empty cloud")
    d12, _ = nearest(a, b)
    d21, _ = nearest(b, a)
    return float(d12.mean()) + float(d21.mean())


def _chamfer_single(pred: np.ndarray, truth: np.ndarray):
    """Value and gradient w.r.t. ``pred`` of the two-sided mean nearest distance."""
    d_pt, i_pt = nearest(pred, truth)
    d_tp, i_tp = nearest(truth, pred)
    value = float(d_pt.mean()) + float(d_tp.mean())
    grad = np.zeros_like(pred)
    with np.errstate(invalid="ignore", divide="ignore"):
        diff = pred - truth[i_pt]
        unit = np.where(d_pt[:, None] > 0, diff / d_pt[:, None], 0.0)
        grad += unit / len(pred)
        diff = pred[i_tp] - truth
        unit = np.where(d_tp[:, None] > 0, diff / d_tp[:, None], 0.0)
    np.add.at(grad, i_tp, unit / len(truth))
    return value, grad


def chamfer_loss(pred: Tensor, truth) -> Tensor:
    """Differentiable chamfer distance.

    ``pred`` is (m, 3) with ``truth`` one cloud, or (B, m, 3) with ``truth`` a
    sequence of B clouds; the batch result is the mean over samples.
    """
    batched = pred.ndim == 3
    preds = pred.data.reshape((-1,) + pred.shape[-2:]) if batched else pred.data[None]
    truths = list(truth) if batched else [truth]
    if len(truths) != len(preds):
        raise ValueError(f"chamfer_loss: {len(preds)} predictions but {len(truths)} targets")
    values, grads = [], []
    for p, t in zip(preds, truths):
        t = _cloud(t)
        if len(p) == 0 or len(t) == 0:
            raise ValueError("chamfer distance is undefined for an empty cloud")
        v, g = _chamfer_single(p.astype(np.float64), t)
        values.append(v)
        grads.append(g)
    scale = 1.0 / len(preds)
    out = np.asarray(sum(values) * scale, dtype=pred.dtype)
    grad_all = (np.stack(grads) * scale).astype(pred.dtype).reshape(pred.shape)
    return Tensor.from_op(out, (pred,), lambda g: (grad_all * g,), "chamfer")


# ---------------------------------------------------------------------------
# voxel IoU


def voxel_iou(a: VoxelGrid, b: VoxelGrid, eps: float = IOU_EPS) -> float:
    if not a.same_lattice(b):
        raise ValueError("voxel_iou: grids differ in origin, voxel size or dims")
    ka, kb = a.keys, b.keys
    inter = len(np.intersect1d(ka, kb, assume_unique=True))
    union = len(ka) + len(kb) - inter
    return inter / (union + eps)


def iou_grid(pred, truth, voxel_size: float):
    """Lattice covering both clouds' bounding box padded by one voxel.

    The origin snaps to a multiple of ``voxel_size`` so cell boundaries do not
    move when a point moves; only the extent of the lattice does.
    """
    if not voxel_size > 0:
        raise ValueError(f"voxel size must be positive, got {voxel_size}")
    pts = np.concatenate([_cloud(pred), _cloud(truth)])
    lo = (np.floor(pts.min(axis=0) / voxel_size) - 1) * voxel_size
    hi = pts.max(axis=0) + voxel_size
    dims = tuple(int(v) for v in np.floor((hi - lo) / voxel_size).astype(np.int64) + 1)
    return lo, dims


def hard_iou(pred, truth, voxel_size: float, eps: float = IOU_EPS) -> float:
    origin, dims = iou_grid(pred, truth, voxel_size)
    return voxel_iou(voxelize(_cloud(pred), origin, voxel_size, dims),
                     voxelize(_cloud(truth), origin, voxel_size, dims), eps)


def _surrogate_single(pred: np.ndarray, truth: np.ndarray, voxel_size: float):
    origin, dims = iou_grid(pred, truth, voxel_size)
    centers = voxelize(truth, origin, voxel_size, dims).centers()
    d, idx = nearest(centers, pred)
    grad = np.zeros_like(pred)
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(d[:, None] > 0, (pred[idx] - centers) / d[:, None], 0.0)
    np.add.at(grad, idx, unit / len(centers))
    return float(d.mean()), grad


def iou_surrogate(pred, truth, voxel_size: float) -> tuple[float, np.ndarray]:
    """Mean distance from truth-occupied voxel centers to the nearest predicted point, and its gradient.

    The voxel lattice is held fixed at its value for the current prediction.
    """
    return _surrogate_single(_cloud(pred), _cloud(truth), voxel_size)


def iou_loss(pred: Tensor, truth, voxel_size: float, mode: str = "hard") -> Tensor:
    """``1 - IoU`` with the surrogate's gradient.

    ``mode="hard"`` reports the voxel IoU loss value; ``mode="surrogate"``
    reports the surrogate itself, which is what the gradient differentiates.
    Batched like :func:`chamfer_loss`.
    """
    if mode not in ("hard", "surrogate"):
        raise ValueError(f"unknown iou_loss mode {mode!r}")
    batched = pred.ndim == 3
    preds = pred.data.reshape((-1,) + pred.shape[-2:]) if batched else pred.data[None]
    truths = list(truth) if batched else [truth]
    if len(truths) != len(preds):
        raise ValueError(f"iou_loss: {len(preds)} predictions but {len(truths)} targets")
    hards, surs, grads = [], [], []
    for p, t in zip(preds, truths):
        p64, t64 = p.astype(np.float64), _cloud(t)
        s, g = _surrogate_single(p64, t64, voxel_size)
        surs.append(s)
        grads.append(g)
        hards.append(1.0 - hard_iou(p64, t64, voxel_size))
    scale = 1.0 / len(preds)
    grad_all = (np.stack(grads) * scale).astype(pred.dtype).reshape(pred.shape)
    sur_value = np.asarray(sum(surs) * scale, dtype=pred.dtype)
    surrogate = Tensor.from_op(sur_value, (pred,), lambda g: (grad_all * g,), "iou_surrogate")
    if mode == "surrogate":
        return surrogate
    return straight_through(sum(hards) * scale, surrogate)


# ---------------------------------------------------------------------------
# F-score and the geometric error suite


def precision_recall(pred, truth, tau: float) -> tuple[float, float]:
    a, b = _cloud(pred), _cloud(truth)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("precision/recall undefined for an empty cloud")
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    d_ab, _ = nearest(a, b)
    d_ba, _ = nearest(b, a)
    return float(np.mean(d_ab <= tau)), float(np.mean(d_ba <= tau))


def fscore(pred, truth, tau: float) -> float:
    p, r = precision_recall(pred, truth, tau)
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


@dataclass
class MetricReport:
    chamfer: float = math.nan
    iou: float = math.nan
    fscore: float = math.nan
    ranging_error_m: float = math.nan
    length_error_m: float = math.nan
    width_error_m: float = math.nan
    height_error_m: float = math.nan
    orientation_error_deg: float | None = math.nan
    pct_fictitious: float = math.nan
    pct_surface_missed: float = math.nan

    def to_lines(self, prefix: str = "") -> list[str]:
        out = []
        for key, value in asdict(self).items():
            text = "absent" if value is None else repr(float(value))
            out.append(f"{prefix}{key}={text}")
        return out

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def oriented_extents(cloud: np.ndarray):
    """(length, width, height, heading_deg) from PCA on the xy-plane; heading None when degenerate."""
    cloud = _cloud(cloud)
    xy = cloud[:, :2] - cloud[:, :2].mean(axis=0)
    height = float(np.ptp(cloud[:, 2]))
    cov = xy.T @ xy / max(len(cloud), 1)
    evals, evecs = np.linalg.eigh(cov)
    major = evecs[:, 1]
    minor = evecs[:, 0]
    length = float(np.ptp(xy @ major))
    width = float(np.ptp(xy @ minor))
    degenerate = evals[1] <= 1e-12 or evals[0] <= 1e-9 * evals[1]
    heading = None if degenerate else float(np.degrees(np.arctan2(major[1], major[0])))
    return length, width, height, heading


def _axis_angle_difference(a_deg: float, b_deg: float) -> float:
    d = abs(a_deg - b_deg) % 180.0
    return min(d, 180.0 - d)


def table1_metrics(pred, truth, tau: float, sensor_origin=(0.0, 0.0, 0.0)) -> MetricReport:
    a, b = _cloud(pred), _cloud(truth)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("table1_metrics needs non-empty clouds")
    origin = np.asarray(sensor_origin, dtype=np.float64)
    rep = MetricReport()
    rep.ranging_error_m = abs(float(np.median(np.linalg.norm(a - origin, axis=1)))
                              - float(np.median(np.linalg.norm(b - origin, axis=1))))
    la, wa, ha, hda = oriented_extents(a)
    lb, wb, hb, hdb = oriented_extents(b)
    rep.length_error_m = abs(la - lb)
    rep.width_error_m = abs(wa - wb)
    rep.height_error_m = abs(ha - hb)
    rep.orientation_error_deg = None if hda is None or hdb is None else _axis_angle_difference(hda, hdb)
    d_ab, _ = nearest(a, b)
    d_ba, _ = nearest(b, a)
    rep.pct_fictitious = 100.0 * float(np.mean(d_ab > tau))
    rep.pct_surface_missed = 100.0 * float(np.mean(d_ba > tau))
    return rep


def full_report(pred, truth, tau: float, voxel_size: float, sensor_origin=(0.0, 0.0, 0.0)) -> MetricReport:
    rep = table1_metrics(pred, truth, tau, sensor_origin)
    rep.chamfer = chamfer(pred, truth)
    rep.iou = hard_iou(pred, truth, voxel_size)
    rep.fscore = fscore(pred, truth, tau)
    return rep


def aggregate(reports: Sequence[MetricReport]) -> tuple[dict[str, float], dict[str, float]]:
    """Per-field mean and population std, skipping absent values."""
    if not reports:
        raise ValueError("cannot aggregate an empty set of reports")
    means, stds = {}, {}
    for key in MetricReport.keys():
        vals = np.array([getattr(r, key) for r in reports if getattr(r, key) is not None], dtype=np.float64)
        means[key] = float(vals.mean()) if len(vals) else math.nan
        stds[key] = float(vals.std()) if len(vals) else math.nan
    return means, stds
