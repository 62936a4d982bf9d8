"""Point-cloud refinement GAN: PointNet-style generator and two-stream discriminator."""
from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .geometry import canonical_order, resample
from .metrics import chamfer_loss, iou_loss
from .tensor.nn import Linear, Module, frozen


@dataclass(frozen=True)
class Stage2Config:
    n_input: int = 1024
    n_output: int = 2048
    block1: tuple[int, int] = (64, 128)
    block2: tuple[int, int] = (256, 512)
    decoder: tuple[int, int] = (512, 1024)
    disc_hidden: int = 256
    voxel_size: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.n_input < 1 or self.n_output < 1:
            raise ValueError("point counts must be positive")
        if not self.voxel_size > 0:
            raise ValueError(f"voxel_size must be positive, got {self.voxel_size}")
        for name in ("block1", "block2", "decoder"):
            widths = getattr(self, name)
            if len(widths) != 2 or min(widths) < 1:
                raise ValueError(f"{name} needs two positive widths, got {widths}")

    @property
    def feature_width(self) -> int:
        return self.block2[1]


@dataclass(frozen=True)
class Stage2LossWeights:
    lambda_cf: float = 100.0
    lambda_iou: float = 10.0

    def __post_init__(self):
        if self.lambda_cf < 0 or self.lambda_iou < 0:
            raise ValueError("loss weights must be non-negative")


def prepare_clouds(clouds, n: int, seed: int = 0) -> np.ndarray:
    """Resample every cloud to ``n`` points, independent of input order.

    Points are put in canonical order first so that any permutation of the
    input yields the same resampled set.
    """
    if isinstance(clouds, np.ndarray) and clouds.ndim == 2:
        clouds = [clouds]
    out = []
    for i, c in enumerate(clouds):
        c = np.asarray(c, dtype=np.float64)
        if c.ndim != 2 or c.shape[1] != 3 or len(c) == 0:
            raise ValueError(f"cloud {i} must be a non-empty (N, 3) array, got shape {c.shape}")
        out.append(resample(canonical_order(c), n, seed))
    return np.stack(out)


def _as_batch(points, n: int) -> T.Tensor:
    x = points if isinstance(points, T.Tensor) else T.Tensor(np.asarray(points))
    if x.ndim == 2:
        x = x.reshape((1,) + x.shape)
    if x.ndim != 3 or x.shape[1:] != (n, 3):
        raise ValueError(f"expected clouds of shape (B, {n}, 3), got {x.shape}")
    return x


class PointEncoder(Module):
    """Two stacked PointNet blocks; the output is max-pooled so point order is irrelevant."""

    def __init__(self, cfg: Stage2Config, rng: np.random.Generator):
        a, b = cfg.block1
        c, d = cfg.block2
        self.mlp1 = [Linear(3, a, rng), Linear(a, b, rng)]
        self.mlp2 = [Linear(2 * b, c, rng), Linear(c, d, rng)]

    def forward(self, x: T.Tensor) -> T.Tensor:
        f = self.mlp1[1](T.relu(self.mlp1[0](x)))                  # (B, n, b)
        g = T.max_pool(f, axis=1)                                  # (B, b)
        g = T.broadcast_to(T.reshape(g, (g.shape[0], 1, g.shape[1])), f.shape)
        h = self.mlp2[1](T.relu(self.mlp2[0](T.concat([f, g], axis=2))))
        return T.max_pool(h, axis=1)


class Stage2Generator(Module):
    def __init__(self, cfg: Stage2Config = Stage2Config(), rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        self.cfg = cfg
        self.encoder = PointEncoder(cfg, rng)
        w1, w2 = cfg.decoder
        self.decoder = [Linear(cfg.feature_width, w1, rng), Linear(w1, w2, rng),
                        Linear(w2, 3 * cfg.n_output, rng)]

    def forward(self, points) -> T.Tensor:
        """(B, n, 3) prepared clouds to (B, m, 3) predictions."""
        x = _as_batch(points, self.cfg.n_input)
        h = self.encoder(x)
        h = T.relu(self.decoder[0](h))
        h = T.relu(self.decoder[1](h))
        out = self.decoder[2](h)
        return T.reshape(out, (x.shape[0], self.cfg.n_output, 3))


class Stage2Discriminator(Module):
    """Scores (coarse, candidate) pairs; each stream has its own encoder weights."""

    def __init__(self, cfg: Stage2Config = Stage2Config(), rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(cfg.seed + 1)
        self.cfg = cfg
        self.coarse_encoder = PointEncoder(cfg, rng)
        self.cloud_encoder = PointEncoder(cfg, rng)
        self.head = [Linear(2 * cfg.feature_width, cfg.disc_hidden, rng), Linear(cfg.disc_hidden, 1, rng)]

    def forward(self, coarse, cloud) -> T.Tensor:
        a = self.coarse_encoder(_as_batch(coarse, self.cfg.n_input))
        b = self.cloud_encoder(_as_batch(cloud, self.cfg.n_output))
        h = T.leaky_relu(self.head[0](T.concat([a, b], axis=1)))
        s = T.sigmoid(self.head[1](h))
        return T.reshape(s, (s.shape[0],))


def encode(encoder: PointEncoder, cloud: np.ndarray, n: int, seed: int = 0) -> np.ndarray:
    with T.no_grad():
        return encoder(T.Tensor(prepare_clouds(cloud, n, seed))).data[0]


def g_p2p_forward(gen: Stage2Generator, cloud: np.ndarray, seed: int = 0) -> np.ndarray:
    """Refine one raw coarse cloud of any size into ``m`` points."""
    with T.no_grad():
        return gen(T.Tensor(prepare_clouds(cloud, gen.cfg.n_input, seed))).data[0].astype(np.float64)


def d_p2p_forward(disc: Stage2Discriminator, coarse: np.ndarray, cloud: np.ndarray, seed: int = 0) -> float:
    cfg = disc.cfg
    with T.no_grad():
        s = disc(T.Tensor(prepare_clouds(coarse, cfg.n_input, seed)),
                 T.Tensor(prepare_clouds(cloud, cfg.n_output, seed)))
    return float(s.data[0])


# ---------------------------------------------------------------------------
# losses


Discriminator = Callable[[T.Tensor, T.Tensor], T.Tensor]


def _truth_batch(truths: Sequence[np.ndarray], m: int, seed: int) -> T.Tensor:
    return T.Tensor(prepare_clouds(truths, m, seed))


def stage2_g_loss(coarse: T.Tensor, truths: Sequence[np.ndarray], gen, disc: Discriminator | None,
                  weights: Stage2LossWeights = Stage2LossWeights(), voxel_size: float = 0.05,
                  iou_mode: str = "hard") -> tuple[T.Tensor, dict[str, float]]:
    """Adversarial + weighted chamfer + weighted IoU loss for the generator.

    ``disc=None`` drops the adversarial term (the generator-only baseline).
    With ``lambda_iou == 0`` the IoU loss is still evaluated and reported but
    kept out of the optimized objective.
    """
    pred = gen(coarse)
    if disc is None:
        gan = None
    else:
        ctx = frozen(disc) if isinstance(disc, Module) else contextlib.nullcontext()
        with ctx:
            score = disc(coarse, pred)
        gan = T.mse(score, np.ones(score.shape, dtype=score.dtype))
    cf = chamfer_loss(pred, truths)
    if weights.lambda_iou > 0:
        iou = iou_loss(pred, truths, voxel_size, mode=iou_mode)
        iou_value = float(iou.data)
    else:
        iou = None
        iou_value = float(iou_loss(T.Tensor(pred.data), truths, voxel_size, mode=iou_mode).data)
    total = cf * weights.lambda_cf
    if iou is not None:
        total = total + iou * weights.lambda_iou
    if gan is not None:
        total = gan + total
    parts = {"L_GAN": float(gan.data) if gan is not None else 0.0, "L_cf": float(cf.data), "L_iou": iou_value}
    return total, parts


def stage2_d_loss(coarse: T.Tensor, truths: Sequence[np.ndarray], gen, disc: Discriminator,
                  truth_seed: int = 0) -> T.Tensor:
    with T.no_grad():
        fake = T.Tensor(gen(coarse).data)
    m = fake.shape[1]
    real = _truth_batch(truths, m, truth_seed).data.astype(fake.dtype)
    s_real = disc(coarse, T.Tensor(real))
    s_fake = disc(coarse, fake)
    one = np.ones(s_real.shape, dtype=s_real.dtype)
    return (T.mse(s_real, one) + T.mse(s_fake, np.zeros_like(one))) * 0.5

