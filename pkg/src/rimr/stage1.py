"""Radar-to-depth GAN: 3D-encoder/2D-decoder generator, two-stream discriminator."""
from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor.nn import BatchNorm, Conv2d, Conv3d, ConvTranspose2d, Linear, Module, frozen


@dataclass(frozen=True)
class Stage1Config:
    """Network shape. The defaults map a 64x64x256 Cartesian map to a 128x128 depth image."""

    map_shape: tuple[int, int, int] = (64, 64, 256)
    enc_channels: tuple[int, ...] = (8, 16, 32, 64, 128, 256)
    latent: int = 512
    base_channels: int = 256
    base_size: int = 4
    up_channels: tuple[int, ...] = (128, 64, 32, 16, 8)
    refine_channels: tuple[int, ...] = (8, 4, 2, 1)
    skip_k: int = 8
    img_down_channels: tuple[int, ...] = (8, 16, 32, 64, 64)
    img_refine_channels: tuple[int, ...] = (64, 64, 64, 64)
    fusion_channels: int = 8
    max_range: float = 9.593
    seed: int = 0

    def __post_init__(self):
        if self.refine_channels[-1] != 1 or len(self.refine_channels) < 2:
            raise ValueError("the last refine layer must have one channel")
        if not 1 <= self.skip_k <= self.map_shape[2]:
            raise ValueError(f"skip_k={self.skip_k} outside [1, {self.map_shape[2]}]")
        for axis, size in enumerate(self.encoded_spatial):
            if size < 1:
                raise ValueError(f"encoder collapses map axis {axis} of {self.map_shape} to zero")
        if self.encoded_width != self.image_encoded_width:
            raise ValueError(f"radar features ({self.encoded_width}) and image features "
                             f"({self.image_encoded_width}) must have equal width")
        side = int(round(np.sqrt(self.encoded_width)))
        if side * side != self.encoded_width or side % 2:
            raise ValueError(f"feature width {self.encoded_width} must be an even perfect square")

    @property
    def encoded_spatial(self) -> tuple[int, ...]:
        # kernel 4, stride 2, pad 1 halves (floor) every axis
        return tuple(s >> len(self.enc_channels) for s in self.map_shape)

    @property
    def encoded_width(self) -> int:
        return self.enc_channels[-1] * int(np.prod(self.encoded_spatial))

    @property
    def image_size(self) -> int:
        return self.base_size << len(self.up_channels)

    @property
    def image_encoded_width(self) -> int:
        side = self.image_size >> len(self.img_down_channels)
        last = (self.img_down_channels + self.img_refine_channels)[-1]
        return last * side * side


@dataclass(frozen=True)
class Stage1LossWeights:
    lambda_1: float = 1000.0
    lambda_p: float = 20.0

    def __post_init__(self):
        if self.lambda_1 < 0 or self.lambda_p < 0:
            raise ValueError("loss weights must be non-negative")


# ---------------------------------------------------------------------------
# input preparation


def normalize_maps(maps: np.ndarray, cfg: Stage1Config) -> np.ndarray:
    """(B, Z, X, Y) maps scaled by their own maximum; an all-zero map stays zero."""
    maps = np.asarray(maps, dtype=np.float64)
    if maps.ndim == 3:
        maps = maps[None]
    if maps.shape[1:] != tuple(cfg.map_shape):
        raise ValueError(f"expected intensity maps of shape {cfg.map_shape}, got {maps.shape[1:]}")
    peak = maps.reshape(len(maps), -1).max(axis=1)
    scale = np.where(peak > 0, peak, 1.0)
    return maps / scale[:, None, None, None]


def _resize_nearest(x: np.ndarray, h: int, w: int) -> np.ndarray:
    rows = (np.arange(h) * x.shape[-2]) // h
    cols = (np.arange(w) * x.shape[-1]) // w
    return x[..., rows[:, None], cols[None, :]]


def skip_feature(maps: np.ndarray, k: int, size: tuple[int, int]) -> np.ndarray:
    """Top-k values along range for every (elevation, azimuth) cell, as k channels.

    ``maps`` is (Z, X, Y) or (B, Z, X, Y); the result is (k, H, W) or
    (B, k, H, W) after nearest-neighbour resizing to ``size``.
    """
    maps = np.asarray(maps)
    single = maps.ndim == 3
    if single:
        maps = maps[None]
    top = -np.sort(-maps, axis=3)[..., :k]                 # (B, Z, X, k), descending
    feat = np.moveaxis(top, 3, 1)
    feat = _resize_nearest(feat, *size)
    return feat[0] if single else feat


# ---------------------------------------------------------------------------
# networks


class RadarEncoder(Module):
    """Strided conv3d stack followed by flattening."""

    def __init__(self, cfg: Stage1Config, rng: np.random.Generator):
        chans = (1,) + cfg.enc_channels
        self.convs = [Conv3d(a, b, 4, 2, 1, rng) for a, b in zip(chans, chans[1:])]
        self.norms = [BatchNorm(b) for b in cfg.enc_channels]

    def forward(self, x: T.Tensor) -> T.Tensor:
        for conv, bn in zip(self.convs, self.norms):
            x = bn(T.leaky_relu(conv(x)))
        return T.reshape(x, (x.shape[0], -1))


class Stage1Generator(Module):
    def __init__(self, cfg: Stage1Config = Stage1Config(), rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        self.cfg = cfg
        self.encoder = RadarEncoder(cfg, rng)
        self.to_latent = Linear(cfg.encoded_width, cfg.latent, rng)
        self.from_latent = Linear(cfg.latent, cfg.base_channels * cfg.base_size ** 2, rng)
        up = (cfg.base_channels,) + cfg.up_channels
        self.up = [ConvTranspose2d(a, b, 4, 2, 1, rng) for a, b in zip(up, up[1:])]
        self.up_norms = [BatchNorm(b) for b in cfg.up_channels]
        r = cfg.refine_channels
        ins = [up[-1], r[0] + cfg.skip_k] + list(r[1:-1])
        self.refine = [ConvTranspose2d(a, b, 3, 1, 1, rng) for a, b in zip(ins, r)]
        self.refine_norms = [BatchNorm(b) for b in r[:-1]]

    def forward(self, maps: np.ndarray) -> T.Tensor:
        """Raw (B, Z, X, Y) intensity maps to (B, 1, H, W) depth in units of ``max_range``."""
        cfg = self.cfg
        norm = normalize_maps(maps, cfg)
        dtype = T.get_default_dtype()
        x = T.Tensor(norm[:, None].astype(dtype))
        skip = T.Tensor(skip_feature(norm, cfg.skip_k, (cfg.image_size, cfg.image_size)).astype(dtype))
        h = self.to_latent(self.encoder(x))
        h = T.reshape(self.from_latent(h), (x.shape[0], cfg.base_channels, cfg.base_size, cfg.base_size))
        for conv, bn in zip(self.up, self.up_norms):
            h = bn(T.relu(conv(h)))
        for i, conv in enumerate(self.refine):
            h = conv(h)
            if i == len(self.refine) - 1:
                return T.relu(h)
            h = self.refine_norms[i](T.relu(h))
            if i == 0:
                h = T.concat([h, skip], axis=1)
        raise AssertionError("unreachable")


class ImageEncoder(Module):
    def __init__(self, cfg: Stage1Config, rng: np.random.Generator):
        down = (1,) + cfg.img_down_channels
        convs = [Conv2d(a, b, 4, 2, 1, rng) for a, b in zip(down, down[1:])]
        ref = (down[-1],) + cfg.img_refine_channels
        convs += [Conv2d(a, b, 3, 1, 1, rng) for a, b in zip(ref, ref[1:])]
        self.convs = convs
        self.norms = [BatchNorm(c.weight.shape[0]) for c in convs]

    def forward(self, x: T.Tensor) -> T.Tensor:
        for conv, bn in zip(self.convs, self.norms):
            x = bn(T.leaky_relu(conv(x)))
        return T.reshape(x, (x.shape[0], -1))


class Stage1Discriminator(Module):
    """Scores (radar map, depth image) pairs."""

    def __init__(self, cfg: Stage1Config = Stage1Config(), rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(cfg.seed + 1)
        self.cfg = cfg
        self.radar = RadarEncoder(cfg, rng)
        self.image = ImageEncoder(cfg, rng)
        self.side = int(round(np.sqrt(cfg.encoded_width)))
        self.fuse1 = Conv2d(2, cfg.fusion_channels, 4, 2, 1, rng)
        self.fuse_norm = BatchNorm(cfg.fusion_channels)
        self.fuse2 = Conv2d(cfg.fusion_channels, 1, self.side // 2, 1, 0, rng)

    def encode_maps(self, maps: np.ndarray) -> T.Tensor:
        norm = normalize_maps(maps, self.cfg)
        return self.radar(T.Tensor(norm[:, None].astype(T.get_default_dtype())))

    def score(self, radar_features: T.Tensor, img: T.Tensor) -> T.Tensor:
        cfg = self.cfg
        if img.ndim != 4 or img.shape[1:] != (1, cfg.image_size, cfg.image_size):
            raise ValueError(f"expected depth images of shape (B, 1, {cfg.image_size}, {cfg.image_size}), "
                             f"got {img.shape}")
        if img.shape[0] != radar_features.shape[0]:
            raise ValueError(f"batch mismatch: {radar_features.shape[0]} maps, {img.shape[0]} images")
        f = T.concat([radar_features, self.image(img)], axis=1)
        f = T.reshape(f, (f.shape[0], 2, self.side, self.side))
        h = self.fuse_norm(T.leaky_relu(self.fuse1(f)))
        s = T.sigmoid(self.fuse2(h))
        return T.reshape(s, (s.shape[0],))

    def forward(self, maps: np.ndarray, img: T.Tensor) -> T.Tensor:
        return self.score(self.encode_maps(maps), img)


class PerceptualExtractor:
    """Frozen, seed-fixed random conv pyramid used as a stand-in for pretrained features."""

    def __init__(self, channels=(16, 32, 64), seed: int = 1234):
        rng = np.random.default_rng(seed)
        chans = (1,) + tuple(channels)
        dtype = T.get_default_dtype()
        self.kernels = [T.Tensor(rng.normal(0, np.sqrt(2.0 / (a * 16)), size=(b, a, 4, 4)).astype(dtype))
                        for a, b in zip(chans, chans[1:])]

    def features(self, x: T.Tensor) -> list[T.Tensor]:
        out = []
        for k in self.kernels:
            x = T.relu(T.conv2d(x, T.Tensor(k.data.astype(x.dtype)), 2, 1))
            out.append(x)
        return out

    def loss(self, pred: T.Tensor, target: T.Tensor) -> T.Tensor:
        with T.no_grad():
            tf = [T.Tensor(f.data) for f in self.features(target)]
        pf = self.features(pred)
        total = T.mse(pf[0], tf[0])
        for a, b in zip(pf[1:], tf[1:]):
            total = total + T.mse(a, b)
        return total * (1.0 / len(pf))


# ---------------------------------------------------------------------------
# public forward passes and losses


def g_r2i_forward(gen: Stage1Generator, intensity: np.ndarray) -> np.ndarray:
    """Eval-mode depth prediction for one (Z, X, Y) map, in meters."""
    was = gen.training
    gen.eval()
    try:
        with T.no_grad():
            out = gen(np.asarray(intensity)[None]).data[0, 0]
    finally:
        gen.train(was)
    return out.astype(np.float64) * gen.cfg.max_range


def d_r2i_forward(disc: Stage1Discriminator, intensity: np.ndarray, depth: np.ndarray) -> float:
    was = disc.training
    disc.eval()
    try:
        with T.no_grad():
            img = T.Tensor((np.asarray(depth) / disc.cfg.max_range)[None, None])
            s = disc(np.asarray(intensity)[None], img)
    finally:
        disc.train(was)
    return float(s.data[0])


def stage1_g_loss(maps: np.ndarray, target: T.Tensor, gen, disc, extractor: PerceptualExtractor,
                  weights: Stage1LossWeights = Stage1LossWeights()) -> tuple[T.Tensor, dict[str, float]]:
    """Least-squares adversarial term plus weighted L1 and perceptual terms.

    ``target`` is (B, 1, H, W) depth in units of ``max_range``. ``gen`` and
    ``disc`` may be any callables with the network signatures.
    """
    pred = gen(maps)
    ctx = frozen(disc) if isinstance(disc, Module) else contextlib.nullcontext()
    with ctx:
        score = disc(maps, pred)
    gan = T.mse(score, np.ones(score.shape, dtype=score.dtype))
    rec = T.l1(pred, target)
    perc = extractor.loss(pred, target)
    total = gan + rec * weights.lambda_1 + perc * weights.lambda_p
    return total, {"L_GAN": float(gan.data), "L_1": float(rec.data), "L_p": float(perc.data)}


def stage1_d_loss(maps: np.ndarray, target: T.Tensor, gen, disc) -> T.Tensor:
    with T.no_grad():
        fake = T.Tensor(gen(maps).data)
    if isinstance(disc, Stage1Discriminator):
        feats = disc.encode_maps(maps)
        s_real, s_fake = disc.score(feats, target), disc.score(feats, fake)
    else:
        s_real, s_fake = disc(maps, target), disc(maps, fake)
    one = np.ones(s_real.shape, dtype=s_real.dtype)
    return (T.mse(s_real, one) + T.mse(s_fake, np.zeros_like(one))) * 0.5
