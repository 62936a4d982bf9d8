"""Scaled-down training experiments shared by scripts/ and the acceptance tests."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from pathlib import Path

from . import codecs
from .metrics import chamfer
from .pipeline import (SceneSpec, TrainConfig, build_dataset, build_stage2, checkpoint_predictor, coarse_cloud,
                       evaluate, load_manifest, load_stage2, read_cloud, train_stage1, train_stage2)
from .stage1 import Stage1Config
from .stage2 import Stage2Config, g_p2p_forward


@dataclass
class OverfitResult:
    seed: int
    initial: float
    final: float
    reference: float | None = None      # stage 2: chamfer of the coarse input

    @property
    def passed_stage1(self) -> bool:
        return self.final < 0.2 * self.initial

    @property
    def passed_stage2(self) -> bool:
        return self.reference is not None and self.final < 0.5 * self.reference


def overfit_stage1(manifest, out_dir, seed: int = 0, steps: int = 300, net: Stage1Config = Stage1Config(),
                   on_step=None) -> OverfitResult:
    """One view of one sample, batch 1: every epoch is a single step."""
    cfg = TrainConfig(stage=1, epochs=steps, batch_size=1, max_samples=1, views=(0,), seed=seed,
                      checkpoint_every=steps + 1)
    res = train_stage1(manifest, cfg, out_dir, net, on_step=on_step)
    return OverfitResult(seed, res.history[0]["L_1"], res.history[-1]["L_1"])


def overfit_stage2(manifest, out_dir, seed: int = 0, steps: int = 300, net: Stage2Config = Stage2Config(),
                   on_step=None) -> OverfitResult:
    """Refine the bootstrap coarse cloud of one sample; ``initial`` is the untrained output's chamfer."""
    cfg = TrainConfig(stage=2, epochs=steps, batch_size=1, max_samples=1, seed=seed,
                      checkpoint_every=steps + 1)
    root, records = load_manifest(manifest)
    coarse = coarse_cloud(root, records[0], 0, cfg)
    truth = read_cloud(root, records[0])
    res = train_stage2(manifest, cfg, out_dir, replace(net, seed=seed), on_step=on_step)
    init, _ = build_stage2(replace(net, seed=seed), seed, with_disc=False)
    before = chamfer(g_p2p_forward(init.eval(), coarse), truth)
    after = chamfer(g_p2p_forward(load_stage2(res.checkpoint), coarse), truth)
    return OverfitResult(seed, before, after, chamfer(coarse, truth))


def split_manifest(manifest, n_train: int, out_dir) -> tuple[Path, Path]:
    """Write train/test manifests over the same sample files (paths stay relative to the data root)."""
    root, records = load_manifest(manifest)
    if len(records) <= n_train:
        raise ValueError(f"need more than {n_train} samples to hold out a test set, got {len(records)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if out.resolve() != root.resolve():
        raise ValueError("split manifests must live next to the data they reference")
    train, test = out / "train.txt", out / "test.txt"
    codecs.write_manifest(train, records[:n_train])
    codecs.write_manifest(test, records[n_train:])
    return train, test


VARIANTS = {"full": {}, "DPN": {"no_discriminator": True}, "CLN": {"no_iou": True}}


def ablation(data_dir, out_dir, seed: int, epochs: int = 200, n_train: int = 60, spec: SceneSpec | None = None,
             net1: Stage1Config = Stage1Config(), net2: Stage2Config = Stage2Config(), log=print) -> dict[str, float]:
    """Mean test chamfer of the full model and the two ablations, all sharing one Stage-1 network."""
    data = Path(data_dir)
    manifest = data / "manifest.txt"
    if not manifest.is_file():
        build_dataset(spec or SceneSpec(samples=80), data, seed=0)
    train, test = split_manifest(manifest, n_train, data)
    out = Path(out_dir)
    base = TrainConfig(epochs=epochs, seed=seed, checkpoint_every=max(epochs, 1))
    log(f"seed {seed}: stage 1")
    r1 = train_stage1(train, base, out / "stage1", net1)
    results = {}
    for name, flags in VARIANTS.items():
        log(f"seed {seed}: stage 2 {name}")
        cfg = replace(base, stage=2, **flags)
        r2 = train_stage2(train, cfg, out / f"stage2_{name}", net2)
        ev = evaluate(test, checkpoint_predictor(r1.checkpoint, r2.checkpoint, cfg.min_depth))
        ev.write(out / f"metrics_{name}.txt")
        results[name] = ev.means["chamfer"]
    return results


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def pipeline_run(out_dir, seed: int, spec: SceneSpec, net1: Stage1Config, net2: Stage2Config,
                 epochs: int = 5) -> dict[str, str]:
    """synth, train both stages, evaluate; returns digests of every checkpoint and report."""
    out = Path(out_dir)
    manifest = build_dataset(spec, out / "data", seed)
    cfg = TrainConfig(epochs=epochs, seed=seed, checkpoint_every=epochs)
    r1 = train_stage1(manifest, cfg, out / "stage1", net1)
    r2 = train_stage2(manifest, replace(cfg, stage=2), out / "stage2", net2)
    ev = evaluate(manifest, checkpoint_predictor(r1.checkpoint, r2.checkpoint, min_depth=0.0))
    ev.write(out / "metrics.txt")
    files = [r1.checkpoint, r1.log, r2.checkpoint, r2.log, out / "metrics.txt"]
    return {str(Path(f).relative_to(out)): file_digest(f) for f in files}
