"""``rimr`` command line.

Exit codes: 0 success, 1 usage error, 2 data or validation error, 3 numerical abort.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import codecs
from .pipeline import (DataError, NumericalAbort, SceneSpec, TrainConfig, build_dataset, checkpoint_predictor,
                       evaluate, load_manifest, load_stage1, load_stage2, reconstruct, train_stage1,
                       train_stage2)
from .tensor.checkpoint import CheckpointError, decode_checkpoint

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NAN = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rimr", description="Radar to 3D reconstruction toolkit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="synthesize a dataset")
    s.add_argument("--config", type=Path)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--workers", type=int, default=1)

    for name in ("train-stage1", "train-stage2"):
        t = sub.add_parser(name, help=f"train {name[-6:]}")
        t.add_argument("--manifest", type=Path, required=True)
        t.add_argument("--config", type=Path)
        t.add_argument("--out", type=Path, required=True)
        t.add_argument("--seed", type=int)
        t.add_argument("--resume", action="store_true")
        if name == "train-stage2":
            t.add_argument("--stage1-ckpt", type=Path)

    r = sub.add_parser("reconstruct", help="run both generators on manifest samples")
    r.add_argument("--manifest", type=Path, required=True)
    r.add_argument("--ckpt1", type=Path, required=True)
    r.add_argument("--ckpt2", type=Path, required=True)
    r.add_argument("--out", type=Path, required=True)
    r.add_argument("--sample", action="append", help="sample id (repeatable); default all")

    e = sub.add_parser("eval", help="evaluate reconstructions against ground truth")
    e.add_argument("--manifest", type=Path, required=True)
    e.add_argument("--ckpt1", type=Path, required=True)
    e.add_argument("--ckpt2", type=Path, required=True)
    e.add_argument("--out", type=Path)
    e.add_argument("--tau", type=float, default=0.05)
    e.add_argument("--voxel-size", type=float, default=0.05)

    i = sub.add_parser("inspect", help="summarize a RIMRVOL, PLY, PGM or checkpoint file")
    i.add_argument("path", type=Path)
    return p


def _config(path: Path | None) -> dict[str, str]:
    if path is None:
        return {}
    if not path.is_file():
        raise DataError(f"config not found: {path}")
    try:
        return codecs.read_config(path)
    except (codecs.FormatError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: {exc}") from exc


def _cmd_synth(args) -> int:
    try:
        spec, radar = SceneSpec.from_mapping(_config(args.config))
    except (ValueError, TypeError) as exc:
        raise DataError(f"{args.config}: {exc}") from exc
    manifest = build_dataset(spec, args.out, args.seed, radar, workers=args.workers)
    print(f"wrote {spec.samples} samples, manifest {manifest}")
    return EXIT_OK


def _train_configs(args, stage: int):
    try:
        train, net1, net2 = TrainConfig.from_file_mapping(_config(args.config))
    except (ValueError, TypeError) as exc:
        raise DataError(f"{args.config}: {exc}") from exc
    kwargs = {"stage": stage}
    if args.seed is not None:
        kwargs["seed"] = args.seed
    return replace(train, **kwargs), net1, net2


def _cmd_train1(args) -> int:
    cfg, net1, _ = _train_configs(args, 1)
    res = train_stage1(args.manifest, cfg, args.out, net1, resume=args.resume)
    print(f"checkpoint {res.checkpoint}\nloss log {res.log}")
    return EXIT_OK


def _cmd_train2(args) -> int:
    cfg, _, net2 = _train_configs(args, 2)
    if cfg.coarse_mode == "stage1" and args.stage1_ckpt is None:
        raise UsageError("rimr train-stage2: coarse_mode=stage1 needs --stage1-ckpt")
    res = train_stage2(args.manifest, cfg, args.out, net2, stage1_ckpt=args.stage1_ckpt, resume=args.resume)
    print(f"checkpoint {res.checkpoint}\nloss log {res.log}")
    return EXIT_OK


def _cmd_reconstruct(args) -> int:
    root, records = load_manifest(args.manifest)
    g1, g2 = load_stage1(args.ckpt1), load_stage2(args.ckpt2)
    if args.sample:
        known = {r.id: r for r in records}
        missing = [s for s in args.sample if s not in known]
        if missing:
            raise DataError(f"unknown sample ids {missing}")
        records = [known[s] for s in args.sample]
    args.out.mkdir(parents=True, exist_ok=True)
    for rec in records:
        res = reconstruct(root, rec, g1, g2)
        codecs.write_ply(args.out / f"{rec.id}.ply", res.cloud)
        for v, img in enumerate(res.depths):
            codecs.write_depth(args.out / f"{rec.id}_view{v}.pgm", img)
        print(f"{rec.id}: {len(res.cloud)} points")
    return EXIT_OK


def _cmd_eval(args) -> int:
    for p in (args.ckpt1, args.ckpt2):
        if not p.is_file():
            raise DataError(f"checkpoint not found: {p}")
    result = evaluate(args.manifest, checkpoint_predictor(args.ckpt1, args.ckpt2), args.tau, args.voxel_size)
    lines = result.to_lines()
    if args.out is not None:
        result.write(args.out)
    for line in lines:
        if line.startswith(("mean.", "std.")):
            print(line)
    return EXIT_OK


def describe(path: Path) -> list[str]:
    """Human-readable summary of a file; never writes."""
    if not path.is_file():
        raise DataError(f"file not found: {path}")
    buf = path.read_bytes()
    try:
        if buf.startswith(codecs.VOL_MAGIC):
            m = codecs.decode_volume(buf)
            v = m.values
            out = [f"RIMRVOL {m.frame} intensity map", f"shape: {v.shape[0]} x {v.shape[1]} x {v.shape[2]}",
                   f"min/max: {v.min():.6g} / {v.max():.6g}", f"nonzero: {np.count_nonzero(v)}"]
            if m.bounds is not None:
                out.append("bounds: " + " ".join(f"[{a:.4g}, {b:.4g}]" for a, b in m.bounds))
            return out
        if buf.startswith(b"RIMRCKPT"):
            entries = decode_checkpoint(buf)
            total = sum(e.data.size for e in entries if not e.name.startswith("@"))
            out = ["RIMRCKPT checkpoint", f"entries: {len(entries)}", f"parameters: {total}"]
            out += [f"{e.name[1:]}: {float(e.data):g}" for e in entries if e.name.startswith("@")]
            return out
        if buf.startswith(b"ply\n"):
            cloud = codecs.decode_ply(buf)
            out = ["PLY ascii point cloud", f"vertex count: {len(cloud)}"]
            if len(cloud):
                lo, hi = cloud.min(axis=0), cloud.max(axis=0)
                out.append("bbox: " + " ".join(f"[{a:.4g}, {b:.4g}]" for a, b in zip(lo, hi)))
            return out
        if buf.startswith(b"P5\n"):
            d = codecs.decode_pgm(buf)
            valid = d[d > 0]
            out = ["PGM depth image", f"size: {d.shape[1]} x {d.shape[0]}", f"valid pixels: {valid.size}"]
            if valid.size:
                out.append(f"depth range: {valid.min():.3f} .. {valid.max():.3f} m")
            return out
    except (codecs.FormatError, CheckpointError) as exc:
        raise DataError(f"{path}: {exc}") from exc
    raise DataError(f"{path}: unrecognized file format")


def _cmd_inspect(args) -> int:
    for line in describe(args.path):
        print(line)
    return EXIT_OK


_COMMANDS = {"synth": _cmd_synth, "train-stage1": _cmd_train1, "train-stage2": _cmd_train2,
             "reconstruct": _cmd_reconstruct, "eval": _cmd_eval, "inspect": _cmd_inspect}


def run(argv: list[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        print(parser.format_usage(), file=sys.stderr, end="")
        return EXIT_USAGE
    except NumericalAbort as exc:
        print(f"rimr: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NAN
    except (DataError, codecs.FormatError, CheckpointError, FileNotFoundError) as exc:
        print(f"rimr: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
