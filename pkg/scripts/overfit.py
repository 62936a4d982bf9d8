"""Overfit one synthesized sample with each stage and report how far the loss falls."""
import argparse
from pathlib import Path

from rimr.experiments import overfit_stage1, overfit_stage2
from rimr.pipeline import SceneSpec, build_dataset, deterministic


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("runs/overfit"))
    ap.add_argument("--stage", type=int, choices=(1, 2), default=1)
    ap.add_argument("--steps", type=int, default=300)
    ap.add_argument("--seeds", type=int, default=1)
    args = ap.parse_args()

    manifest = args.out / "data" / "manifest.txt"
    if not manifest.is_file():
        manifest = build_dataset(SceneSpec(samples=1), args.out / "data", seed=0)
    run = overfit_stage1 if args.stage == 1 else overfit_stage2
    with deterministic(True):
        for seed in range(args.seeds):
            res = run(manifest, args.out / f"stage{args.stage}_seed{seed}", seed=seed, steps=args.steps)
            line = f"seed {seed}: {res.initial:.5f} -> {res.final:.5f}"
            if res.reference is not None:
                line += f" (coarse input {res.reference:.5f}, pass={res.passed_stage2})"
            else:
                line += f" (pass={res.passed_stage1})"
            print(line, flush=True)


if __name__ == "__main__":
    main()
