"""End-to-end run: synthetic corpus -> DFS -> diffusion -> augmentation sweep.

    python3 scripts/run_experiment.py --out runs/exp --train-steps 800

Every stage goes through the ``gda`` CLI, so the run directory holds the same
artifacts a manual session would produce.
"""
import argparse
import json
import sys
import time
from pathlib import Path

from gda.cli import main as gda


def stage(name, argv, timings):
    start = time.perf_counter()
    code = gda([str(a) for a in argv])
    timings[name] = round(time.perf_counter() - start, 1)
    if code != 0:
        sys.exit(f"{name} failed with exit code {code}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/exp")
    ap.add_argument("--per-gesture", type=int, default=60)
    ap.add_argument("--train-steps", type=int, default=800)
    ap.add_argument("--lr", type=float, default=2e-3)
    ap.add_argument("--methods", default="generative,crop")
    ap.add_argument("--models", default="resnet_lite")
    ap.add_argument("--seed", type=int, default=42)
    args = ap.parse_args()

    root = Path(args.out)
    root.mkdir(parents=True, exist_ok=True)
    diff_cfg = root / "diff_config.json"
    diff_cfg.write_text(json.dumps({"train_steps": args.train_steps, "lr": args.lr}))
    timings = {}
    stage("synth", ["synth-dataset", "--per-gesture", args.per_gesture, "--seed", args.seed, "--out", root / "csi"],
          timings)
    stage("dfs", ["dfs", "--input", root / "csi", "--seed", args.seed, "--out", root / "dfs"], timings)
    sweep = ["sweep", "--input", root / "dfs", "--methods", args.methods, "--seed", args.seed, "--out", root / "sweep"]
    if "generative" in args.methods.split(","):
        stage("train-diff", ["train-diff", "--config", diff_cfg, "--input", root / "dfs", "--seed", args.seed,
                             "--out", root / "diffusion"], timings)
        sweep += ["--checkpoint", root / "diffusion" / "diffusion.gdam"]
    for model in args.models.split(","):
        stage(f"sweep-{model}", sweep + ["--model", model, "--out", root / f"sweep_{model}"], timings)
        print((root / f"sweep_{model}" / "table.csv").read_text())
    (root / "timings.json").write_text(json.dumps(timings, indent=1) + "\n")
    print(json.dumps(timings))


if __name__ == "__main__":
    main()
