"""Two-condition 8x8 toy: how often do conditional samples land on the requested side?

    python3 scripts/toy_diffusion.py --train-steps 800 --guidance 2.0
"""
import argparse
import time

import numpy as np

from gda.csi_data import ConditionLabel, Vocab
from gda.diffusion import DiffusionConfig, SamplerConfig, sample, train_diffusion
from gda.dsp import Spectrogram


def half_bright(n, seed):
    """Condition 0 is bright on the left half, condition 1 on the right."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        img = np.zeros((8, 8))
        img[:, (i % 2) * 4 : (i % 2) * 4 + 4] = 1.0
        img = np.clip(img * rng.uniform(0.7, 1.0) + rng.uniform(0, 0.1, (8, 8)), 0, 1)
        out.append(Spectrogram(img, ConditionLabel(i % 2)))
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--train-steps", type=int, default=800)
    ap.add_argument("--guidance", type=float, default=2.0)
    ap.add_argument("--per-condition", type=int, default=100)
    ap.add_argument("--seed", type=int, default=42)
    args = ap.parse_args()
    cfg = DiffusionConfig(steps=50, train_steps=args.train_steps, batch_size=16, lr=2e-3, seed=args.seed)
    start = time.perf_counter()
    model, schedule, losses = train_diffusion(half_bright(64, 0), cfg, Vocab(gestures=2))
    print(f"trained {args.train_steps} steps in {time.perf_counter() - start:.0f}s, "
          f"loss {np.mean(losses[:50]):.3f} -> {np.mean(losses[-50:]):.3f}")
    for g in (0, 1):
        got = sample(model, schedule, SamplerConfig(ConditionLabel(g), args.per_condition, args.guidance, args.seed,
                                                    batch_size=args.per_condition))
        left = sum(s.pixels[:, :4].sum() > s.pixels[:, 4:].sum() for s in got)
        hits = left if g == 0 else len(got) - left
        print(f"condition {g}: {hits}/{len(got)} on the requested side")


if __name__ == "__main__":
    main()
