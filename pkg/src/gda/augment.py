"""Classical augmentations and the real/augmented dataset mixer.

``mix_dataset`` keeps every real sample and appends ``round(r/100 * N)``
augmented ones, split across gesture classes by largest remainder.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .csi_data import ConditionLabel
from .diffusion import check_condition, sample_batch
from .dsp import Spectrogram, centered_axis, resize_bilinear

METHODS = ("generative", "crop", "flip_time", "scale_amplitude", "none")
RATIOS = (0, 20, 40, 60, 80, 100)


@dataclass(frozen=True)
class AugmentationPlan:
    method: str = "generative"
    ratio_percent: int = 0
    seed: int = 42
    crop_range: tuple = (0.7, 0.95)
    scale_range: tuple = (0.8, 1.2)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown augmentation method {self.method!r}; choose from {METHODS}")
        if self.ratio_percent not in RATIOS:
            raise ValueError(f"ratio_percent must be one of {RATIOS}, got {self.ratio_percent}")
        lo, hi = self.crop_range
        if not 0 < lo <= hi <= 1:
            raise ValueError(f"crop_range must satisfy 0 < lo <= hi <= 1, got {self.crop_range}")
        if not 0 < self.scale_range[0] <= self.scale_range[1]:
            raise ValueError(f"scale_range must be positive and ordered, got {self.scale_range}")


# ---------------------------------------------------------------- transforms

def crop_resize(spec: Spectrogram, frac: float, rng) -> Spectrogram:
    """Random sub-window with side fraction ``frac``, resized back to the full shape."""
    if not 0 < frac <= 1:
        raise ValueError(f"crop fraction must be in (0, 1], got {frac}")
    n_f, n_k = spec.shape
    h, w = max(1, round(frac * n_f)), max(1, round(frac * n_k))
    i = int(rng.integers(0, n_f - h + 1))
    j = int(rng.integers(0, n_k - w + 1))
    window = spec.pixels[i : i + h, j : j + w]
    return spec.with_pixels(np.clip(resize_bilinear(window, (n_f, n_k)), 0.0, 1.0), "synthetic")


def flip_time(spec: Spectrogram) -> Spectrogram:
    return spec.with_pixels(spec.pixels[:, ::-1], "synthetic")


def scale_amplitude(spec: Spectrogram, factor: float) -> Spectrogram:
    if not factor > 0:
        raise ValueError(f"scale factor must be positive, got {factor}")
    return spec.with_pixels(np.clip(spec.pixels * np.float32(factor), 0.0, 1.0), "synthetic")


# ---------------------------------------------------------------- allocation

def augmented_count(n_real: int, ratio_percent: int) -> int:
    """round(r/100 * N) with halves rounded up."""
    return math.floor(ratio_percent * n_real / 100 + 0.5)


def allocate(counts, total: int):
    """Split ``total`` across classes proportionally to ``counts`` (largest remainder, ties to lower id)."""
    counts = np.asarray(counts, dtype=np.int64)
    n = int(counts.sum())
    if n == 0:
        raise ValueError("cannot allocate over empty classes")
    exact = counts * total
    base = exact // n
    rem = exact - base * n  # fractional parts scaled by n, kept integral
    short = total - int(base.sum())
    order = sorted(range(len(counts)), key=lambda c: (-rem[c], c))
    for c in order[:short]:
        base[c] += 1
    return base


# ---------------------------------------------------------------- generative source

class DiffusionGenerator:
    """Labelled synthetic spectrograms from a trained conditional denoiser.

    Sample k of a condition always uses the same seed, and results are cached,
    so larger requests extend smaller ones.
    """

    def __init__(self, model, schedule, guidance_weight: float = 2.0, seed: int = 42, batch_size: int = 32,
                 sample_rate_hz: float = 1000.0):
        self.model = model
        self.schedule = schedule
        self.guidance_weight = guidance_weight
        self.seed = seed
        self.batch_size = batch_size
        self.sample_rate_hz = sample_rate_hz
        self._cache = {}

    def request(self, wanted):
        """Fill the cache so each condition in ``wanted`` (dict cond -> n) has at least n samples."""
        todo = []
        for cond, n in wanted.items():
            check_condition(self.model, cond)
            have = len(self._cache.setdefault(cond, []))
            todo += [(cond, k) for k in range(have, n)]
        axis = None
        for start in range(0, len(todo), self.batch_size):
            chunk = todo[start : start + self.batch_size]
            seeds = [[self.seed, *c.as_tuple(), k] for c, k in chunk]
            px = sample_batch(self.model, self.schedule, [c for c, _ in chunk], seeds, self.guidance_weight)
            axis = centered_axis(px.shape[1], self.sample_rate_hz) if axis is None else axis
            for (cond, _), p in zip(chunk, px):
                self._cache[cond].append(Spectrogram(p.astype(np.float32), cond, "synthetic", axis))

    def generate(self, condition: ConditionLabel, n: int):
        self.request({condition: n})
        return self._cache[condition][:n]


# ---------------------------------------------------------------- mixing

def _class_sources(real, gesture, seed, n):
    """Indices of real samples of ``gesture`` in a seeded cyclic order, first n entries."""
    idx = [i for i, s in enumerate(real) if s.condition.gesture == gesture]
    rng = np.random.default_rng([seed, gesture])
    out = []
    while len(out) < n:
        out += [idx[j] for j in rng.permutation(len(idx))]
    return out[:n]


def augment_one(spec: Spectrogram, plan: AugmentationPlan, rng) -> Spectrogram:
    if plan.method == "crop":
        return crop_resize(spec, rng.uniform(*plan.crop_range), rng)
    if plan.method == "flip_time":
        return flip_time(spec)
    if plan.method == "scale_amplitude":
        return scale_amplitude(spec, rng.uniform(*plan.scale_range))
    raise ValueError(f"method {plan.method!r} is not a per-sample transform")


def mix_dataset(real, plan: AugmentationPlan, generator=None):
    """Real samples followed by the augmented ones; returns (spectrograms, methods).

    ``methods[i]`` is "none" for real entries and ``plan.method`` for added
    ones. Classes are visited in ascending gesture id. Augmented samples take
    their full condition label from a real source sample of the same class.
    """
    real = list(real)
    if not real:
        raise ValueError("mix_dataset needs a non-empty real set")
    total = augmented_count(len(real), plan.ratio_percent)
    if plan.method == "none" or total == 0:
        return real, ["none"] * len(real)
    if plan.method == "generative" and generator is None:
        raise ValueError("generative augmentation needs a generator")
    gestures = sorted({s.condition.gesture for s in real})
    counts = [sum(s.condition.gesture == g for s in real) for g in gestures]
    quota = allocate(counts, total)
    sources = {g: _class_sources(real, g, plan.seed, int(q)) for g, q in zip(gestures, quota)}
    added = []
    if plan.method == "generative":
        wanted, order = {}, []
        for g in gestures:
            for i in sources[g]:
                cond = real[i].condition
                order.append((cond, wanted.get(cond, 0)))
                wanted[cond] = wanted.get(cond, 0) + 1
        generator.request(wanted)
        for cond, k in order:
            added.append(generator.generate(cond, k + 1)[k])
    else:
        for g in gestures:
            for k, i in enumerate(sources[g]):
                added.append(augment_one(real[i], plan, np.random.default_rng([plan.seed, g, k])))
    return real + added, ["none"] * len(real) + [plan.method] * len(added)
