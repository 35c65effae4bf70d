"""Augmentation-ratio sweep: mix, train a fresh classifier, evaluate on the held-out split."""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from .augment import RATIOS, AugmentationPlan, mix_dataset
from .classifier import ClassifierConfig, evaluate, predict, train_classifier
from .dsp import stack_pixels
from .metrics import best_match_ssim, quality_report

log = logging.getLogger(__name__)

CSV_COLUMNS = ("model", "method", "ratio_percent", "accuracy", "macro_precision", "macro_recall", "macro_f1")
METRIC_NAMES = CSV_COLUMNS[3:]


@dataclass(frozen=True)
class SweepConfig:
    models: tuple = ("resnet_lite",)
    methods: tuple = ("generative", "crop")
    ratios: tuple = RATIOS
    seed: int = 42
    lr: float = 1e-4
    batch_size: int = 32
    epochs: int = 20

    def __post_init__(self):
        bad = [r for r in self.ratios if r not in RATIOS]
        if bad:
            raise ValueError(f"ratios {bad} not in {RATIOS}")
        for m in self.methods:
            AugmentationPlan(m, 0)
        for m in self.models:
            ClassifierConfig(arch=m)


@dataclass
class SweepResult:
    rows: list  # dicts keyed by CSV_COLUMNS, ordered by (model, method, ratio)
    quality: dict = field(default_factory=dict)
    histories: dict = field(default_factory=dict)

    def csv_body(self) -> str:
        lines = [",".join(CSV_COLUMNS)]
        for r in self.rows:
            lines.append(",".join([r["model"], r["method"], str(r["ratio_percent"])]
                                  + [f"{r[m]:.4f}" for m in METRIC_NAMES]))
        return "\n".join(lines) + "\n"

    def pivot_csv(self) -> str:
        """One line per (model, method, metric), one column per ratio."""
        ratios = sorted({r["ratio_percent"] for r in self.rows})
        lines = [",".join(["model", "method", "metric"] + [f"{r}%" for r in ratios])]
        keys = []
        for r in self.rows:
            if (r["model"], r["method"]) not in keys:
                keys.append((r["model"], r["method"]))
        for model, method in keys:
            cells = {r["ratio_percent"]: r for r in self.rows if r["model"] == model and r["method"] == method}
            for m in METRIC_NAMES:
                lines.append(",".join([model, method, m] + [f"{cells[q][m]:.4f}" if q in cells else ""
                                                            for q in ratios]))
        return "\n".join(lines) + "\n"


def noise_baseline_ssim(reference, seed: int = 0):
    """Best-match SSIM between two disjoint sets of uniform-noise images shaped like ``reference``."""
    rng = np.random.default_rng([seed, 7])
    shape = reference[0].shape
    a = [rng.uniform(size=shape) for _ in range(len(reference))]
    b = [rng.uniform(size=shape) for _ in range(len(reference))]
    return float(best_match_ssim(a, b).mean())


def run_sweep(train, test, cfg: SweepConfig, generator=None, num_classes: int = 6) -> SweepResult:
    """Train and score one classifier per (model, method, ratio) cell.

    Ratio 0 involves no augmentation, so its result is computed once per model
    and shared by every method.
    """
    if "generative" in cfg.methods and generator is None:
        raise ValueError("generative method requested without a diffusion checkpoint")
    rows, histories, quality = [], {}, {}
    for model_name in cfg.models:
        ccfg = ClassifierConfig(model_name, cfg.lr, cfg.batch_size, cfg.epochs, cfg.seed, num_classes)
        baseline = None  # (metrics, history, model) at ratio 0
        for method in cfg.methods:
            for ratio in cfg.ratios:
                if ratio == 0 and baseline is not None:
                    metrics, hist, _ = baseline
                else:
                    mixed, _ = mix_dataset(train, AugmentationPlan(method, ratio, cfg.seed), generator)
                    clf, hist = train_classifier(mixed, ccfg)
                    metrics, _ = evaluate(clf, test, num_classes)
                    if ratio == 0:
                        baseline = (metrics, hist, clf)
                log.info("%s %s %d%% acc %.4f", model_name, method, ratio, metrics.accuracy)
                rows.append({"model": model_name, "method": method, "ratio_percent": ratio,
                             "accuracy": metrics.accuracy, "macro_precision": metrics.macro_precision,
                             "macro_recall": metrics.macro_recall, "macro_f1": metrics.macro_f1})
                histories[f"{model_name}/{method}/{ratio}"] = hist
        if "generative" in cfg.methods and not quality:
            quality = generated_quality(train, test, generator, cfg, baseline[2] if baseline else None)
    return SweepResult(rows, quality, histories)


def generated_quality(train, test, generator, cfg: SweepConfig, feature_model=None) -> dict:
    """Quality of the largest generated pool used by the sweep against the real test split."""
    top = max(cfg.ratios)
    plan = AugmentationPlan("generative", top if top else RATIOS[-1], cfg.seed)
    mixed, methods = mix_dataset(train, plan, generator)
    pool = [s for s, m in zip(mixed, methods) if m == "generative"]
    feats_gen = feats_real = None
    if feature_model is not None:
        _, feats_gen = predict(feature_model, stack_pixels(pool))
        _, feats_real = predict(feature_model, stack_pixels(test))
    rep = quality_report(pool, test, feats_gen, feats_real)
    out = rep.as_dict()
    out["noise_baseline_ssim"] = noise_baseline_ssim(pool, cfg.seed)
    out["pool_size"] = len(pool)
    out["feature_extractor"] = f"{cfg.models[0]} trained on real data (ratio 0), 64-d pooled features"
    return out


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()

