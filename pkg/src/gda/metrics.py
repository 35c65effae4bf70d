"""Generative-quality and classification metrics.

SSIM uses 8x8 windows at stride 4 with K1=0.01, K2=0.03, L=1. W1 is the exact
1-D Wasserstein distance between empirical distributions. The Fréchet
distance (reported as "FD") fits Gaussians to feature matrices.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

SSIM_WINDOW = 8
SSIM_STRIDE = 4
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def _windows(img, win, stride):
    v = np.lib.stride_tricks.sliding_window_view(img, (win, win))[::stride, ::stride]
    return v.reshape(v.shape[0], v.shape[1], -1)


def ssim_map(a, b, window: int = SSIM_WINDOW, stride: int = SSIM_STRIDE):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"ssim needs two images of equal 2-D shape, got {a.shape} and {b.shape}")
    win = min(window, *a.shape)
    wa, wb = _windows(a, win, stride), _windows(b, win, stride)
    mu_a, mu_b = wa.mean(-1), wb.mean(-1)
    da, db = wa - mu_a[..., None], wb - mu_b[..., None]
    var_a, var_b = (da * da).mean(-1), (db * db).mean(-1)
    cov = (da * db).mean(-1)
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return num / den


def ssim(a, b) -> float:
    """Mean local SSIM of two [0, 1] images."""
    return float(ssim_map(a, b).mean())


def best_match_ssim(generated, references) -> np.ndarray:
    """For each generated image, the highest SSIM against any reference image."""
    if len(references) == 0:
        raise ValueError("no reference images")
    return np.array([max(ssim(g, r) for r in references) for g in generated])


def w1(a, b) -> float:
    """Exact 1-Wasserstein distance between two empirical distributions on the real line.

    Integrates |F_a - F_b| over the merged support, which equals the quantile
    integral and handles unequal sample sizes.
    """
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("w1 needs two non-empty sample sets")
    if a.size == b.size:
        return float(np.mean(np.abs(a - b)))
    grid = np.concatenate([a, b])
    grid.sort(kind="mergesort")
    widths = np.diff(grid)
    cdf_a = np.searchsorted(a, grid[:-1], side="right") / a.size
    cdf_b = np.searchsorted(b, grid[:-1], side="right") / b.size
    return float(np.sum(np.abs(cdf_a - cdf_b) * widths))


def _sqrt_psd(m):
    vals, vecs = np.linalg.eigh((m + m.T) / 2)
    vals = np.where(vals < 1e-10, 0.0, vals)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_from_moments(mu_a, cov_a, mu_b, cov_b) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)), via the symmetric form S_a^½ S_b S_a^½."""
    mu_a, mu_b = np.atleast_1d(mu_a), np.atleast_1d(mu_b)
    cov_a, cov_b = np.atleast_2d(cov_a), np.atleast_2d(cov_b)
    root_a = _sqrt_psd(cov_a)
    cross = _sqrt_psd(root_a @ cov_b @ root_a)
    d2 = np.sum((mu_a - mu_b) ** 2) + np.trace(cov_a) + np.trace(cov_b) - 2 * np.trace(cross)
    return float(max(d2, 0.0))


def _moments(feats, ridge):
    mu = feats.mean(axis=0)
    cov = np.cov(feats, rowvar=False, ddof=1) if feats.shape[0] > 1 else np.zeros((feats.shape[1],) * 2)
    cov = np.atleast_2d(cov)
    if feats.shape[0] <= feats.shape[1]:
        cov = cov + ridge * np.eye(feats.shape[1])
    return mu, cov


def frechet_distance(feats_a, feats_b, ridge: float = 1e-6) -> float:
    """Fréchet distance between Gaussians fitted to two N x D feature sets.

    When a set has no more rows than columns its covariance is singular and a
    ridge of ``ridge * I`` is added.
    """
    fa = np.asarray(feats_a, dtype=np.float64)
    fb = np.asarray(feats_b, dtype=np.float64)
    if fa.ndim != 2 or fb.ndim != 2 or fa.shape[1] != fb.shape[1]:
        raise ValueError(f"feature matrices must be N x D with matching D, got {fa.shape} and {fb.shape}")
    if fa.shape[1] == 0:
        raise ValueError("feature dimension D = 0")
    if not (np.all(np.isfinite(fa)) and np.all(np.isfinite(fb))):
        raise ValueError("features contain NaN/Inf")
    if fa.shape[0] == 0 or fb.shape[0] == 0:
        raise ValueError("empty feature set")
    return frechet_from_moments(*_moments(fa, ridge), *_moments(fb, ridge))


# ---------------------------------------------------------------- classification

@dataclass
class ClassificationMetrics:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    confusion: np.ndarray  # [G, G], rows = truth, columns = prediction

    def as_dict(self):
        d = asdict(self)
        d["confusion"] = self.confusion.tolist()
        return d

    def row(self, model: str, method: str, ratio_percent: int) -> str:
        vals = (self.accuracy, self.macro_precision, self.macro_recall, self.macro_f1)
        return ",".join([model, method, str(ratio_percent)] + [f"{v:.4f}" for v in vals])


def confusion_matrix(predictions, truth, n_classes: int):
    p = np.asarray(predictions, dtype=np.int64)
    t = np.asarray(truth, dtype=np.int64)
    if p.shape != t.shape or p.ndim != 1:
        raise ValueError(f"predictions {p.shape} and truth {t.shape} must be equal-length vectors")
    if p.size == 0:
        raise ValueError("no predictions")
    for name, arr in (("prediction", p), ("truth", t)):
        if arr.min() < 0 or arr.max() >= n_classes:
            raise ValueError(f"{name} label outside [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


def classification_report(predictions, truth, n_classes: int) -> ClassificationMetrics:
    """Accuracy and macro P/R/F1; classes with no support and no predictions score 0 but still count."""
    cm = confusion_matrix(predictions, truth, n_classes)
    tp = np.diag(cm).astype(np.float64)
    pred_pos = cm.sum(axis=0)
    true_pos = cm.sum(axis=1)
    prec = np.divide(tp, pred_pos, out=np.zeros(n_classes), where=pred_pos > 0)
    rec = np.divide(tp, true_pos, out=np.zeros(n_classes), where=true_pos > 0)
    denom = prec + rec
    f1 = np.divide(2 * prec * rec, denom, out=np.zeros(n_classes), where=denom > 0)
    acc = np.trace(cm) / cm.sum()
    return ClassificationMetrics(float(acc), float(prec.mean()), float(rec.mean()), float(f1.mean()), cm)


# ---------------------------------------------------------------- quality report

@dataclass
class QualityReport:
    ssim_mean: float
    w1: float
    frechet: float
    n_pairs: int
    per_condition: dict
    pairing: str = "best-match SSIM against real samples of the same condition"

    def __post_init__(self):
        if not -1.0 <= self.ssim_mean <= 1.0 or self.w1 < 0 or self.frechet < 0:
            raise ValueError(f"quality values out of range: {self}")

    def as_dict(self):
        fd = None if np.isnan(self.frechet) else self.frechet
        return {"ssim_mean": self.ssim_mean, "w1": self.w1, "fd": fd, "n_pairs": self.n_pairs,
                "pairing": self.pairing, "per_condition": self.per_condition}


def quality_report(generated, real, feats_generated=None, feats_real=None) -> QualityReport:
    """Compare two lists of spectrograms grouped by gesture label.

    Each generated image is scored by its best SSIM against real images with the
    same gesture. W1 is over pooled pixel intensities; the per-condition table
    also lists W1 within each gesture. FD needs feature matrices and is NaN
    when none are given.
    """
    if not generated or not real:
        raise ValueError("quality_report needs non-empty generated and real sets")
    by_gesture = {}
    for s in real:
        by_gesture.setdefault(s.condition.gesture, []).append(s.pixels)
    scores, per = [], {}
    for g in sorted({s.condition.gesture for s in generated}):
        gen = [s.pixels for s in generated if s.condition.gesture == g]
        if g not in by_gesture:
            raise ValueError(f"no real samples with gesture {g} to compare against")
        best = best_match_ssim(gen, by_gesture[g])
        scores.append(best)
        per[str(g)] = {"n": len(gen), "ssim": float(best.mean()),
                       "w1": w1(np.concatenate([p.ravel() for p in gen]),
                                np.concatenate([p.ravel() for p in by_gesture[g]]))}
    scores = np.concatenate(scores)
    pooled = w1(np.concatenate([s.pixels.ravel() for s in generated]),
                np.concatenate([s.pixels.ravel() for s in real]))
    fd = float("nan") if feats_generated is None else frechet_distance(feats_generated, feats_real)
    return QualityReport(float(scores.mean()), pooled, fd, int(scores.size), per)
