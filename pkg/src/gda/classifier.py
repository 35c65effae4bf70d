"""Small CNN gesture classifiers and their train/evaluate loops.

resnet_lite: 3x3 stride-2 stem (16 ch), three residual stages of widths
16/32/64 (one block each, stride 2 entering stages 2 and 3), global average
pool, linear head. Shortcuts are parameter-free: stride subsampling plus zero
channel padding when the shape changes.

mobile_lite: same skeleton built from depthwise 3x3 + pointwise 1x1 pairs,
without shortcuts.
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .autodiff import Adam, Tensor, no_grad, read_checkpoint, stream, write_checkpoint
from .autodiff import nn
from .autodiff import tensor as T
from .dsp import stack_pixels
from .metrics import ClassificationMetrics, classification_report

log = logging.getLogger(__name__)

ARCHS = ("resnet_lite", "mobile_lite")
FEATURE_DIM = 64
FEAT_MAGIC = b"GDAF"
FEAT_HEADER = struct.Struct("<4sIII")  # magic, version, N, D


@dataclass(frozen=True)
class ClassifierConfig:
    arch: str = "resnet_lite"
    lr: float = 1e-4
    batch_size: int = 32
    epochs: int = 20
    seed: int = 42
    num_classes: int = 6

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"unknown arch {self.arch!r}; choose from {ARCHS}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")


def shortcut(x, c_out, stride):
    """Parameter-free skip: subsample by ``stride`` and zero-pad channels up to ``c_out``."""
    if stride > 1:
        x = T.getitem(x, (slice(None), slice(None), slice(None, None, stride), slice(None, None, stride)))
    c_in = x.shape[1]
    if c_out > c_in:
        n, _, h, w = x.shape
        x = T.concat([x, Tensor(np.zeros((n, c_out - c_in, h, w)))], axis=1)
    return x


class ResidualBlock(nn.Module):
    def __init__(self, c_in, c_out, stride=1):
        self.conv1 = nn.Conv2d(c_in, c_out, stride=stride)
        self.conv2 = nn.Conv2d(c_out, c_out)
        self.c_out = c_out
        self.stride = stride

    def __call__(self, x):
        h = self.conv2(T.relu(self.conv1(x)))
        return T.relu(T.add(shortcut(x, self.c_out, self.stride), h))


class SeparableBlock(nn.Module):
    def __init__(self, c_in, c_out, stride=1):
        self.depthwise = nn.Conv2d(c_in, c_in, stride=stride, groups=c_in)
        self.pointwise = nn.Conv2d(c_in, c_out, k=1)

    def __call__(self, x):
        return T.relu(self.pointwise(T.relu(self.depthwise(x))))


class LiteCNN(nn.Module):
    feature_dim = FEATURE_DIM

    def __init__(self, arch: str, num_classes: int):
        if arch not in ARCHS:
            raise ValueError(f"unknown arch {arch!r}; choose from {ARCHS}")
        self.arch = arch
        self.stem = nn.Conv2d(1, 16, stride=2)
        block = ResidualBlock if arch == "resnet_lite" else SeparableBlock
        self.stages = [block(16, 16), block(16, 32, stride=2), block(32, 64, stride=2)]
        self.head = nn.Linear(FEATURE_DIM, num_classes)

    def features(self, x):
        h = T.relu(self.stem(T.as_tensor(x)))
        for stage in self.stages:
            h = stage(h)
        return T.mean(h, axis=(2, 3))

    def __call__(self, x):
        return self.head(self.features(x))


def build_model(cfg: ClassifierConfig) -> LiteCNN:
    return LiteCNN(cfg.arch, cfg.num_classes).initialize(cfg.seed)


def _inputs(specs):
    if len(specs) == 0:
        raise ValueError("empty dataset")
    return stack_pixels(specs), np.array([s.condition.gesture for s in specs], dtype=np.int64)


def train_classifier(specs, cfg: ClassifierConfig, progress: bool = False):
    """Cross-entropy + Adam over seeded shuffles. Returns (model, history)."""
    x, y = _inputs(specs)
    if y.max() >= cfg.num_classes:
        raise ValueError(f"label {y.max()} outside [0, {cfg.num_classes})")
    model = build_model(cfg)
    opt = Adam(model.named_parameters(), lr=cfg.lr)
    rng = stream(cfg.seed, "classifier.shuffle")
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(y))
        total_loss, correct = 0.0, 0
        for start in range(0, len(y), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            opt.zero_grad()
            logits = model(Tensor(x[idx]))
            loss = T.cross_entropy_loss(logits, y[idx])
            loss.backward()
            opt.step()
            total_loss += loss.item() * len(idx)
            correct += int(np.sum(logits.data.argmax(axis=1) == y[idx]))
        history.append({"epoch": epoch + 1, "loss": total_loss / len(y), "accuracy": correct / len(y)})
        if progress:
            log.info("epoch %d loss %.4f acc %.4f", epoch + 1, history[-1]["loss"], history[-1]["accuracy"])
    return model, history


def predict(model, x, batch_size: int = 64):
    """(logits, features) for an [N, 1, F, K] batch, without building a graph."""
    logits, feats = [], []
    with no_grad():
        for start in range(0, x.shape[0], batch_size):
            f = model.features(Tensor(x[start : start + batch_size]))
            feats.append(f.data)
            logits.append(model.head(f).data)
    return np.concatenate(logits), np.concatenate(feats)


def evaluate(model, specs, num_classes: int | None = None):
    """Returns (ClassificationMetrics, features [N, 64]); argmax ties go to the lowest class id."""
    x, y = _inputs(specs)
    logits, feats = predict(model, x)
    pred = logits.argmax(axis=1)
    n_classes = num_classes or logits.shape[1]
    return classification_report(pred, y, n_classes), feats


# ---------------------------------------------------------------- persistence

def write_features(path, feats):
    feats = np.asarray(feats, dtype="<f8")
    if feats.ndim != 2:
        raise ValueError(f"features must be N x D, got shape {feats.shape}")
    with open(path, "wb") as fh:
        fh.write(FEAT_HEADER.pack(FEAT_MAGIC, 1, *feats.shape))
        fh.write(feats.tobytes())


def read_features(path):
    buf = Path(path).read_bytes()
    if len(buf) < FEAT_HEADER.size or buf[:4] != FEAT_MAGIC:
        raise ValueError(f"{path}: not a feature file")
    _, version, n, d = FEAT_HEADER.unpack_from(buf)
    if version != 1 or len(buf) != FEAT_HEADER.size + 8 * n * d:
        raise ValueError(f"{path}: bad version or size")
    return np.frombuffer(buf, dtype="<f8", offset=FEAT_HEADER.size).reshape(n, d).copy()


def save_classifier(path, model: LiteCNN, cfg: ClassifierConfig, history=None):
    path = Path(path)
    write_checkpoint(path, model.state_dict(), seed=cfg.seed, step=cfg.epochs)
    meta = {"config": asdict(cfg), "history": history or []}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")


def load_classifier(path):
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    cfg = ClassifierConfig(**meta["config"])
    model = LiteCNN(cfg.arch, cfg.num_classes)
    params, _ = read_checkpoint(path)
    model.load_state_dict(params)
    return model, cfg


def metrics_json(metrics: ClassificationMetrics, extra=None):
    d = metrics.as_dict()
    d.update(extra or {})
    return d
