"""Conditional DDPM over spectrogram images.

Pixels live in [0, 1] on disk and are mapped to [-1, 1] for diffusion. The
denoiser predicts the injected noise; sampling blends conditional and
null-condition predictions (classifier-free guidance).
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Adam, Tensor, no_grad, read_checkpoint, write_checkpoint
from .autodiff import nn
from .autodiff import tensor as T
from .csi_data import ConditionLabel, Vocab
from .dsp import Spectrogram, centered_axis, stack_pixels

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- schedules

@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    kind: str
    beta: np.ndarray  # beta[t-1] for t = 1..T

    @property
    def steps(self):
        return self.beta.size

    @property
    def alpha(self):
        return 1.0 - self.beta

    @property
    def alpha_bar(self):
        return np.cumprod(1.0 - self.beta)

    def alpha_bar_at(self, t):
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.steps):
            raise ValueError(f"timestep out of range [1, {self.steps}]: {t}")
        return self.alpha_bar[t - 1]


def make_schedule(kind: str = "linear", steps: int = 1000, beta_start: float = 1e-4,
                  beta_end: float = 0.02) -> NoiseSchedule:
    """Linear or cosine noise schedule.

    Linear endpoints are given for a 1000-step chain and rescaled by 1000/steps
    (capped at 0.999), so short chains still end close to pure noise.
    """
    if steps < 1:
        raise ValueError("schedule needs at least one step")
    if kind == "linear":
        scale = 1000.0 / steps
        lo, hi = min(beta_start * scale, 0.999), min(beta_end * scale, 0.999)
        if steps == 1:
            beta = np.array([lo])
        else:
            beta = lo + (hi - lo) * np.arange(steps) / (steps - 1)
    elif kind == "cosine":
        s = 0.008
        u = np.arange(steps + 1) / steps
        f = np.cos((u + s) / (1 + s) * np.pi / 2) ** 2
        abar = f / f[0]
        beta = np.clip(1.0 - abar[1:] / abar[:-1], 1e-8, 0.999)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    return NoiseSchedule(kind, beta.astype(np.float64))


def forward_diffuse(x0, t, eps, schedule: NoiseSchedule):
    """Closed-form q(x_t | x_0) draw; ``t`` is a scalar or one step per batch item."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValueError(f"eps shape {eps.shape} != x0 shape {x0.shape}")
    abar = np.asarray(schedule.alpha_bar_at(t), dtype=np.float64)
    if abar.ndim:
        abar = abar.reshape((-1,) + (1,) * (x0.ndim - 1))
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps


def to_model_range(pixels):
    return 2.0 * np.asarray(pixels, dtype=np.float64) - 1.0


def to_pixel_range(x):
    return np.clip((np.asarray(x) + 1.0) / 2.0, 0.0, 1.0)


# ---------------------------------------------------------------- denoiser

def timestep_embedding(t, dim):
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    args = np.asarray(t, dtype=np.float64)[:, None] * freqs[None]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


class ResBlock(nn.Module):
    """Pre-norm residual block; the embedding sets a per-channel scale and shift after the first conv."""

    def __init__(self, c_in, c_out, emb_dim):
        self.norm1 = nn.ChannelNorm(c_in)
        self.conv1 = nn.Conv2d(c_in, c_out)
        self.emb = nn.Linear(emb_dim, 2 * c_out)
        self.norm2 = nn.ChannelNorm(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out)
        self.conv2.weight.init = "zeros"  # block starts as its skip path
        self.skip = nn.Conv2d(c_in, c_out, k=1) if c_in != c_out else None
        self.c_out = c_out

    def __call__(self, x, emb):
        h = self.conv1(T.silu(self.norm1(x)))
        e = self.emb(T.silu(emb))
        n, c = e.shape[0], self.c_out
        scale = T.reshape(T.getitem(e, (slice(None), slice(0, c))), (n, c, 1, 1))
        shift = T.reshape(T.getitem(e, (slice(None), slice(c, 2 * c))), (n, c, 1, 1))
        h = self.norm2(h)
        h = T.add(T.add(h, T.mul(h, scale)), shift)
        h = self.conv2(T.silu(h))
        return T.add(x if self.skip is None else self.skip(x), h)


@dataclass(frozen=True)
class DenoiserConfig:
    image_shape: tuple = (64, 64)
    base_channels: int = 8
    emb_dim: int = 32
    gestures: int = 6
    locations: int = 1
    orientations: int = 1
    parameterization: str = "v"

    def __post_init__(self):
        if self.parameterization not in ("eps", "v"):
            raise ValueError(f"parameterization must be 'eps' or 'v', got {self.parameterization!r}")

    @property
    def null_id(self):
        """Condition id reserved for "no condition"; outside every vocabulary."""
        return max(self.gestures, self.locations, self.orientations)


class Denoiser(nn.Module):
    """eps-prediction network: 3-level conv encoder/decoder with skips and attention at the bottom.

    Full resolution carries only the input stem and the last fused conv; the
    residual blocks sit at 1/2 and 1/4 resolution, attention at 1/4. The stem
    also sees two fixed coordinate maps in [-1, 1], because DFS structure (the
    0 Hz line, mirrored ridges) is tied to absolute position on the frequency axis.

    The output is always an eps estimate. With ``parameterization="v"`` the
    convolutional trunk produces F and eps = sqrt(1-abar) x_t - sqrt(abar) F,
    so the implied x0 = sqrt(abar) x_t + sqrt(1-abar) F stays bounded when abar
    is tiny instead of amplifying eps errors by 1/sqrt(abar).
    """

    def __init__(self, cfg: DenoiserConfig, alpha_bar=None):
        f, k = cfg.image_shape
        if f % 4 or k % 4:
            raise ValueError(f"image shape {cfg.image_shape} must be divisible by 4")
        c, d = cfg.base_channels, cfg.emb_dim
        self.cfg = cfg
        self.t_in = nn.Linear(d, d)
        self.t_out = nn.Linear(d, d)
        self.gesture_emb = nn.Embedding(cfg.gestures, d)
        self.location_emb = nn.Embedding(cfg.locations, d)
        self.orientation_emb = nn.Embedding(cfg.orientations, d)
        self.conv_in = nn.Conv2d(1 + 2, c)
        self.down1 = nn.Conv2d(c, 2 * c, stride=2)
        self.enc2 = ResBlock(2 * c, 2 * c, d)
        self.down2 = nn.Conv2d(2 * c, 4 * c, stride=2)
        self.enc3 = ResBlock(4 * c, 4 * c, d)
        self.attn = nn.SelfAttention(4 * c)
        self.mid = ResBlock(4 * c, 4 * c, d)
        self.dec2 = ResBlock(6 * c, 2 * c, d)
        self.dec1 = nn.Conv2d(3 * c, c)
        self.emb_out = nn.Linear(d, c)
        self.norm_out = nn.ChannelNorm(c)
        self.conv_out = nn.Conv2d(c, 1)
        self.conv_out.weight.init = "zeros"
        if cfg.parameterization == "v" and alpha_bar is None:
            raise ValueError("v parameterization needs the schedule's alpha_bar")
        self.alpha_bar = None if alpha_bar is None else np.asarray(alpha_bar, dtype=np.float64)
        self.trained_steps = 0

    def embed(self, t, cond):
        """Timestep embedding plus summed condition tables; null rows contribute zero."""
        g, l, o = (np.asarray(a, dtype=np.int64) for a in cond)
        keep = (g != self.cfg.null_id).astype(np.float64)[:, None]
        g, l, o = (np.where(a == self.cfg.null_id, 0, a) for a in (g, l, o))
        temb = Tensor(timestep_embedding(t, self.cfg.emb_dim))
        temb = self.t_out(T.silu(self.t_in(temb)))
        cemb = T.add(T.add(self.gesture_emb(g), self.location_emb(l)), self.orientation_emb(o))
        return T.add(temb, T.mul(cemb, Tensor(keep)))

    def __call__(self, x, t, cond):
        x = T.as_tensor(x)
        emb = self.embed(t, cond)
        h1 = self.conv_in(T.concat([x, Tensor(coordinate_maps(x.shape))], axis=1))
        h2 = self.enc2(self.down1(T.silu(h1)), emb)
        h3 = self.enc3(self.down2(h2), emb)
        n, c, hh, ww = h3.shape
        tokens = T.transpose(T.reshape(h3, (n, c, hh * ww)), (0, 2, 1))
        tokens = self.attn(tokens)
        h3 = T.reshape(T.transpose(tokens, (0, 2, 1)), (n, c, hh, ww))
        h3 = self.mid(h3, emb)
        u2 = self.dec2(T.concat([T.upsample2x(h3), h2], axis=1), emb)
        u1 = self.dec1(T.silu(T.concat([T.upsample2x(u2), h1], axis=1)))
        e = self.emb_out(T.silu(emb))
        u1 = T.add(u1, T.reshape(e, e.shape + (1, 1)))
        out = self.conv_out(T.silu(self.norm_out(u1)))
        if self.cfg.parameterization == "eps":
            return out
        ab = self.alpha_bar[np.asarray(t) - 1].reshape(-1, 1, 1, 1)
        return T.add(T.mul(x, Tensor(np.sqrt(1.0 - ab))), T.mul(out, Tensor(-np.sqrt(ab))))


def coordinate_maps(shape):
    """[N, 2, F, K] constant maps: row position, column position, both scaled to [-1, 1]."""
    n, _, f, k = shape
    rows = np.broadcast_to(np.linspace(-1.0, 1.0, f)[:, None], (f, k))
    cols = np.broadcast_to(np.linspace(-1.0, 1.0, k)[None, :], (f, k))
    return np.broadcast_to(np.stack([rows, cols])[None], (n, 2, f, k)).copy()


def condition_arrays(conds, null_id=None, keep=None):
    g = np.array([c.gesture for c in conds], dtype=np.int64)
    l = np.array([c.location for c in conds], dtype=np.int64)
    o = np.array([c.orientation for c in conds], dtype=np.int64)
    if keep is not None:
        g, l, o = (np.where(keep, a, null_id) for a in (g, l, o))
    return g, l, o


# ---------------------------------------------------------------- training

def diffusion_loss(model, x0, conds, schedule: NoiseSchedule, cond_drop_prob: float, rng, null_id=None):
    """eps-MSE on a freshly noised batch. ``model(x_t, t, cond) -> Tensor``."""
    n = x0.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    t = rng.integers(1, schedule.steps + 1, size=n)
    eps = rng.standard_normal(x0.shape)
    keep = rng.random(n) >= cond_drop_prob
    if null_id is None:
        null_id = getattr(getattr(model, "cfg", None), "null_id", -1)
    cond = condition_arrays(conds, null_id, keep)
    xt = forward_diffuse(x0, t, eps, schedule)
    return T.mse_loss(model(Tensor(xt), t, cond), Tensor(eps))


def train_step(model, opt: Adam, x0, conds, schedule: NoiseSchedule, cond_drop_prob: float, rng) -> float:
    opt.zero_grad()
    loss = diffusion_loss(model, x0, conds, schedule, cond_drop_prob, rng)
    value = loss.item()
    if not math.isfinite(value):
        raise FloatingPointError(f"non-finite diffusion loss at step {opt.state.step_count}")
    loss.backward()
    opt.step()
    model.trained_steps += 1
    return value


@dataclass(frozen=True)
class DiffusionConfig:
    schedule: str = "linear"
    steps: int = 50
    train_steps: int = 2000
    batch_size: int = 16
    lr: float = 1e-3
    cond_drop_prob: float = 0.1
    base_channels: int = 8
    emb_dim: int = 32
    parameterization: str = "v"
    seed: int = 42


def train_diffusion(specs, cfg: DiffusionConfig, vocab: Vocab, progress=None):
    """Fit a conditional denoiser to a list of spectrograms. Returns (model, schedule, losses)."""
    if not specs:
        raise ValueError("no spectrograms to train on")
    shape = specs[0].shape
    schedule = make_schedule(cfg.schedule, cfg.steps)
    mcfg = DenoiserConfig(tuple(shape), cfg.base_channels, cfg.emb_dim, vocab.gestures, vocab.locations,
                          vocab.orientations, cfg.parameterization)
    model = Denoiser(mcfg, schedule.alpha_bar).initialize(cfg.seed)
    opt = Adam(model.named_parameters(), lr=cfg.lr)
    x_all = to_model_range(stack_pixels(specs))
    conds = [s.condition for s in specs]
    rng = np.random.default_rng(cfg.seed)
    order = np.empty(0, dtype=np.int64)
    losses = []
    for step in range(cfg.train_steps):
        if order.size < cfg.batch_size:
            order = np.concatenate([order, rng.permutation(len(specs))])
        idx, order = order[: cfg.batch_size], order[cfg.batch_size :]
        losses.append(train_step(model, opt, x_all[idx], [conds[i] for i in idx], schedule,
                                 cfg.cond_drop_prob, rng))
        if progress and (step + 1) % progress == 0:
            log.info("diffusion step %d loss %.4f", step + 1, np.mean(losses[-progress:]))
    return model, schedule, losses


# ---------------------------------------------------------------- sampling

@dataclass(frozen=True)
class SamplerConfig:
    condition: ConditionLabel
    n_samples: int = 1
    guidance_weight: float = 2.0
    seed: int = 42
    batch_size: int = 32

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.guidance_weight < 0:
            raise ValueError("guidance_weight must be >= 0")


def guided_eps(eps_cond, eps_null, w):
    """eps_null + w (eps_cond - eps_null), written so w = 1 returns eps_cond exactly."""
    return eps_cond + (w - 1.0) * (eps_cond - eps_null)


def check_condition(model, cond: ConditionLabel):
    cfg = model.cfg
    for name, v, n in (("gesture", cond.gesture, cfg.gestures), ("location", cond.location, cfg.locations),
                       ("orientation", cond.orientation, cfg.orientations)):
        if not 0 <= v < n:
            raise ValueError(f"{name} id {v} outside model vocabulary of size {n}")


def sample_batch(model, schedule: NoiseSchedule, conds, seeds, guidance_weight: float = 2.0):
    """Ancestral sampling, one RNG stream per item (``seeds`` entries feed default_rng)."""
    if getattr(model, "trained_steps", 0) < 1:
        raise RuntimeError("denoiser has not been trained")
    for c in conds:
        check_condition(model, c)
    n = len(conds)
    f, k = model.cfg.image_shape
    rngs = [np.random.default_rng(s) for s in seeds]
    x = np.stack([r.standard_normal((1, f, k)) for r in rngs])
    cond = condition_arrays(conds)
    null = tuple(np.full(n, model.cfg.null_id) for _ in range(3))
    both = tuple(np.concatenate([a, b]) for a, b in zip(cond, null))
    beta, abar = schedule.beta, schedule.alpha_bar
    with no_grad():
        for t in range(schedule.steps, 0, -1):
            tt = np.full(n, t)
            if guidance_weight == 1.0:
                eps = model(Tensor(x), tt, cond).data
            else:
                out = model(Tensor(np.concatenate([x, x])), np.concatenate([tt, tt]), both).data
                eps = guided_eps(out[:n], out[n:], guidance_weight)
            ab_t = abar[t - 1]
            ab_prev = abar[t - 2] if t > 1 else 1.0
            x0 = np.clip((x - np.sqrt(1.0 - ab_t) * eps) / np.sqrt(ab_t), -1.0, 1.0)
            coef0 = beta[t - 1] * np.sqrt(ab_prev) / (1.0 - ab_t)
            coef_t = (1.0 - ab_prev) * np.sqrt(1.0 - beta[t - 1]) / (1.0 - ab_t)
            x = coef0 * x0 + coef_t * x
            if t > 1:
                sigma = np.sqrt(beta[t - 1] * (1.0 - ab_prev) / (1.0 - ab_t))
                x = x + sigma * np.stack([r.standard_normal((1, f, k)) for r in rngs])
    return to_pixel_range(x[:, 0])


def sample(model, schedule: NoiseSchedule, cfg: SamplerConfig, sample_rate_hz: float = 1000.0):
    """Draw ``cfg.n_samples`` synthetic spectrograms for ``cfg.condition``."""
    out = []
    for start in range(0, cfg.n_samples, cfg.batch_size):
        idx = range(start, min(cfg.n_samples, start + cfg.batch_size))
        px = sample_batch(model, schedule, [cfg.condition] * len(idx), [[cfg.seed, i] for i in idx],
                          cfg.guidance_weight)
        axis = centered_axis(px.shape[1], sample_rate_hz)
        out += [Spectrogram(p.astype(np.float32), cfg.condition, "synthetic", axis) for p in px]
    return out


# ---------------------------------------------------------------- checkpoints

@dataclass
class DiffusionCheckpoint:
    model: Denoiser
    schedule: NoiseSchedule
    meta: dict = field(default_factory=dict)


def save_diffusion(path, model: Denoiser, schedule: NoiseSchedule, train_cfg: DiffusionConfig):
    path = Path(path)
    write_checkpoint(path, model.state_dict(), seed=train_cfg.seed, step=model.trained_steps)
    sidecar = {
        "schedule": schedule.kind,
        "steps": schedule.steps,
        "model": asdict(model.cfg),
        "vocab": {"gestures": model.cfg.gestures, "locations": model.cfg.locations,
                  "orientations": model.cfg.orientations},
        "cond_drop_prob": train_cfg.cond_drop_prob,
        "train": asdict(train_cfg),
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=1, sort_keys=True) + "\n")


def load_diffusion(path) -> DiffusionCheckpoint:
    path = Path(path)
    sidecar = json.loads(path.with_suffix(".json").read_text())
    mcfg = dict(sidecar["model"])
    mcfg["image_shape"] = tuple(mcfg["image_shape"])
    schedule = make_schedule(sidecar["schedule"], sidecar["steps"])
    model = Denoiser(DenoiserConfig(**mcfg), schedule.alpha_bar)
    params, meta = read_checkpoint(path)
    model.load_state_dict(params)
    model.trained_steps = meta["step"]
    return DiffusionCheckpoint(model, schedule, {**sidecar, **meta})
