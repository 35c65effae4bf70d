"""``gda`` command-line entry point.

Every command reads an optional JSON config (``--config``), applies flag
overrides, writes its artifacts under ``--out`` and prints one JSON summary
line on stdout. Exit status: 0 ok, 1 runtime/module error, 2 config error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import MISSING, asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .augment import AugmentationPlan, DiffusionGenerator, mix_dataset
from .classifier import (
    ClassifierConfig, evaluate, load_classifier, predict, save_classifier, train_classifier, write_features,
)
from .csi_data import (
    ConditionLabel, DatasetManifest, ManifestEntry, Vocab, corpus_specs, import_csv, read_csid, split_dataset,
    synth_csi, write_csid,
)
from .diffusion import DiffusionConfig, SamplerConfig, load_diffusion, sample, save_diffusion, train_diffusion
from .dsp import StftParams, dfs_spectrogram, read_dfss, stack_pixels, write_dfss
from .experiment import SweepConfig, run_sweep, sha256_file
from .metrics import quality_report

log = logging.getLogger("gda")


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------- per-command configs

@dataclass
class SynthCmd:
    out: str = "runs/csi"
    seed: int = 42
    per_gesture: int = 60
    gestures: int = 6
    locations: int = 1
    orientations: int = 1
    users: int = 1
    rooms: int = 1
    sample_rate_hz: float = 1000.0
    n_frames: int = 1024
    subcarriers: int = 30
    antennas: int = 3
    f0_hz: float = 120.0
    a_dyn: float = 0.3
    noise_sigma: float = 0.05


@dataclass
class ImportCmd:
    input: str = ""
    out: str = "runs/csi"
    seed: int = 42
    gesture: int = 0
    location: int = 0
    orientation: int = 0
    user: int = 0
    room: int = 0
    sample_rate_hz: float = 1000.0
    gestures: int = 6
    locations: int = 1
    orientations: int = 1
    users: int = 1
    rooms: int = 1


@dataclass
class DfsCmd:
    input: str = "runs/csi"
    out: str = "runs/dfs"
    seed: int = 42
    window_len: int = 128
    hop: int = 32
    window_fn: str = "hann"
    height: int = 64
    width: int = 64
    ref_antenna: int = 0
    train_fraction: float = 0.8


@dataclass
class TrainDiffCmd:
    input: str = "runs/dfs"
    split: str = "train"
    out: str = "runs/diffusion"
    seed: int = 42
    schedule: str = "linear"
    steps: int = 50
    train_steps: int = 2000
    batch_size: int = 16
    lr: float = 1e-3
    cond_drop_prob: float = 0.1
    base_channels: int = 8
    emb_dim: int = 32
    parameterization: str = "v"


@dataclass
class SampleCmd:
    checkpoint: str = "runs/diffusion/diffusion.gdam"
    out: str = "runs/samples"
    seed: int = 42
    n: int = 1
    gesture: int = 0
    location: int = 0
    orientation: int = 0
    guidance_weight: float = 2.0
    batch_size: int = 32


@dataclass
class AugmentCmd:
    input: str = "runs/dfs"
    split: str = "train"
    out: str = "runs/augmented"
    seed: int = 42
    method: str = "crop"
    ratio: int = 100
    checkpoint: str = ""
    guidance_weight: float = 2.0


@dataclass
class TrainClfCmd:
    input: str = "runs/dfs"
    split: str = "train"
    out: str = "runs/classifier"
    seed: int = 42
    model: str = "resnet_lite"
    lr: float = 1e-4
    batch_size: int = 32
    epochs: int = 20


@dataclass
class EvalClfCmd:
    checkpoint: str = "runs/classifier/classifier.gdam"
    input: str = "runs/dfs"
    split: str = "test"
    out: str = "runs/eval"
    seed: int = 42


@dataclass
class QualityCmd:
    generated: str = "runs/samples"
    real: str = "runs/dfs"
    split: str = "test"
    classifier: str = ""
    out: str = "runs/quality"
    seed: int = 42


@dataclass
class SweepCmd:
    input: str = "runs/dfs"
    checkpoint: str = "runs/diffusion/diffusion.gdam"
    out: str = "runs/sweep"
    seed: int = 42
    models: list = field(default_factory=lambda: ["resnet_lite"])
    methods: list = field(default_factory=lambda: ["generative", "crop"])
    ratios: list = field(default_factory=lambda: [0, 20, 40, 60, 80, 100])
    lr: float = 1e-4
    batch_size: int = 32
    epochs: int = 20
    guidance_weight: float = 2.0
    sample_batch_size: int = 32


# ---------------------------------------------------------------- helpers

def _csv_list(text, kind=str):
    try:
        return [kind(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad list value {text!r}: {exc}") from None


def build_config(cls, config_path, overrides):
    cfg = cls()
    names = {f.name: f for f in fields(cls)}
    if config_path:
        try:
            doc = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = sorted(set(doc) - set(names))
        if unknown:
            raise ConfigError(f"unknown config keys for this command: {unknown}")
        for k, v in doc.items():
            setattr(cfg, k, v)
    for k, v in overrides.items():
        if v is None:
            continue
        if k not in names:
            raise ConfigError(f"option --{k.replace('_', '-')} does not apply to this command")
        setattr(cfg, k, v)
    for f in fields(cls):
        val = getattr(cfg, f.name)
        want = type(f.default if f.default is not MISSING else f.default_factory())
        if want is float and isinstance(val, int) and not isinstance(val, bool):
            setattr(cfg, f.name, float(val))
        elif not isinstance(val, want) or (want is int and isinstance(val, bool)):
            raise ConfigError(f"config key {f.name!r} expects {want.__name__}, got {val!r}")
    return cfg


def _vocab_from(cfg):
    return Vocab(cfg.gestures, cfg.locations, cfg.orientations, cfg.users, cfg.rooms)


def load_manifest(path, split=""):
    """A manifest file, or ``<dir>/<split>.json`` / ``<dir>/manifest.json`` for a directory."""
    p = Path(path)
    if p.is_dir():
        p = p / (f"{split}.json" if split else "manifest.json")
    if not p.exists():
        raise FileNotFoundError(f"manifest not found: {p}")
    return DatasetManifest.load(p), p


def load_spectrograms(manifest: DatasetManifest):
    if manifest.kind != "dfss":
        raise ValueError(f"expected a DFSS manifest, got kind {manifest.kind!r}")
    return [read_dfss(manifest.resolve(e), manifest.sample_rate_hz) for e in manifest.entries]


def write_spec_set(out_dir, specs, methods, vocab, sample_rate_hz, provenance, prefix="s"):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (s, m) in enumerate(zip(specs, methods)):
        name = f"{prefix}{i:05d}_g{s.condition.gesture}.dfss"
        write_dfss(s, out_dir / name)
        entries.append(ManifestEntry(name, s.condition, s.origin, m))
    manifest = DatasetManifest(entries, vocab, sample_rate_hz, "dfss", out_dir, provenance)
    manifest.save(out_dir / "manifest.json")
    return manifest


def _hashes(manifest, extra=()):
    out = {str(manifest.resolve(e)): sha256_file(manifest.resolve(e)) for e in manifest.entries}
    for p in extra:
        if p and Path(p).exists():
            out[str(p)] = sha256_file(p)
    return out


def _header(command, cfg):
    # no wall-clock timestamp: identical configs must give byte-identical run logs
    return {"tool": "gda", "version": __version__, "command": command, "config": asdict(cfg)}


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


# ---------------------------------------------------------------- commands

def cmd_synth(cfg: SynthCmd):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    vocab = _vocab_from(cfg)
    sims = corpus_specs(cfg.per_gesture, vocab, cfg.sample_rate_hz, cfg.n_frames, cfg.seed,
                        f0_hz=cfg.f0_hz, a_dyn=cfg.a_dyn, noise_sigma=cfg.noise_sigma)
    entries = []
    dims = (cfg.n_frames, cfg.subcarriers, cfg.antennas)
    for i, sim in enumerate(sims):
        rec = synth_csi(sim, cfg.sample_rate_hz, dims, seed=(cfg.seed << 20) + i)
        name = f"rec{i:05d}_g{sim.condition.gesture}.csid"
        write_csid(rec, out / name)
        entries.append(ManifestEntry(name, sim.condition))
    manifest = DatasetManifest(entries, vocab, cfg.sample_rate_hz, "csid", out,
                               {"command": "synth-dataset", "config": asdict(cfg)})
    manifest.save(out / "manifest.json")
    return {"recordings": len(entries), "manifest": str(out / "manifest.json")}


def cmd_import(cfg: ImportCmd):
    if not cfg.input:
        raise ConfigError("import needs --input <file.csv>")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cond = ConditionLabel(cfg.gesture, cfg.location, cfg.orientation, cfg.user, cfg.room)
    mpath = out / "manifest.json"
    if mpath.exists():
        manifest = DatasetManifest.load(mpath)
    else:
        manifest = DatasetManifest([], _vocab_from(cfg), cfg.sample_rate_hz, "csid", out, {"command": "import"})
    manifest.vocab.check(cond)
    rec = import_csv(cfg.input, cond, cfg.sample_rate_hz)
    name = f"{Path(cfg.input).stem}.csid"
    write_csid(rec, out / name)
    entries = [e for e in manifest.entries if e.path != name] + [ManifestEntry(name, cond)]
    manifest = DatasetManifest(entries, manifest.vocab, manifest.sample_rate_hz, "csid", out,
                               manifest.provenance)
    manifest.save(mpath)
    return {"recording": str(out / name), "dims": list(rec.dims), "manifest": str(mpath)}


def cmd_dfs(cfg: DfsCmd):
    src, _ = load_manifest(cfg.input)
    if src.kind != "csid":
        raise ValueError(f"dfs expects a CSID manifest, got kind {src.kind!r}")
    params = StftParams(cfg.window_len, cfg.hop, cfg.window_fn)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    entries, degenerate = [], 0
    for e in src.entries:
        spec = dfs_spectrogram(read_csid(src.resolve(e)), params, (cfg.height, cfg.width), cfg.ref_antenna)
        degenerate += spec.degenerate
        name = Path(e.path).with_suffix(".dfss").name
        write_dfss(spec, out / name)
        entries.append(ManifestEntry(name, e.condition, spec.origin, "none"))
    prov = {"command": "dfs", "config": asdict(cfg), "source": str(Path(cfg.input).resolve())}
    manifest = DatasetManifest(entries, src.vocab, src.sample_rate_hz, "dfss", out, prov)
    manifest.save(out / "manifest.json")
    train, test = split_dataset(manifest, cfg.train_fraction, cfg.seed)
    split_info = {"train_fraction": cfg.train_fraction, "seed": cfg.seed, "stratified": True}
    for part, name in ((train, "train"), (test, "test")):
        part.provenance = {**prov, "split": {**split_info, "part": name}}
        part.save(out / f"{name}.json")
    return {"spectrograms": len(entries), "degenerate": degenerate, "train": len(train), "test": len(test),
            "manifest": str(out / "manifest.json")}


def cmd_train_diff(cfg: TrainDiffCmd):
    manifest, mpath = load_manifest(cfg.input, cfg.split)
    specs = load_spectrograms(manifest)
    dcfg = DiffusionConfig(cfg.schedule, cfg.steps, cfg.train_steps, cfg.batch_size, cfg.lr, cfg.cond_drop_prob,
                           cfg.base_channels, cfg.emb_dim, cfg.parameterization, cfg.seed)
    model, schedule, losses = train_diffusion(specs, dcfg, manifest.vocab, progress=100)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    save_diffusion(out / "diffusion.gdam", model, schedule, dcfg)
    (out / "losses.csv").write_text("step,loss\n" + "".join(f"{i + 1},{v!r}\n" for i, v in enumerate(losses)))
    _write_json(out / "train_diff.json", {**_header("train-diff", cfg), "inputs": _hashes(manifest, [mpath]),
                                          "final_loss": float(np.mean(losses[-50:]))})
    return {"checkpoint": str(out / "diffusion.gdam"), "steps": len(losses),
            "final_loss": round(float(np.mean(losses[-50:])), 6)}


def cmd_sample(cfg: SampleCmd):
    ck = load_diffusion(cfg.checkpoint)
    cond = ConditionLabel(cfg.gesture, cfg.location, cfg.orientation)
    specs = sample(ck.model, ck.schedule, SamplerConfig(cond, cfg.n, cfg.guidance_weight, cfg.seed, cfg.batch_size))
    vocab = Vocab(ck.model.cfg.gestures, ck.model.cfg.locations, ck.model.cfg.orientations)
    prov = {"command": "sample", "config": asdict(cfg), "checkpoint_sha256": sha256_file(cfg.checkpoint)}
    write_spec_set(cfg.out, specs, ["generative"] * len(specs), vocab, 1000.0, prov, prefix="gen")
    return {"samples": len(specs), "gesture": cfg.gesture, "manifest": str(Path(cfg.out) / "manifest.json")}


def _generator(checkpoint, guidance_weight, seed, batch_size=32):
    if not checkpoint or not Path(checkpoint).exists():
        raise FileNotFoundError(f"generative augmentation needs a diffusion checkpoint, got {checkpoint!r}")
    ck = load_diffusion(checkpoint)
    return DiffusionGenerator(ck.model, ck.schedule, guidance_weight, seed, batch_size)


def cmd_augment(cfg: AugmentCmd):
    manifest, _ = load_manifest(cfg.input, cfg.split)
    real = load_spectrograms(manifest)
    plan = AugmentationPlan(cfg.method, cfg.ratio, cfg.seed)
    gen = _generator(cfg.checkpoint, cfg.guidance_weight, cfg.seed) if cfg.method == "generative" else None
    mixed, methods = mix_dataset(real, plan, gen)
    prov = {"command": "augment", "config": asdict(cfg), "plan": asdict(plan)}
    write_spec_set(cfg.out, mixed, methods, manifest.vocab, manifest.sample_rate_hz, prov)
    return {"real": len(real), "augmented": len(mixed) - len(real), "manifest": str(Path(cfg.out) / "manifest.json")}


def cmd_train_clf(cfg: TrainClfCmd):
    manifest, mpath = load_manifest(cfg.input, cfg.split)
    specs = load_spectrograms(manifest)
    ccfg = ClassifierConfig(cfg.model, cfg.lr, cfg.batch_size, cfg.epochs, cfg.seed, manifest.vocab.gestures)
    model, history = train_classifier(specs, ccfg, progress=True)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    save_classifier(out / "classifier.gdam", model, ccfg, history)
    _write_json(out / "train_clf.json", {**_header("train-clf", cfg), "inputs": _hashes(manifest, [mpath]),
                                         "history": history})
    return {"checkpoint": str(out / "classifier.gdam"), "train_accuracy": history[-1]["accuracy"]}


def cmd_eval_clf(cfg: EvalClfCmd):
    model, ccfg = load_classifier(cfg.checkpoint)
    manifest, mpath = load_manifest(cfg.input, cfg.split)
    metrics, feats = evaluate(model, load_spectrograms(manifest), ccfg.num_classes)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_features(out / "features.bin", feats)
    _write_json(out / "metrics.json", {**_header("eval-clf", cfg), "inputs": _hashes(manifest, [mpath]),
                                       "metrics": metrics.as_dict()})
    return {"accuracy": round(metrics.accuracy, 4), "macro_f1": round(metrics.macro_f1, 4),
            "metrics": str(out / "metrics.json")}


def cmd_quality(cfg: QualityCmd):
    gen_m, _ = load_manifest(cfg.generated)
    real_m, _ = load_manifest(cfg.real, cfg.split)
    gen, real = load_spectrograms(gen_m), load_spectrograms(real_m)
    fg = fr = None
    if cfg.classifier:
        model, _ = load_classifier(cfg.classifier)
        _, fg = predict(model, stack_pixels(gen))
        _, fr = predict(model, stack_pixels(real))
    rep = quality_report(gen, real, fg, fr)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "quality.json", {**_header("quality", cfg), **rep.as_dict()})
    rows = ["gesture,n,ssim,w1"] + [f"{g},{v['n']},{v['ssim']:.4f},{v['w1']:.4f}"
                                    for g, v in rep.per_condition.items()]
    (out / "quality.csv").write_text("\n".join(rows) + "\n")
    return {"ssim": round(rep.ssim_mean, 4), "w1": round(rep.w1, 4),
            "fd": None if rep.as_dict()["fd"] is None else round(rep.frechet, 4)}


def cmd_sweep(cfg: SweepCmd):
    scfg = SweepConfig(tuple(cfg.models), tuple(cfg.methods), tuple(int(r) for r in cfg.ratios), cfg.seed,
                       cfg.lr, cfg.batch_size, cfg.epochs)
    train_m, train_p = load_manifest(cfg.input, "train")
    test_m, test_p = load_manifest(cfg.input, "test")
    gen = None
    if "generative" in scfg.methods:
        gen = _generator(cfg.checkpoint, cfg.guidance_weight, cfg.seed, cfg.sample_batch_size)
    result = run_sweep(load_spectrograms(train_m), load_spectrograms(test_m), scfg, gen, train_m.vocab.gestures)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.csv").write_text(result.csv_body())
    (out / "table.csv").write_text(result.pivot_csv())
    inputs = {**_hashes(train_m, [train_p]), **_hashes(test_m, [test_p])}
    if gen is not None:
        inputs[str(cfg.checkpoint)] = sha256_file(cfg.checkpoint)
    header = {**_header("sweep", cfg), "effective": asdict(scfg), "inputs": inputs,
              "split": test_m.provenance.get("split", {}), "classifier_defaults": asdict(ClassifierConfig()),
              "augment_defaults": asdict(AugmentationPlan())}
    _write_json(out / "sweep.json", {**header, "rows": result.rows, "histories": result.histories,
                                     "quality": result.quality})
    if result.quality:
        _write_json(out / "quality.json", {**_header("sweep", cfg), **result.quality})
    return {"rows": len(result.rows), "csv": str(out / "sweep.csv"),
            "ssim": round(result.quality["ssim_mean"], 4) if result.quality else None}


COMMANDS = {
    "synth-dataset": (SynthCmd, cmd_synth, "write a synthetic CSI corpus (CSID files + manifest)"),
    "import": (ImportCmd, cmd_import, "convert one CSV recording to CSID and add it to a manifest"),
    "dfs": (DfsCmd, cmd_dfs, "extract DFS spectrograms and write the train/test split"),
    "train-diff": (TrainDiffCmd, cmd_train_diff, "train the conditional diffusion model"),
    "sample": (SampleCmd, cmd_sample, "draw synthetic spectrograms for one condition"),
    "augment": (AugmentCmd, cmd_augment, "write a real + augmented training set"),
    "train-clf": (TrainClfCmd, cmd_train_clf, "train a gesture classifier"),
    "eval-clf": (EvalClfCmd, cmd_eval_clf, "evaluate a classifier and export features"),
    "quality": (QualityCmd, cmd_quality, "SSIM / W1 / FD between generated and real sets"),
    "sweep": (SweepCmd, cmd_sweep, "augmentation-ratio sweep over methods"),
}

# flag -> (config field, type)
FLAGS = {
    "--seed": ("seed", int), "--out": ("out", str), "--model": ("model", str),
    "--input": ("input", str), "--checkpoint": ("checkpoint", str), "--split": ("split", str),
    "--n": ("n", int), "--gesture": ("gesture", int), "--location": ("location", int),
    "--orientation": ("orientation", int), "--guidance-weight": ("guidance_weight", float),
    "--method": ("method", str), "--ratio": ("ratio", int), "--epochs": ("epochs", int),
    "--train-steps": ("train_steps", int), "--steps": ("steps", int), "--per-gesture": ("per_gesture", int),
    "--generated": ("generated", str), "--real": ("real", str), "--classifier": ("classifier", str),
}


def make_parser():
    parser = argparse.ArgumentParser(prog="gda", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"gda {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, _, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file")
        for flag, (dest, kind) in FLAGS.items():
            p.add_argument(flag, dest=dest, type=kind, default=None)
        p.add_argument("--ratios", type=lambda s: _csv_list(s, int), default=None)
        p.add_argument("--methods", type=_csv_list, default=None)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    cls, fn, _ = COMMANDS[args.command]
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    if args.command == "sweep" and overrides.get("model") is not None:
        overrides["models"] = [overrides.pop("model")]
    overrides = {k: v for k, v in overrides.items() if v is not None}
    try:
        cfg = build_config(cls, args.config, overrides)
        summary = fn(cfg)
    except ConfigError as exc:
        print(json.dumps({"command": args.command, "status": "config_error", "message": str(exc)}),
              file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, OSError, KeyError, FloatingPointError) as exc:
        print(json.dumps({"command": args.command, "status": "error", "error": type(exc).__name__,
                          "message": str(exc)}), file=sys.stderr)
        return 1
    print(json.dumps({"command": args.command, "status": "ok", **summary}, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
