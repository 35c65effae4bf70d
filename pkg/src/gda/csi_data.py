"""CSI recordings, their on-disk formats, dataset manifests and a synthetic generator.

CSID binary layout (little-endian, 64-byte header)::

    b"CSID" | version u32 | T u32 | S u32 | A u32 | sample_rate f64
    | gesture u16 | location u16 | orientation u16 | user u16 | room u16
    | origin u8 | zero padding to 64 bytes
    payload: T*S*A complex entries (re f64, im f64), t-major, then s, then a
"""
from __future__ import annotations

import csv
import json
import os
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

GESTURES = ("push_pull", "sweep", "clap", "slide", "circle", "zigzag")
ORIGINS = ("real", "synthetic")

CSID_MAGIC = b"CSID"
CSID_VERSION = 1
CSID_HEADER = struct.Struct("<4sIIIIdHHHHHB")
CSID_HEADER_SIZE = 64
MAX_ENTRIES = 1 << 32


class FormatError(ValueError):
    """Malformed, truncated or incompatible data file."""


@dataclass(frozen=True)
class ConditionLabel:
    gesture: int
    location: int = 0
    orientation: int = 0
    user: int = 0
    room: int = 0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not 0 <= int(v) < 1 << 16:
                raise ValueError(f"condition.{k}={v} outside [0, 65536)")

    def as_tuple(self):
        return (self.gesture, self.location, self.orientation, self.user, self.room)


@dataclass(frozen=True)
class Vocab:
    gestures: int = len(GESTURES)
    locations: int = 1
    orientations: int = 1
    users: int = 1
    rooms: int = 1

    def check(self, cond: ConditionLabel):
        pairs = [("gesture", cond.gesture, self.gestures), ("location", cond.location, self.locations),
                 ("orientation", cond.orientation, self.orientations), ("user", cond.user, self.users),
                 ("room", cond.room, self.rooms)]
        for name, v, n in pairs:
            if not 0 <= v < n:
                raise ValueError(f"{name} id {v} outside vocabulary of size {n}")


@dataclass(frozen=True, eq=False)
class CsiRecording:
    samples: np.ndarray  # complex128 [T, S, A]
    sample_rate_hz: float
    condition: ConditionLabel
    origin: str = "real"

    def __post_init__(self):
        s = np.array(self.samples, dtype=np.complex128)
        if s.ndim != 3 or s.shape[0] < 2 or s.shape[1] < 1 or s.shape[2] < 1:
            raise ValueError(f"samples must be [T>=2, S>=1, A>=1], got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ValueError("samples contain NaN/Inf")
        if not (np.isfinite(self.sample_rate_hz) and self.sample_rate_hz > 0):
            raise ValueError(f"sample_rate_hz must be > 0, got {self.sample_rate_hz}")
        if self.origin not in ORIGINS:
            raise ValueError(f"origin must be one of {ORIGINS}")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def dims(self):
        return self.samples.shape

    def __eq__(self, other):
        if not isinstance(other, CsiRecording):
            return NotImplemented
        return (self.samples.shape == other.samples.shape
                and self.samples.tobytes() == other.samples.tobytes()
                and struct.pack("<d", self.sample_rate_hz) == struct.pack("<d", other.sample_rate_hz)
                and self.condition == other.condition and self.origin == other.origin)


# ---------------------------------------------------------------- synthetic gestures

@dataclass(frozen=True)
class GestureSim:
    template: str
    duration_s: float
    f0_hz: float
    a_static: float = 1.0
    a_dyn: float = 0.3
    noise_sigma: float = 0.02
    condition: ConditionLabel = field(default_factory=lambda: ConditionLabel(0))
    onset_s: float = 0.0

    def __post_init__(self):
        if self.template not in GESTURES:
            raise ValueError(f"unknown gesture template {self.template!r}")
        vals = (self.duration_s, self.f0_hz, self.a_static, self.a_dyn, self.noise_sigma, self.onset_s)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("gesture parameters must be finite")
        if self.duration_s <= 0 or self.f0_hz < 0 or self.onset_s < 0:
            raise ValueError("duration_s must be > 0, f0_hz and onset_s >= 0")
        if min(self.a_static, self.a_dyn, self.noise_sigma) < 0:
            raise ValueError("amplitudes and noise_sigma must be >= 0")


def _triangle(u):
    # period 1, range [-1, 1], starts at -1
    return 4.0 * np.abs(u - np.floor(u + 0.5)) - 1.0


def doppler_trajectory(template: str, t, duration_s: float, f0_hz: float, onset_s: float = 0.0):
    """Doppler frequency f_d(t) in Hz; zero outside [onset, onset + duration)."""
    t = np.asarray(t, dtype=np.float64)
    u = (t - onset_s) / duration_s
    active = (u >= 0) & (u < 1)
    if template == "push_pull":
        f = np.where(u < 0.5, f0_hz, -f0_hz)
    elif template == "sweep":
        f = f0_hz * (2.0 * u - 1.0)
    elif template == "clap":
        f = np.where((u >= 0.2) & (u < 0.35), f0_hz, 0.0) + np.where((u >= 0.6) & (u < 0.75), -f0_hz, 0.0)
    elif template == "slide":
        f = np.full_like(u, f0_hz)
    elif template == "circle":
        f = f0_hz * np.sin(2.0 * np.pi * u)
    elif template == "zigzag":
        f = f0_hz * _triangle(2.0 * u)
    else:
        raise ValueError(f"unknown gesture template {template!r}")
    return np.where(active, f, 0.0)


def synth_csi(sim: GestureSim, sample_rate_hz: float, dims=(1024, 30, 3), seed: int = 0) -> CsiRecording:
    """Two-path (static + moving reflector) CSI with circular Gaussian noise."""
    n_t, n_s, n_a = (int(d) for d in dims)
    if n_t < 2 or n_s < 1 or n_a < 1:
        raise ValueError(f"invalid dims {dims}")
    if not (np.isfinite(sample_rate_hz) and sample_rate_hz > 0):
        raise ValueError("sample_rate_hz must be finite and > 0")
    if sim.f0_hz >= sample_rate_hz / 2:
        raise ValueError(f"f0_hz={sim.f0_hz} violates Nyquist for fs={sample_rate_hz}")
    rng = np.random.default_rng(seed)
    static_phase = rng.uniform(0.0, 2 * np.pi, size=(n_s, n_a))
    dyn_phase = rng.uniform(0.0, 2 * np.pi, size=(n_s, n_a))
    noise = rng.standard_normal((n_t, n_s, n_a, 2))
    t = np.arange(n_t) / sample_rate_hz
    fd = doppler_trajectory(sim.template, t, sim.duration_s, sim.f0_hz, sim.onset_s)
    # cumulative trapezoid of f_d, Phi(0) = 0
    cycles = np.concatenate([[0.0], np.cumsum(0.5 * (fd[1:] + fd[:-1]) / sample_rate_hz)])
    samples = (sim.a_static * np.exp(1j * static_phase)[None]
               + sim.a_dyn * np.exp(1j * (2 * np.pi * cycles[:, None, None] + dyn_phase[None])))
    samples = samples + sim.noise_sigma * (noise[..., 0] + 1j * noise[..., 1]) / np.sqrt(2.0)
    return CsiRecording(samples, float(sample_rate_hz), sim.condition, "real")


# ---------------------------------------------------------------- CSID files

def write_csid(rec: CsiRecording, path):
    n_t, n_s, n_a = rec.dims
    c = rec.condition
    header = CSID_HEADER.pack(CSID_MAGIC, CSID_VERSION, n_t, n_s, n_a, rec.sample_rate_hz,
                              c.gesture, c.location, c.orientation, c.user, c.room,
                              ORIGINS.index(rec.origin))
    header = header.ljust(CSID_HEADER_SIZE, b"\0")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.asarray(rec.samples, dtype="<c16").tobytes())


def read_csid(path) -> CsiRecording:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 4 or buf[:4] != CSID_MAGIC:
        raise FormatError(f"{path}: bad magic {buf[:4]!r}")
    if len(buf) < CSID_HEADER_SIZE:
        raise FormatError(f"{path}: truncated header ({len(buf)} bytes)")
    (_, version, n_t, n_s, n_a, fs, g, loc, ori, user, room, origin) = CSID_HEADER.unpack_from(buf)
    if version != CSID_VERSION:
        raise FormatError(f"{path}: version {version} != {CSID_VERSION}")
    n = n_t * n_s * n_a
    if n == 0 or n >= MAX_ENTRIES:
        raise FormatError(f"{path}: dimension overflow T={n_t} S={n_s} A={n_a}")
    expected = CSID_HEADER_SIZE + 16 * n
    if len(buf) < expected:
        raise FormatError(f"{path}: truncated payload ({len(buf)} of {expected} bytes)")
    if len(buf) > expected:
        raise FormatError(f"{path}: {len(buf) - expected} trailing bytes")
    if origin >= len(ORIGINS):
        raise FormatError(f"{path}: unknown origin code {origin}")
    samples = np.frombuffer(buf, dtype="<c16", count=n, offset=CSID_HEADER_SIZE).reshape(n_t, n_s, n_a)
    return CsiRecording(samples.astype(np.complex128), fs, ConditionLabel(g, loc, ori, user, room),
                        ORIGINS[origin])


# ---------------------------------------------------------------- CSV intermediate

CSV_HEADER = ["t", "s", "a", "re", "im"]


def export_csv(rec: CsiRecording, path):
    n_t, n_s, n_a = rec.dims
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for t in range(n_t):
            for s in range(n_s):
                for a in range(n_a):
                    z = complex(rec.samples[t, s, a])
                    w.writerow([t, s, a, repr(z.real), repr(z.imag)])


def import_csv(path, condition: ConditionLabel, sample_rate_hz: float, origin: str = "real") -> CsiRecording:
    """Read ``t,s,a,re,im`` rows into a recording; every grid cell must appear exactly once."""
    cells = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != CSV_HEADER:
            raise FormatError(f"{path}: expected header {','.join(CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise FormatError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
            try:
                key = (int(row[0]), int(row[1]), int(row[2]))
                val = complex(float(row[3]), float(row[4]))
            except ValueError:
                raise FormatError(f"{path}:{lineno}: malformed row {row!r}") from None
            if min(key) < 0:
                raise FormatError(f"{path}:{lineno}: negative index {key}")
            if key in cells:
                raise FormatError(f"{path}:{lineno}: duplicate index {key}")
            cells[key] = val
    if not cells:
        raise FormatError(f"{path}: no data rows")
    dims = tuple(max(k[i] for k in cells) + 1 for i in range(3))
    if len(cells) != dims[0] * dims[1] * dims[2]:
        raise FormatError(f"{path}: incomplete grid, {len(cells)} of {dims[0] * dims[1] * dims[2]} cells")
    samples = np.empty(dims, dtype=np.complex128)
    for (t, s, a), v in cells.items():
        samples[t, s, a] = v
    return CsiRecording(samples, sample_rate_hz, condition, origin)


# ---------------------------------------------------------------- manifests

@dataclass(frozen=True)
class ManifestEntry:
    path: str
    condition: ConditionLabel
    origin: str = "real"
    method: str = "none"


@dataclass
class DatasetManifest:
    entries: list
    vocab: Vocab
    sample_rate_hz: float = 1000.0
    kind: str = "csid"
    root: Path = field(default_factory=Path)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        paths = [e.path for e in self.entries]
        if len(set(paths)) != len(paths):
            raise ValueError("manifest paths must be distinct")
        for e in self.entries:
            self.vocab.check(e.condition)

    def __len__(self):
        return len(self.entries)

    def resolve(self, entry: ManifestEntry) -> Path:
        return Path(self.root) / entry.path

    def labels(self):
        return np.array([e.condition.gesture for e in self.entries], dtype=np.int64)

    def subset(self, indices):
        return replace(self, entries=[self.entries[i] for i in indices])

    def to_json(self):
        return {
            "format": "gda-manifest",
            "version": 1,
            "kind": self.kind,
            "sample_rate_hz": self.sample_rate_hz,
            "vocab": asdict(self.vocab),
            "entries": [{"path": e.path, "condition": asdict(e.condition), "origin": e.origin,
                         "method": e.method} for e in self.entries],
            "provenance": self.provenance,
        }

    def save(self, path):
        path = Path(path)
        root = path.parent.resolve()
        doc = self.to_json()
        for item, e in zip(doc["entries"], self.entries):
            full = (Path(self.root) / e.path).resolve()
            item["path"] = os.path.relpath(full, root)
        path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        path = Path(path)
        doc = json.loads(path.read_text())
        if doc.get("format") != "gda-manifest":
            raise FormatError(f"{path}: not a gda manifest")
        entries = [ManifestEntry(e["path"], ConditionLabel(**e["condition"]), e.get("origin", "real"),
                                 e.get("method", "none")) for e in doc["entries"]]
        return cls(entries, Vocab(**doc["vocab"]), doc.get("sample_rate_hz", 1000.0),
                   doc.get("kind", "csid"), path.parent, doc.get("provenance", {}))


def stratified_split(labels, train_fraction: float, seed: int):
    """Per-class shuffled split; returns sorted (train_idx, test_idx)."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must be in (0, 1)")
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("cannot split an empty dataset")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if idx.size < 2:
            raise ValueError(f"class {c} has {idx.size} entries; need at least 2 to split")
        idx = idx[rng.permutation(idx.size)]
        k = int(np.floor(train_fraction * idx.size + 0.5))
        k = min(max(k, 1), idx.size - 1)
        train.extend(idx[:k])
        test.extend(idx[k:])
    return np.sort(np.array(train, dtype=np.int64)), np.sort(np.array(test, dtype=np.int64))


def split_dataset(manifest: DatasetManifest, train_fraction: float = 0.8, seed: int = 42):
    train, test = stratified_split(manifest.labels(), train_fraction, seed)
    return manifest.subset(train), manifest.subset(test)


# ---------------------------------------------------------------- synthetic corpus

def corpus_specs(per_gesture: int, vocab: Vocab, sample_rate_hz: float, n_frames: int, seed: int,
                 f0_hz: float = 120.0, a_static: float = 1.0, a_dyn: float = 0.3, noise_sigma: float = 0.05):
    """Randomised GestureSim list covering every gesture ``per_gesture`` times.

    Orientation scales the peak Doppler, location attenuates the moving path, and
    each recording jitters speed, extent and onset so classes are not single points.
    """
    rng = np.random.default_rng(seed)
    total_s = n_frames / sample_rate_hz
    sims = []
    for g in range(vocab.gestures):
        for _ in range(per_gesture):
            loc = int(rng.integers(vocab.locations))
            ori = int(rng.integers(vocab.orientations))
            cond = ConditionLabel(g, loc, ori, int(rng.integers(vocab.users)), int(rng.integers(vocab.rooms)))
            ori_scale = 1.0 - 0.25 * ori / max(vocab.orientations - 1, 1)
            duration = total_s * rng.uniform(0.7, 0.95)
            onset = rng.uniform(0.0, total_s - duration)
            sims.append(GestureSim(
                template=GESTURES[g % len(GESTURES)],
                duration_s=duration,
                f0_hz=min(f0_hz * ori_scale * rng.uniform(0.85, 1.15), 0.45 * sample_rate_hz),
                a_static=a_static,
                a_dyn=a_dyn * (1.0 - 0.1 * loc / max(vocab.locations - 1, 1)) * rng.uniform(0.8, 1.2),
                noise_sigma=noise_sigma,
                condition=cond,
                onset_s=onset,
            ))
    return sims
