"""Phase sanitisation and Doppler (DFS) spectrogram extraction.

DFSS binary layout (little-endian)::

    b"DFSS" | version u32 | F u32 | K u32
    | gesture u16 | location u16 | orientation u16 | user u16 | room u16 | origin u8
    payload: F*K f32, frequency-major
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .csi_data import ORIGINS, ConditionLabel, CsiRecording, FormatError

DFSS_MAGIC = b"DFSS"
DFSS_VERSION = 1
DFSS_HEADER = struct.Struct("<4sIIIHHHHHB")


@dataclass(frozen=True)
class StftParams:
    window_len: int = 128
    hop: int = 32
    window_fn: str = "hann"

    def __post_init__(self):
        w = self.window_len
        if w < 1 or w & (w - 1):
            raise ValueError(f"window_len must be a power of two, got {w}")
        if not 1 <= self.hop <= w:
            raise ValueError(f"hop must be in [1, {w}], got {self.hop}")
        if self.window_fn not in ("hann", "rect"):
            raise ValueError(f"unknown window_fn {self.window_fn!r}")

    def window(self):
        if self.window_fn == "rect":
            return np.ones(self.window_len)
        n = np.arange(self.window_len)
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / self.window_len)


@dataclass(frozen=True, eq=False)
class Spectrogram:
    pixels: np.ndarray  # float32 [F, K]
    condition: ConditionLabel
    origin: str = "real"
    f_axis_hz: np.ndarray | None = None
    degenerate: bool = False

    def __post_init__(self):
        p = np.array(self.pixels, dtype=np.float32)
        if p.ndim != 2:
            raise ValueError(f"pixels must be 2-D, got shape {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("pixels contain NaN/Inf")
        if self.origin not in ORIGINS:
            raise ValueError(f"origin must be one of {ORIGINS}")
        p.setflags(write=False)
        object.__setattr__(self, "pixels", p)
        if self.f_axis_hz is None:
            object.__setattr__(self, "f_axis_hz", centered_axis(p.shape[0], 1000.0))

    @property
    def shape(self):
        return self.pixels.shape

    def with_pixels(self, pixels, origin=None):
        return Spectrogram(pixels, self.condition, origin or self.origin, self.f_axis_hz)


def fft_axis(window_len: int, sample_rate_hz: float):
    """Shifted FFT bin frequencies; index window_len // 2 is exactly 0 Hz."""
    return (np.arange(window_len) - window_len // 2) * (sample_rate_hz / window_len)


def centered_axis(n_bins: int, sample_rate_hz: float):
    """Bin centres of ``n_bins`` equal cells spanning [-fs/2, fs/2); symmetric about 0."""
    return (np.arange(n_bins) + 0.5 - n_bins / 2) * (sample_rate_hz / n_bins)


def sanitize(rec: CsiRecording, ref_antenna: int = 0):
    """Cancel common phase offsets against a reference antenna, then drop the static part.

    Each non-reference antenna is multiplied by the conjugate of the reference
    normalised to unit modulus, which removes the random carrier phase shared by
    all antennas while keeping the reference's static path dominant; the per
    (subcarrier, antenna) temporal mean is then subtracted.
    """
    x = rec.samples
    n_a = x.shape[2]
    if n_a < 2:
        raise ValueError(f"sanitize needs >= 2 antennas, got {n_a}")
    if not 0 <= ref_antenna < n_a:
        raise ValueError(f"ref_antenna {ref_antenna} out of range for {n_a} antennas")
    prod = conjugate_product(np.delete(x, ref_antenna, axis=2), x[:, :, ref_antenna : ref_antenna + 1])
    return prod - prod.mean(axis=0, keepdims=True)


def conjugate_product(x, ref):
    """``x * conj(ref) / |ref|`` in real arithmetic, so ``z * conj(z)`` is exactly real."""
    a, b = x.real, x.imag
    c, d = ref.real, ref.imag
    mag = np.hypot(c, d)
    mag = np.where(mag > 0, mag, 1.0)
    return (a * c + b * d) / mag + 1j * ((b * c - a * d) / mag)


def stft(signal, params: StftParams):
    """Sliding-window FFT along axis 0.

    ``signal`` may carry trailing channel axes; the result has shape
    [K_frames, window_len, *channels] with frequency index ``window_len // 2``
    at zero Doppler.
    """
    x = np.asarray(signal, dtype=np.complex128)
    w = params.window_len
    if x.shape[0] < w:
        raise ValueError(f"signal length {x.shape[0]} shorter than window {w}")
    n_frames = (x.shape[0] - w) // params.hop + 1
    frames = np.lib.stride_tricks.sliding_window_view(x, w, axis=0)[:: params.hop][:n_frames]
    frames = np.moveaxis(frames, -1, 1)  # [K, W, *channels]
    win = params.window().reshape((1, w) + (1,) * (x.ndim - 1))
    spec = np.fft.fft(frames * win, axis=1)
    return np.fft.fftshift(spec, axes=1)


def _interp_axis(img, src, dst, axis):
    """Linear interpolation of ``img`` along ``axis`` from coordinates src to dst (clamped)."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.clip(np.asarray(dst, dtype=np.float64), src[0], src[-1])
    if src.size == 1:
        return np.repeat(np.take(img, [0], axis=axis), dst.size, axis=axis)
    hi = np.clip(np.searchsorted(src, dst, side="right"), 1, src.size - 1)
    lo = hi - 1
    frac = (dst - src[lo]) / (src[hi] - src[lo])
    shape = [1] * img.ndim
    shape[axis] = -1
    frac = frac.reshape(shape)
    return np.take(img, lo, axis=axis) * (1 - frac) + np.take(img, hi, axis=axis) * frac


def resize_bilinear(img, out_shape):
    """Bilinear resize with half-pixel centres; same-size resize is the identity."""
    img = np.asarray(img, dtype=np.float64)
    out = img
    for axis, n_out in enumerate(out_shape):
        n_in = img.shape[axis]
        if n_in == n_out:
            continue
        dst = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        out = _interp_axis(out, np.arange(n_in, dtype=np.float64), dst, axis)
    return out


def dfs_spectrogram(rec: CsiRecording, params: StftParams = StftParams(), out_shape=(64, 64),
                    ref_antenna: int = 0) -> Spectrogram:
    """Sanitise, STFT each (subcarrier, antenna pair), average power, log-compress, resample, normalise."""
    n_f, n_k = out_shape
    clean = sanitize(rec, ref_antenna)
    spec = stft(clean, params)  # [K, W, S, A-1]
    power = (spec.real**2 + spec.imag**2).mean(axis=(2, 3)).T  # [W, K]
    img = np.log1p(power)
    fs = rec.sample_rate_hz
    f_in = fft_axis(params.window_len, fs)
    f_out = centered_axis(n_f, fs)
    t_in = (np.arange(img.shape[1]) * params.hop + params.window_len / 2) / fs
    t_out = np.linspace(t_in[0], t_in[-1], n_k)
    img = _interp_axis(img, f_in, f_out, axis=0)
    img = _interp_axis(img, t_in, t_out, axis=1)
    lo, hi = img.min(), img.max()
    degenerate = not hi - lo > 1e-12 * max(1.0, abs(hi))
    pixels = np.zeros(out_shape) if degenerate else (img - lo) / (hi - lo)
    return Spectrogram(pixels.astype(np.float32), rec.condition, rec.origin, f_out, degenerate)


# ---------------------------------------------------------------- DFSS files

def write_dfss(spec: Spectrogram, path):
    n_f, n_k = spec.shape
    c = spec.condition
    header = DFSS_HEADER.pack(DFSS_MAGIC, DFSS_VERSION, n_f, n_k, c.gesture, c.location, c.orientation,
                              c.user, c.room, ORIGINS.index(spec.origin))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.asarray(spec.pixels, dtype="<f4").tobytes())


def read_dfss(path, sample_rate_hz: float = 1000.0) -> Spectrogram:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != DFSS_MAGIC:
        raise FormatError(f"{path}: bad magic {buf[:4]!r}")
    if len(buf) < DFSS_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    _, version, n_f, n_k, g, loc, ori, user, room, origin = DFSS_HEADER.unpack_from(buf)
    if version != DFSS_VERSION:
        raise FormatError(f"{path}: version {version} != {DFSS_VERSION}")
    if n_f == 0 or n_k == 0 or n_f * n_k >= 1 << 31:
        raise FormatError(f"{path}: dimension overflow F={n_f} K={n_k}")
    expected = DFSS_HEADER.size + 4 * n_f * n_k
    if len(buf) != expected:
        raise FormatError(f"{path}: payload size {len(buf) - DFSS_HEADER.size} != {4 * n_f * n_k}")
    if origin >= len(ORIGINS):
        raise FormatError(f"{path}: unknown origin code {origin}")
    pixels = np.frombuffer(buf, dtype="<f4", offset=DFSS_HEADER.size).reshape(n_f, n_k)
    return Spectrogram(pixels.astype(np.float32), ConditionLabel(g, loc, ori, user, room), ORIGINS[origin],
                       centered_axis(n_f, sample_rate_hz))


def stack_pixels(specs):
    """[N, 1, F, K] float64 batch from a list of spectrograms."""
    return np.stack([s.pixels for s in specs]).astype(np.float64)[:, None]
