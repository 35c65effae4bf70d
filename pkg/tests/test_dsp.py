import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gda.csi_data import GESTURES, ConditionLabel, CsiRecording, FormatError, GestureSim, synth_csi
from gda.dsp import (
    Spectrogram, StftParams, centered_axis, conjugate_product, dfs_spectrogram, fft_axis, read_dfss,
    resize_bilinear, sanitize, stft, write_dfss,
)

FS = 1000.0


def direct_stft(x, params):
    """O(W^2) DFT straight from the definition, centred frequency ordering."""
    w = params.window_len
    win = params.window()
    n_frames = (len(x) - w) // params.hop + 1
    n = np.arange(w)
    out = np.zeros((n_frames, w), dtype=np.complex128)
    for k in range(n_frames):
        seg = win * x[k * params.hop : k * params.hop + w]
        for f in range(w):
            fu = (f - w // 2) % w
            out[k, f] = np.sum(seg * np.exp(-2j * np.pi * fu * n / w))
    return out


def rand_complex(rng, n):
    return rng.normal(size=n) + 1j * rng.normal(size=n)


# ---------------------------------------------------------------- sanitize

def _rec(samples):
    return CsiRecording(samples, FS, ConditionLabel(0))


def test_sanitize_identical_antennas_gives_real_nonnegative_product():
    rng = np.random.default_rng(0)
    z = rand_complex(rng, 64 * 3).reshape(64, 3, 1)
    x = np.concatenate([z, z], axis=2)
    prod = conjugate_product(x[:, :, 1:], x[:, :, :1])
    assert np.all(prod.imag == 0) and np.all(prod.real >= 0)
    out = sanitize(_rec(x))
    np.testing.assert_array_equal(out.imag, 0.0)


def test_sanitize_cancels_common_phase():
    rng = np.random.default_rng(1)
    x = rand_complex(rng, 200 * 4 * 3).reshape(200, 4, 3)
    theta = np.cumsum(rng.normal(size=200))
    y = x * np.exp(1j * theta)[:, None, None]
    np.testing.assert_allclose(sanitize(_rec(y)), sanitize(_rec(x)), rtol=0, atol=1e-12)


def test_sanitize_static_only_vanishes():
    sim = GestureSim("slide", 1.0, 20.0, a_static=1.0, a_dyn=0.0, noise_sigma=0.0)
    out = sanitize(synth_csi(sim, FS, (256, 30, 3), seed=0))
    assert out.shape == (256, 30, 2)
    assert np.abs(out).max() < 1e-12


def test_sanitize_needs_two_antennas():
    with pytest.raises(ValueError):
        sanitize(_rec(np.ones((4, 2, 1), dtype=complex)))


# ---------------------------------------------------------------- stft

def test_stft_zero_signal():
    assert np.all(stft(np.zeros(256, dtype=complex), StftParams(64, 16)) == 0)


@pytest.mark.parametrize("seed", range(10))
def test_stft_matches_direct_dft(seed):
    rng = np.random.default_rng(seed)
    params = StftParams([16, 32, 64, 128][seed % 4], [1, 7, 16, 32][seed % 4], ["hann", "rect"][seed % 2])
    x = rand_complex(rng, 300)
    assert np.abs(stft(x, params) - direct_stft(x, params)).max() < 1e-9


def test_stft_frame_count():
    assert stft(np.ones(512), StftParams(128, 32)).shape == ((512 - 128) // 32 + 1, 128)
    with pytest.raises(ValueError):
        stft(np.ones(100), StftParams(128, 32))


def test_on_bin_tone_peaks_at_its_bin():
    w = 64
    params = StftParams(w, 16, "rect")
    f0 = 5 * FS / w
    x = np.exp(2j * np.pi * f0 * np.arange(512) / FS)
    mag = np.abs(stft(x, params))
    expected = int(np.argmin(np.abs(fft_axis(w, FS) - f0)))
    assert expected == w // 2 + 5
    assert np.all(mag.argmax(axis=1) == expected)
    ref = np.abs(direct_stft(x, params))
    assert np.all(ref.argmax(axis=1) == expected)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.complex_numbers(max_magnitude=10), st.complex_numbers(max_magnitude=10))
def test_stft_linearity(seed, a, b):
    rng = np.random.default_rng(seed)
    x, y = rand_complex(rng, 256), rand_complex(rng, 256)
    p = StftParams(64, 24)
    np.testing.assert_allclose(stft(a * x + b * y, p), a * stft(x, p) + b * stft(y, p), rtol=0, atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([8, 32, 128]))
def test_stft_parseval_rect(seed, w):
    rng = np.random.default_rng(seed)
    x = rand_complex(rng, 3 * w)
    p = StftParams(w, w // 2, "rect")
    spec = stft(x, p)
    for k in range(spec.shape[0]):
        frame = x[k * p.hop : k * p.hop + w]
        lhs = np.sum(np.abs(spec[k]) ** 2)
        np.testing.assert_allclose(lhs, w * np.sum(np.abs(frame) ** 2), rtol=1e-9)


def test_stft_params_validation():
    for bad in [dict(window_len=100), dict(hop=0), dict(hop=256), dict(window_fn="kaiser")]:
        with pytest.raises(ValueError):
            StftParams(**bad)


# ---------------------------------------------------------------- axes

def test_fft_axis_has_exact_zero_bin():
    ax = fft_axis(128, FS)
    assert ax[64] == 0.0 and np.all(np.diff(ax) > 0)


@pytest.mark.parametrize("n", [8, 63, 64, 128])
def test_centered_axis_symmetry(n):
    ax = centered_axis(n, FS)
    assert np.all(np.diff(ax) > 0)
    np.testing.assert_array_equal(ax, -ax[::-1])


# ---------------------------------------------------------------- dfs_spectrogram

def test_slide_ridge_tracks_doppler():
    sim = GestureSim("slide", 1.024, 20.0, a_static=1.0, a_dyn=0.3, noise_sigma=0.02)
    spec = dfs_spectrogram(synth_csi(sim, FS, (1024, 30, 3), seed=4), StftParams(128, 32), (64, 64))
    target = int(np.argmin(np.abs(spec.f_axis_hz - 20.0)))
    hits = np.mean(spec.pixels.argmax(axis=0) == target)
    assert hits >= 0.9


def test_static_recording_gives_zero_pixels():
    sim = GestureSim("slide", 1.0, 20.0, a_dyn=0.0, noise_sigma=0.0)
    spec = dfs_spectrogram(synth_csi(sim, FS, (512, 8, 3), seed=0))
    assert spec.degenerate and np.all(spec.pixels == 0)


@settings(max_examples=15, deadline=None)
@given(st.sampled_from(GESTURES), st.floats(10.0, 300.0), st.floats(0.0, 0.5), st.integers(0, 2**31),
       st.sampled_from([(64, 64), (32, 48), (17, 5)]))
def test_dfs_shape_and_range(template, f0, noise, seed, shape):
    sim = GestureSim(template, 0.4, f0, noise_sigma=noise)
    spec = dfs_spectrogram(synth_csi(sim, FS, (512, 6, 3), seed), StftParams(64, 16), shape)
    assert spec.shape == shape
    assert spec.pixels.min() >= 0.0 and spec.pixels.max() <= 1.0


def test_dfs_deterministic_and_copies_labels():
    cond = ConditionLabel(3, 1, 2, 0, 1)
    sim = GestureSim("clap", 0.5, 80.0, noise_sigma=0.1, condition=cond)
    rec = synth_csi(sim, FS, (512, 10, 3), seed=2)
    a, b = dfs_spectrogram(rec), dfs_spectrogram(rec)
    assert a.pixels.tobytes() == b.pixels.tobytes()
    assert a.condition == cond and a.origin == "real"


# ---------------------------------------------------------------- resize and DFSS

def test_resize_identity_and_constant():
    img = np.random.default_rng(0).uniform(size=(16, 12))
    np.testing.assert_array_equal(resize_bilinear(img, (16, 12)), img)
    np.testing.assert_allclose(resize_bilinear(np.full((7, 9), 0.3), (20, 5)), 0.3, atol=1e-15)


def test_dfss_round_trip_and_errors(tmp_path):
    px = np.random.default_rng(1).uniform(size=(64, 64)).astype(np.float32)
    spec = Spectrogram(px, ConditionLabel(4, 2, 1, 3, 0), "synthetic")
    path = tmp_path / "s.dfss"
    write_dfss(spec, path)
    back = read_dfss(path)
    assert back.pixels.tobytes() == spec.pixels.tobytes()
    assert back.condition == spec.condition and back.origin == "synthetic"
    raw = path.read_bytes()
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError, match="magic"):
        read_dfss(path)
    path.write_bytes(raw[:-4])
    with pytest.raises(FormatError):
        read_dfss(path)
