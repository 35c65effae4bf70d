import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from gda.csi_data import (
    GESTURES, ConditionLabel, CsiRecording, DatasetManifest, FormatError, GestureSim, ManifestEntry, Vocab,
    export_csv, import_csv, read_csid, split_dataset, synth_csi, write_csid,
)

FS = 1000.0


def slide(**kw):
    base = dict(template="slide", duration_s=0.256, f0_hz=20.0, a_static=1.0, a_dyn=0.3, noise_sigma=0.0)
    base.update(kw)
    return GestureSim(**base)


# ---------------------------------------------------------------- synth_csi

def test_static_only_is_time_constant():
    rec = synth_csi(slide(a_dyn=0.0), FS, (64, 4, 3), seed=1)
    assert np.all(rec.samples == rec.samples[0:1])


def test_slide_phase_slope_matches_doppler():
    rec = synth_csi(slide(a_static=0.0, duration_s=0.256), FS, (256, 2, 2), seed=3)
    phase = np.unwrap(np.angle(rec.samples[:, 0, 0]))
    slope = np.diff(phase) * FS
    np.testing.assert_allclose(slope, 2 * np.pi * 20.0, rtol=0, atol=1e-9)


def test_synth_is_deterministic():
    sim = slide(noise_sigma=0.1)
    a = synth_csi(sim, FS, (128, 5, 3), seed=11)
    b = synth_csi(sim, FS, (128, 5, 3), seed=11)
    assert a.samples.tobytes() == b.samples.tobytes()
    c = synth_csi(sim, FS, (128, 5, 3), seed=12)
    assert a.samples.tobytes() != c.samples.tobytes()


def test_synth_rejects_nyquist_violation_and_bad_params():
    with pytest.raises(ValueError, match="Nyquist"):
        synth_csi(slide(f0_hz=500.0), FS, (64, 1, 2), seed=0)
    with pytest.raises(ValueError):
        slide(f0_hz=float("nan"))
    with pytest.raises(ValueError):
        synth_csi(slide(), FS, (1, 1, 1), seed=0)


gesture_sims = st.builds(
    GestureSim,
    template=st.sampled_from(GESTURES),
    duration_s=st.floats(0.05, 1.0),
    f0_hz=st.floats(0.0, 450.0),
    a_static=st.floats(0.0, 3.0),
    a_dyn=st.floats(0.0, 3.0),
    noise_sigma=st.floats(0.0, 1.0),
    condition=st.builds(ConditionLabel, st.integers(0, 5)),
    onset_s=st.floats(0.0, 0.5),
)


@settings(max_examples=60, deadline=None)
@given(gesture_sims, st.integers(2, 40), st.integers(1, 4), st.integers(1, 3), st.integers(0, 2**32))
def test_synth_respects_dims_and_is_finite(sim, t, s, a, seed):
    rec = synth_csi(sim, FS, (t, s, a), seed)
    assert rec.dims == (t, s, a)
    assert np.all(np.isfinite(rec.samples))


@settings(max_examples=60, deadline=None)
@given(gesture_sims, st.integers(0, 2**32))
def test_two_path_interference_bound(sim, seed):
    sim = GestureSim(sim.template, sim.duration_s, sim.f0_hz, sim.a_static + 0.01, sim.a_dyn + 0.01, 0.0,
                     sim.condition, sim.onset_s)
    mag = np.abs(synth_csi(sim, FS, (50, 3, 2), seed).samples)
    lo, hi = abs(sim.a_static - sim.a_dyn), sim.a_static + sim.a_dyn
    assert mag.min() >= lo - 1e-12 and mag.max() <= hi + 1e-12


# ---------------------------------------------------------------- CSID

def test_csid_size_and_round_trip(tmp_path):
    rec = synth_csi(slide(noise_sigma=0.2), FS, (100, 30, 3), seed=5)
    path = tmp_path / "r.csid"
    write_csid(rec, path)
    assert os.path.getsize(path) == 64 + 100 * 30 * 3 * 16
    assert read_csid(path) == rec


recordings = st.builds(
    CsiRecording,
    samples=st.tuples(st.integers(2, 6), st.integers(1, 4), st.integers(1, 3)).flatmap(
        lambda shape: hnp.arrays(np.complex128, shape,
                                 elements=st.complex_numbers(allow_nan=False, allow_infinity=False))),
    sample_rate_hz=st.floats(1e-3, 1e9),
    condition=st.builds(ConditionLabel, *(st.integers(0, 65535) for _ in range(5))),
    origin=st.sampled_from(["real", "synthetic"]),
)


@settings(max_examples=120, deadline=None)
@given(recordings)
def test_csid_round_trip_is_bitwise(tmp_path_factory, rec):
    path = tmp_path_factory.mktemp("csid") / "x.csid"
    write_csid(rec, path)
    back = read_csid(path)
    assert back == rec
    assert back.samples.tobytes() == rec.samples.tobytes()


def test_csid_errors(tmp_path):
    rec = synth_csi(slide(), FS, (8, 2, 2), seed=0)
    path = tmp_path / "r.csid"
    write_csid(rec, path)
    raw = path.read_bytes()
    bad = tmp_path / "bad.csid"
    bad.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError, match="magic"):
        read_csid(bad)
    bad.write_bytes(raw[:-1])
    with pytest.raises(FormatError, match="truncated"):
        read_csid(bad)
    bad.write_bytes(raw[:4] + (2).to_bytes(4, "little") + raw[8:])
    with pytest.raises(FormatError, match="version"):
        read_csid(bad)
    huge = raw[:8] + (1 << 20).to_bytes(4, "little") * 3 + raw[20:]
    bad.write_bytes(huge)
    with pytest.raises(FormatError, match="overflow"):
        read_csid(bad)


# ---------------------------------------------------------------- CSV

def test_import_csv_tiny(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("t,s,a,re,im\n0,0,0,1,0\n1,0,0,0,1\n")
    rec = import_csv(path, ConditionLabel(2), FS)
    np.testing.assert_array_equal(rec.samples[:, 0, 0], [1 + 0j, 1j])
    assert rec.condition.gesture == 2


@pytest.mark.parametrize("body,msg", [
    ("0,0,0,1,0\n0,0,0,0,1\n", "duplicate"),
    ("0,0,0,1,0\n1,0,1,0,1\n", "incomplete"),
    ("0,0,0,1\n", "expected 5"),
    ("0,0,zero,1,0\n", "malformed"),
])
def test_import_csv_errors(tmp_path, body, msg):
    path = tmp_path / "x.csv"
    path.write_text("t,s,a,re,im\n" + body)
    with pytest.raises(FormatError, match=msg):
        import_csv(path, ConditionLabel(0), FS)


def test_csv_export_round_trip(tmp_path):
    rec = synth_csi(slide(noise_sigma=0.3), FS, (20, 3, 2), seed=9)
    path = tmp_path / "x.csv"
    export_csv(rec, path)
    back = import_csv(path, rec.condition, FS)
    a = rec.samples.view(np.float64)
    b = back.samples.view(np.float64)
    ulps = np.abs(a.view(np.int64) - b.view(np.int64))
    assert ulps.max() <= 1


# ---------------------------------------------------------------- manifests and splits

def _manifest(counts):
    entries = []
    for g, n in enumerate(counts):
        entries += [ManifestEntry(f"g{g}_{i}.csid", ConditionLabel(g)) for i in range(n)]
    return DatasetManifest(entries, Vocab(gestures=len(counts)))


def test_split_stratified_counts():
    train, test = split_dataset(_manifest([10] * 6), 0.8, seed=42)
    assert np.bincount(train.labels()).tolist() == [8] * 6
    assert np.bincount(test.labels()).tolist() == [2] * 6


def test_split_deterministic_and_disjoint():
    m = _manifest([7, 9, 4, 12])
    a, b = split_dataset(m, 0.7, seed=1), split_dataset(m, 0.7, seed=1)
    assert [e.path for e in a[0].entries] == [e.path for e in b[0].entries]
    tr, te = {e.path for e in a[0].entries}, {e.path for e in a[1].entries}
    assert not tr & te and tr | te == {e.path for e in m.entries}


def test_split_rejects_singleton_class():
    with pytest.raises(ValueError, match="at least 2"):
        split_dataset(_manifest([5, 1]), 0.8, seed=0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(2, 30), min_size=1, max_size=6), st.floats(0.05, 0.95), st.integers(0, 1000))
def test_split_properties(counts, frac, seed):
    train, test = split_dataset(_manifest(counts), frac, seed)
    assert not {e.path for e in train.entries} & {e.path for e in test.entries}
    got = np.bincount(train.labels(), minlength=len(counts))
    assert np.all(np.abs(got - frac * np.array(counts)) < 1)


def test_manifest_json_round_trip_and_validation(tmp_path):
    m = _manifest([2, 3])
    m.root = tmp_path
    m.save(tmp_path / "manifest.json")
    back = DatasetManifest.load(tmp_path / "manifest.json")
    assert back.entries == m.entries and back.vocab == m.vocab
    with pytest.raises(ValueError, match="distinct"):
        DatasetManifest([ManifestEntry("a", ConditionLabel(0))] * 2, Vocab())
    with pytest.raises(ValueError, match="vocabulary"):
        DatasetManifest([ManifestEntry("a", ConditionLabel(7))], Vocab())
