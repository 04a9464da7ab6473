import numpy as np
import pytest

from heartmsar import (AnnotationTrack, DatasetManifest, ManifestEntry,
                       Recording, load_annotations, load_manifest,
                       load_recording, load_state_runs, rescale_track,
                       resample, save_annotations, save_manifest,
                       save_recording, save_state_runs)
from heartmsar.errors import ConfigError, FormatError, ValidationError


def test_load_wav_two_seconds(tmp_path):
    fs = 2000
    t = np.arange(2 * fs) / fs
    rec = Recording(0.5 * np.sin(2 * np.pi * 50 * t), fs, "sine")
    path = tmp_path / "sine.wav"
    save_recording(rec, path)
    loaded = load_recording(path, fmt="wav16-mono")
    assert len(loaded.samples) == 4000
    assert loaded.sample_rate == 2000
    np.testing.assert_allclose(loaded.samples, rec.samples, atol=1.0 / 32768)


def test_load_csv_float(tmp_path):
    path = tmp_path / "r.csv"
    path.write_text("sample_rate=1000\n0.1\n0.2\n0.3\n-0.4\n0.5\n")
    rec = load_recording(path, fmt="csv-float")
    assert rec.sample_rate == 1000
    np.testing.assert_allclose(rec.samples, [0.1, 0.2, 0.3, -0.4, 0.5])


def test_stereo_wav_rejected(tmp_path):
    import wave

    path = tmp_path / "stereo.wav"
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(2)
        wf.setsampwidth(2)
        wf.setframerate(2000)
        wf.writeframes(np.zeros(100, dtype="<i2").tobytes())
    with pytest.raises(FormatError, match="multi-channel unsupported"):
        load_recording(path, fmt="wav16-mono")


def test_empty_wav_rejected(tmp_path):
    import wave

    path = tmp_path / "empty.wav"
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(2000)
    with pytest.raises(FormatError, match="empty payload"):
        load_recording(path, fmt="wav16-mono")


def test_csv_missing_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("0.1\n0.2\n")
    with pytest.raises(FormatError, match="sample_rate"):
        load_recording(path, fmt="csv-float")


def test_recording_invariants():
    with pytest.raises(ValidationError):
        Recording(np.array([]), 1000)
    with pytest.raises(ValidationError):
        Recording(np.array([1.0, np.nan]), 1000)
    with pytest.raises(ValidationError):
        Recording(np.array([1.0]), 0)


def test_annotations_valid_cycle(tmp_path):
    path = tmp_path / "a.csv"
    path.write_text("0,100,1\n100,300,2\n300,400,3\n400,900,4\n")
    track = load_annotations(path)
    assert len(track) == 4
    assert track.end == 900


def test_annotations_gap(tmp_path):
    path = tmp_path / "a.csv"
    path.write_text("0,100,1\n150,300,2\n")
    with pytest.raises(ValidationError, match="gap at sample 100"):
        load_annotations(path)


def test_annotations_illegal_transition(tmp_path):
    path = tmp_path / "a.csv"
    path.write_text("0,100,1\n100,200,3\n")
    with pytest.raises(ValidationError, match="illegal transition"):
        load_annotations(path)


def test_annotations_bad_state(tmp_path):
    path = tmp_path / "a.csv"
    path.write_text("0,100,5\n")
    with pytest.raises(ValidationError, match="outside 1..4"):
        load_annotations(path)


def test_annotations_roundtrip(tmp_path):
    track = AnnotationTrack(
        starts=[0, 120, 320, 420], ends=[120, 320, 420, 1000],
        states=[1, 2, 3, 4],
    )
    path = tmp_path / "rt.csv"
    save_annotations(track, path)
    again = load_annotations(path)
    np.testing.assert_array_equal(track.starts, again.starts)
    np.testing.assert_array_equal(track.ends, again.ends)
    np.testing.assert_array_equal(track.states, again.states)


def test_track_lengths_sum_property():
    rng = np.random.default_rng(7)
    for _ in range(20):
        durs = rng.integers(1, 50, size=8)
        ends = np.cumsum(durs)
        starts = np.concatenate([[0], ends[:-1]])
        states = [(i % 4) + 1 for i in range(8)]
        track = AnnotationTrack(starts, ends, states)
        assert (track.ends - track.starts).sum() == track.end


def test_state_runs_roundtrip(tmp_path):
    labels = np.array([1, 1, 3, 3, 3, 2, 4, 4])  # no cyclic requirement
    path = tmp_path / "runs.csv"
    save_state_runs(labels, path)
    np.testing.assert_array_equal(load_state_runs(path), labels)


def test_manifest_roundtrip(tmp_path):
    manifest = DatasetManifest(
        (
            ManifestEntry("a.wav", "a.ann.csv", "normal", "train"),
            ManifestEntry("b.wav", None, "abnormal", "test"),
            ManifestEntry("c.wav", None, "noise", "train"),
        )
    )
    path = tmp_path / "m.csv"
    save_manifest(manifest, path)
    again = load_manifest(path)
    assert len(again) == 3
    assert again.entries[1].annotation is None
    assert len(again.segmentation_entries()) == 2


def test_manifest_unknown_label(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("path,annotation,label,split\na.wav,,bad,train\n")
    with pytest.raises(ValidationError, match="unknown class label"):
        load_manifest(path)


def test_manifest_duplicate_path(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text(
        "path,annotation,label,split\na.wav,,normal,train\na.wav,,normal,test\n"
    )
    with pytest.raises(ValidationError, match="duplicate entry"):
        load_manifest(path)


def test_resample_identity_is_identity():
    rec = Recording(np.random.default_rng(0).standard_normal(500), 1000)
    out = resample(rec, 1000)
    np.testing.assert_array_equal(out.samples, rec.samples)


def test_resample_sine_against_analytic():
    fs, target = 2000, 1000
    t = np.arange(2 * fs) / fs
    rec = Recording(np.sin(2 * np.pi * 100 * t), fs, "sine")
    out = resample(rec, target)
    t2 = np.arange(len(out.samples)) / target
    reference = np.sin(2 * np.pi * 100 * t2)
    corr = np.corrcoef(out.samples, reference)[0, 1]
    assert corr > 0.999


def test_resample_floor_length():
    rec = Recording(np.ones(4001) + np.arange(4001) * 1e-5, 2000)
    out = resample(rec, 1000)
    assert len(out.samples) == 2000


def test_resample_upsampling_rejected():
    rec = Recording(np.ones(100), 1000)
    with pytest.raises(ConfigError, match="upsampling unsupported"):
        resample(rec, 2000)


def test_rescale_track_halves_boundaries():
    track = AnnotationTrack([0, 100, 300, 400], [100, 300, 400, 900], [1, 2, 3, 4])
    out = rescale_track(track, 2000, 1000)
    np.testing.assert_array_equal(out.ends, [50, 150, 200, 450])
