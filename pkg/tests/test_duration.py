import numpy as np
import pytest

from heartmsar import (DurationModel, DurationStats, HeartRateEstimate,
                       build_duration_model, cyclic_successor_matrix,
                       duration_stats_from_tracks, estimate_heart_rate,
                       skf_viterbi)
from heartmsar.errors import EstimationError, NumericalError, ValidationError
from heartmsar.io import AnnotationTrack
from oracles import duration_viterbi_bruteforce

FS = 1000


def _pulse_train(beats_per_s, seconds=10.0, fs=FS, seed=5):
    rng = np.random.default_rng(seed)
    x = np.zeros(int(seconds * fs))
    period = int(fs / beats_per_s)
    for s in range(0, len(x), period):
        e = min(s + 40, len(x))
        x[s:e] = np.sin(2 * np.pi * 50 * np.arange(e - s) / fs)
    return x + rng.normal(0, 0.01, len(x))


def test_heart_rate_60():
    est = estimate_heart_rate(_pulse_train(1.0), FS)
    assert est.hr == pytest.approx(60.0, abs=2.0)


def test_heart_rate_90():
    est = estimate_heart_rate(_pulse_train(1.5), FS)
    assert est.hr == pytest.approx(90.0, abs=3.0)


def test_heart_rate_white_noise_fails():
    noise = np.random.default_rng(3).standard_normal(10 * FS)
    with pytest.raises(EstimationError):
        estimate_heart_rate(noise, FS)


def test_heart_rate_needs_five_seconds():
    with pytest.raises(ValidationError, match="5 s"):
        estimate_heart_rate(np.zeros(FS), FS)


def test_heart_rate_estimate_invariants():
    with pytest.raises(ValidationError):
        HeartRateEstimate(hr=250.0, t_sys=0.2)
    with pytest.raises(ValidationError):
        HeartRateEstimate(hr=60.0, t_sys=0.05)
    with pytest.raises(ValidationError):
        HeartRateEstimate(hr=120.0, t_sys=0.9)  # exceeds one beat


def _stats(mean=(0.12, 0.2, 0.1, 0.58), sd=(0.02, 0.03, 0.02, 0.06)):
    return DurationStats(mean=np.array(mean), sd=np.array(sd))


def test_duration_model_d_max():
    dm = build_duration_model(HeartRateEstimate(60.0, 0.32), _stats(), FS)
    assert dm.d_max == 1000


def test_duration_model_rows_normalized():
    dm = build_duration_model(HeartRateEstimate(72.0, 0.31), _stats(), FS)
    np.testing.assert_allclose(dm.dP.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(dm.dP >= 0)


def test_duration_model_degenerate_sd_one_hot():
    stats = DurationStats(
        mean=np.array([10.0, 10.0, 10.0, 10.0]) / FS, sd=np.zeros(4),
    )
    # choose hr and t_sys so every derived mean is exactly 10 samples:
    # sys mean = t_sys*fs - 10 = 10 -> t_sys = 0.02... below the 0.1 floor,
    # so instead verify the one-hot behavior on S1/S2 rows only
    hr = 60.0
    dm = build_duration_model(HeartRateEstimate(hr, 0.3), stats, FS)
    assert dm.dP[0, 9] == 1.0 and np.count_nonzero(dm.dP[0]) == 1
    assert dm.dP[2, 9] == 1.0 and np.count_nonzero(dm.dP[2]) == 1


def test_duration_model_infeasible_mean():
    stats = _stats(mean=(0.4, 0.2, 0.1, 0.3))
    # sys mean = 0.1*fs... with t_sys=0.2: 200 - 400 < 0 -> infeasible
    with pytest.raises(ValidationError, match="infeasible"):
        build_duration_model(HeartRateEstimate(60.0, 0.2), stats, FS)


def test_duration_stats_from_tracks():
    track = AnnotationTrack(
        starts=[0, 120, 320, 420], ends=[120, 320, 420, 1000],
        states=[1, 2, 3, 4],
    )
    stats = duration_stats_from_tracks([track], FS)
    np.testing.assert_allclose(stats.mean, [0.12, 0.2, 0.1, 0.58])
    np.testing.assert_allclose(stats.sd, 0.0, atol=1e-12)


# ---------------------------------------------------------------------------
# skf_viterbi

def test_viterbi_matches_bruteforce_random():
    rng = np.random.default_rng(77)
    for _ in range(25):
        T = int(rng.integers(2, 13))
        d_max = int(rng.integers(1, 5))
        M = rng.dirichlet(np.ones(4), size=T)
        dP = rng.dirichlet(np.ones(d_max), size=4)
        pi0 = rng.dirichlet(np.ones(4))
        path, score = skf_viterbi(
            M, DurationModel(dP=dP, d_max=d_max), pi0=pi0, return_score=True,
        )
        best, labels, unique = duration_viterbi_bruteforce(
            M, dP, cyclic_successor_matrix(4), pi0,
        )
        assert score == pytest.approx(best, abs=1e-9)
        if unique:
            np.testing.assert_array_equal(path, labels)


def test_viterbi_forced_durations():
    # one-hot dP at d=3 and uninformative M: every segment away from the
    # window edges must be exactly 3 samples (runs touching the start may
    # be onset-censored, the final run may be cut off by the window end)
    T, d = 24, 3
    dP = np.zeros((4, 4))
    dP[:, d - 1] = 1.0
    M = np.full((T, 4), 0.25)
    path = skf_viterbi(M, DurationModel(dP=dP, d_max=4))
    segments = _segments(path)
    interior = segments[2:-1]
    assert len(interior) >= 4
    for _state, length in interior:
        assert length == d
    _assert_cyclic(segments)


def test_viterbi_recovers_consistent_evidence():
    lengths = [3, 4, 2, 3]
    states = np.concatenate([
        np.full(n, j + 1) for j, n in enumerate(lengths)
    ])
    M = np.full((len(states), 4), 1e-9)
    M[np.arange(len(states)), states - 1] = 1.0
    M /= M.sum(axis=1, keepdims=True)
    dP = np.full((4, 5), 0.2)
    path = skf_viterbi(M, DurationModel(dP=dP, d_max=5), pi0=[1.0, 0, 0, 0])
    np.testing.assert_array_equal(path, states)


def test_viterbi_output_respects_cycle_and_duration_bounds():
    rng = np.random.default_rng(123)
    d_max = 6
    M = rng.dirichlet(np.ones(4) * 0.4, size=60)
    dP = rng.dirichlet(np.ones(d_max), size=4)
    path = skf_viterbi(M, DurationModel(dP=dP, d_max=d_max))
    segments = _segments(path)
    _assert_cyclic(segments)
    for _state, length in segments[1:-1]:
        assert 1 <= length <= d_max


def test_viterbi_per_time_scaling_invariance():
    rng = np.random.default_rng(9)
    T, d_max = 40, 4
    M = rng.dirichlet(np.ones(4), size=T)
    dP = rng.dirichlet(np.ones(d_max), size=4)
    dm = DurationModel(dP=dP, d_max=d_max)
    base = skf_viterbi(M, dm)
    scales = rng.uniform(0.5, 2.0, size=T)[:, None]
    path_scaled = skf_viterbi(M * scales, dm)
    np.testing.assert_array_equal(base, path_scaled)


def test_viterbi_rejects_self_transitions():
    M = np.full((10, 4), 0.25)
    dP = np.full((4, 3), 1 / 3)
    a = cyclic_successor_matrix(4)
    a[1, 1] = 0.5
    with pytest.raises(ValidationError):
        skf_viterbi(M, DurationModel(dP=dP, d_max=3), a=a)


def test_viterbi_rejects_non_successor():
    M = np.full((10, 4), 0.25)
    dP = np.full((4, 3), 1 / 3)
    a = np.zeros((4, 4))
    a[0, 2] = 1.0
    a[1, 2], a[2, 3], a[3, 0] = 1.0, 1.0, 1.0
    with pytest.raises(ValidationError, match="cyclic successor"):
        skf_viterbi(M, DurationModel(dP=dP, d_max=3), a=a)


def test_viterbi_impossible_paths_raise():
    M = np.full((8, 4), 0.25)
    dP = np.full((4, 2), 0.5)
    with pytest.raises(NumericalError, match="decoding failed"):
        skf_viterbi(M, DurationModel(dP=dP, d_max=2), pi0=np.zeros(4))


def _segments(path):
    segments = []
    start = 0
    for i in range(1, len(path) + 1):
        if i == len(path) or path[i] != path[start]:
            segments.append((path[start], i - start))
            start = i
    return segments


def _assert_cyclic(segments):
    for (s1, _), (s2, _) in zip(segments[:-1], segments[1:]):
        assert s2 == s1 % 4 + 1, f"transition {s1}->{s2} breaks the cycle"
