import numpy as np
import pytest

from heartmsar import (MsarParams, SynthSpec, cyclic_plan, demo_durations,
                       demo_params, generate_msar, plan_to_track)
from heartmsar.errors import ValidationError


def _two_regime(q=(0.01, 0.01), R=(1e-4, 1e-4)):
    return MsarParams(
        phi=[[0.95], [-0.95]], q=list(q), R=list(R),
        Z=[[0.99, 0.01], [0.01, 0.99]],
    )


def test_zero_noise_zero_init_is_zero():
    params = MsarParams(
        phi=[[0.5], [0.2]], q=[0.0, 0.0], R=[1e-12, 1e-12],
        Z=[[0.9, 0.1], [0.1, 0.9]],
    )
    signal, states = generate_msar(
        SynthSpec(params=params, plan=((1, 50), (2, 50)), seed=0)
    )
    # R is vanishingly small; the latent process itself is exactly zero
    assert np.max(np.abs(signal)) < 1e-5
    assert len(signal) == len(states) == 100


def test_same_seed_identical():
    spec = SynthSpec(params=_two_regime(), plan=((1, 100), (2, 100)), seed=9)
    s1, st1 = generate_msar(spec)
    s2, st2 = generate_msar(spec)
    np.testing.assert_array_equal(s1, s2)
    np.testing.assert_array_equal(st1, st2)


def test_lag1_autocorrelation_sign_follows_regime():
    params = _two_regime(q=(0.05, 0.05), R=(1e-6, 1e-6))
    plan = tuple((1 + (i % 2), 150) for i in range(40))
    signal, states = generate_msar(SynthSpec(params=params, plan=plan, seed=21))
    hits = 0
    for i in range(40):
        seg = signal[i * 150 : (i + 1) * 150]
        r1 = np.corrcoef(seg[:-1], seg[1:])[0, 1]
        expected = 1.0 if (i % 2) == 0 else -1.0
        hits += (np.sign(r1) == expected)
    assert hits >= 38  # >= 95% of segments


def test_output_lengths_match():
    signal, states = generate_msar(
        SynthSpec(params=_two_regime(), length=500, seed=4)
    )
    assert len(signal) == 500 and len(states) == 500


def test_unstable_ar_warns():
    params = MsarParams(
        phi=[[1.01], [0.5]], q=[0.01, 0.01], R=[0.01, 0.01],
        Z=[[0.9, 0.1], [0.1, 0.9]],
    )
    with pytest.warns(UserWarning, match="unstable"):
        generate_msar(SynthSpec(params=params, plan=((1, 10), (2, 10)), seed=0))


def test_plan_validation():
    with pytest.raises(ValidationError, match="duration"):
        SynthSpec(params=_two_regime(), plan=((1, 0),), seed=0)
    with pytest.raises(ValidationError, match="regime"):
        SynthSpec(params=_two_regime(), plan=((7, 10),), seed=0)


def test_cyclic_plan_and_track():
    durs = demo_durations(1000)
    plan = cyclic_plan(durs, 3)
    track = plan_to_track(plan)
    assert len(track) == 12
    assert list(track.states[:4]) == [1, 2, 3, 4]
    assert track.end == 3 * sum(durs.values())


def test_demo_params_valid():
    p = demo_params(1000)
    assert p.K == 4 and p.P == 2
    np.testing.assert_allclose(p.Z.sum(axis=1), 1.0, atol=1e-12)
