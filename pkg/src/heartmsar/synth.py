"""Synthetic regime-switching AR signal generation with known labels."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .io import (AnnotationTrack, DatasetManifest, ManifestEntry, Recording,
                 save_annotations, save_manifest, save_recording)
from .msar import MsarParams, to_state_space


@dataclass(frozen=True)
class SynthSpec:
    """Generation recipe: model parameters plus a segment plan.

    ``plan`` is a sequence of (regime, duration-in-samples) pairs; when
    omitted, a stochastic per-sample plan of ``length`` samples is drawn
    from the transition matrix starting in regime 1.
    """

    params: MsarParams
    plan: tuple[tuple[int, int], ...] | None = None
    length: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.plan is None and self.length is None:
            raise ValidationError("need either a plan or a length")
        if self.plan is not None:
            for regime, dur in self.plan:
                if dur < 1:
                    raise ValidationError(f"plan duration {dur} < 1")
                if not 1 <= regime <= self.params.K:
                    raise ValidationError(f"plan regime {regime} outside 1..{self.params.K}")


def generate_msar(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray]:
    """Simulate the switching AR process and its noisy observation.

    Returns (signal, states) of equal length. Lag values carry across
    regime switches (continuous handoff), and the generator is fully
    determined by ``spec.seed``.
    """
    params = spec.params
    rng = np.random.default_rng(spec.seed)
    ssv = to_state_space(params)
    radii = np.array([np.abs(np.linalg.eigvals(ssv.A[j])).max() for j in range(params.K)])
    if np.any(radii >= 1.0):
        unstable = [j + 1 for j in np.flatnonzero(radii >= 1.0)]
        warnings.warn(f"unstable AR dynamics in regime(s) {unstable}", stacklevel=2)

    states = _expand_plan(spec, rng)
    T = len(states)
    P = params.P
    eta = rng.standard_normal(T)
    eps = rng.standard_normal(T)
    x = np.zeros(T + P)  # P leading zeros as pre-signal history
    for t in range(T):
        j = states[t] - 1
        window = x[t : t + P][::-1]  # x_{t-1}, ..., x_{t-P}
        x[t + P] = params.phi[j] @ window + np.sqrt(params.q[j]) * eta[t]
    signal = x[P:] + np.sqrt(params.R[states - 1]) * eps
    return signal, states


def _expand_plan(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.plan is not None:
        states = np.concatenate(
            [np.full(dur, regime, dtype=int) for regime, dur in spec.plan]
        )
        if spec.length is not None:
            states = states[: spec.length]
        return states
    K = spec.params.K
    Z = spec.params.Z
    states = np.empty(spec.length, dtype=int)
    states[0] = 1
    for t in range(1, spec.length):
        states[t] = rng.choice(K, p=Z[states[t - 1] - 1]) + 1
    return states


def cyclic_plan(durations, n_cycles: int, jitter: float = 0.0,
                rng: np.random.Generator | None = None) -> tuple[tuple[int, int], ...]:
    """Repeat the per-regime duration template for ``n_cycles`` cycles.

    ``durations`` maps regime -> nominal duration in samples; ``jitter``
    scales a uniform +/- perturbation applied per segment.
    """
    rng = rng or np.random.default_rng(0)
    regimes = sorted(durations)
    plan = []
    for _ in range(n_cycles):
        for regime in regimes:
            nominal = durations[regime]
            if jitter > 0:
                dur = int(round(nominal * (1 + jitter * rng.uniform(-1, 1))))
            else:
                dur = int(nominal)
            plan.append((regime, max(dur, 1)))
    return tuple(plan)


def plan_to_track(plan, n_states: int = 4) -> AnnotationTrack:
    """Turn a segment plan into an annotation track (plan must be cyclic)."""
    durations = np.array([d for _, d in plan], dtype=int)
    ends = np.cumsum(durations)
    starts = np.concatenate([[0], ends[:-1]])
    states = np.array([r for r, _ in plan], dtype=int)
    return AnnotationTrack(starts, ends, states, n_states=n_states)


def resonator_coefficients(freq: float, radius: float, fs: float) -> np.ndarray:
    """AR(2) coefficients of a damped resonance at ``freq`` Hz."""
    theta = 2.0 * np.pi * freq / fs
    return np.array([2.0 * radius * np.cos(theta), -(radius**2)])


def demo_params(fs: float = 1000.0) -> MsarParams:
    """Four well-separated regimes shaped like a heart cycle.

    S1 and S2 are loud low/mid-frequency resonances; systole and diastole
    are quiet near-white stretches of differing level.
    """
    phi = np.zeros((4, 2))
    phi[0] = resonator_coefficients(30.0, 0.96, fs)   # S1
    phi[2] = resonator_coefficients(65.0, 0.96, fs)   # S2
    q = np.array([1.0, 0.05, 1.0, 0.02])
    R = np.full(4, 0.01)
    durs = demo_durations(fs)
    Z = np.zeros((4, 4))
    for i in range(4):
        stay = 1.0 - 1.0 / durs[i + 1]
        Z[i, i] = stay
        Z[i, (i + 1) % 4] = 1.0 - stay
    return MsarParams(phi=phi, q=q, R=R, Z=Z)


def demo_durations(fs: float = 1000.0) -> dict[int, int]:
    """Nominal per-regime durations in samples (one cycle per second)."""
    seconds = {1: 0.12, 2: 0.20, 3: 0.10, 4: 0.58}
    return {j: max(2, int(round(sec * fs))) for j, sec in seconds.items()}


def write_synthetic_dataset(out_dir, fs: int = 1000, n_train: int = 4,
                            n_test: int = 4, n_cycles: int = 8,
                            seed: int = 0) -> Path:
    """Emit a self-contained synthetic dataset (recordings, annotations,
    manifest) that flows through the full pipeline unchanged."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    params = demo_params(fs)
    durs = demo_durations(fs)
    entries = []
    for i in range(n_train + n_test):
        split = "train" if i < n_train else "test"
        rng = np.random.default_rng(seed + 1000 + i)
        plan = cyclic_plan(durs, n_cycles, jitter=0.08, rng=rng)
        spec = SynthSpec(params=params, plan=plan, seed=seed + i)
        signal, _states = generate_msar(spec)
        rec_name = f"synth_{split}_{i:03d}.csv"
        ann_name = f"synth_{split}_{i:03d}.ann.csv"
        save_recording(Recording(signal, fs, rec_name), out_dir / rec_name,
                       fmt="csv-float")
        save_annotations(plan_to_track(plan), out_dir / ann_name)
        entries.append(ManifestEntry(rec_name, ann_name, "normal", split))
    manifest_path = out_dir / "manifest.csv"
    save_manifest(DatasetManifest(tuple(entries), out_dir), manifest_path)
    return manifest_path
