"""Heart-rate estimation, duration models, and duration-dependent Viterbi.

The decoder fuses the filtered regime probabilities with explicit dwell
duration distributions: a segment of regime j lasting d samples and
ending at time t scores

    best over predecessors i != j of [delta(t - d, i) + log a_ij]
    + log dP_j(d) + sum of log M_j over the segment's samples,

computed in the log domain. The recursion is extended d_max - 1 steps
past the end of the signal so the final (possibly cut-off) segment can
carry its full nominal duration; observation terms beyond the signal end
contribute nothing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import butter, find_peaks, sosfiltfilt

from .errors import EstimationError, NumericalError, ValidationError
from .io import AnnotationTrack

LOG_TINY = np.log(1e-300)


@dataclass(frozen=True)
class HeartRateEstimate:
    hr: float     # beats per minute
    t_sys: float  # systolic interval, seconds

    def __post_init__(self):
        if not 30.0 <= self.hr <= 200.0:
            raise ValidationError(f"heart rate {self.hr:.1f} outside 30..200 BPM")
        if not 0.1 <= self.t_sys <= 60.0 / self.hr + 1e-9:
            raise ValidationError(
                f"t_sys {self.t_sys:.3f}s outside [0.1, {60.0 / self.hr:.3f}]s"
            )


@dataclass(frozen=True)
class DurationModel:
    """Per-regime dwell duration probabilities over 1..d_max samples."""

    dP: np.ndarray  # (K, d_max)
    d_max: int

    def __post_init__(self):
        dP = np.asarray(self.dP, dtype=float)
        object.__setattr__(self, "dP", dP)
        if self.d_max < 1 or dP.shape[1] != self.d_max:
            raise ValidationError(f"d_max {self.d_max} inconsistent with dP {dP.shape}")
        if np.any(dP < 0) or np.any(np.abs(dP.sum(axis=1) - 1.0) > 1e-9):
            raise ValidationError("rows of dP must be probability vectors")


@dataclass(frozen=True)
class DurationStats:
    """Training-side per-regime duration means/SDs, in seconds."""

    mean: np.ndarray  # (4,) indexed S1, Sys, S2, Dia
    sd: np.ndarray    # (4,)


def duration_stats_from_tracks(tracks, fs: float) -> DurationStats:
    n_states = tracks[0].n_states
    per_state = {j: [] for j in range(1, n_states + 1)}
    for tr in tracks:
        for j, lengths in tr.durations_by_state().items():
            per_state[j].extend(lengths / fs)
    missing = [j for j, v in per_state.items() if not v]
    if missing:
        raise ValidationError(f"no duration samples for regime(s) {missing}")
    mean = np.array([np.mean(per_state[j]) for j in sorted(per_state)])
    sd = np.array([np.std(per_state[j]) for j in sorted(per_state)])
    return DurationStats(mean=mean, sd=sd)


def _envelope(signal, fs: float) -> np.ndarray:
    x = np.abs(np.asarray(signal, dtype=float))
    if fs > 44.0:  # low-pass at 20 Hz when the rate allows it
        sos = butter(2, 20.0, btype="low", fs=fs, output="sos")
        x = sosfiltfilt(sos, x)
    return x - np.mean(x)


def estimate_heart_rate(signal, fs: float, min_peak: float = 0.15,
                        min_prominence: float = 0.1) -> HeartRateEstimate:
    """Heart rate and systolic interval from envelope autocorrelation.

    The beat period is the strongest qualifying autocorrelation peak in
    the lag window for 30..200 BPM; the systolic interval is the best
    peak between 20% and 50% of the beat period. A flat or aperiodic
    envelope (no qualifying peak) raises :class:`EstimationError`.
    """
    x = np.asarray(signal, dtype=float)
    if len(x) < 5 * fs:
        raise ValidationError("need at least 5 s of signal for heart-rate estimation")
    env = _envelope(x, fs)
    denom = float(env @ env)
    if denom <= 0:
        raise EstimationError("flat envelope; cannot estimate heart rate")
    acf = np.correlate(env, env, mode="full")[len(env) - 1 :] / denom

    lo = int(np.floor(60.0 / 200.0 * fs))
    hi = int(np.ceil(60.0 / 30.0 * fs))
    hi = min(hi, len(acf) - 1)
    if hi <= lo:
        raise ValidationError("signal too short for the 30..200 BPM search window")
    peaks, props = find_peaks(acf[lo : hi + 1], prominence=min_prominence)
    peaks = peaks[acf[lo + peaks] >= min_peak]
    if peaks.size == 0:
        raise EstimationError("no autocorrelation peak in the 30..200 BPM window")
    lag_star = lo + peaks[np.argmax(acf[lo + peaks])]
    hr = 60.0 * fs / lag_star

    t_lo = max(1, int(np.floor(0.2 * lag_star)))
    t_hi = max(t_lo + 1, int(np.ceil(0.5 * lag_star)))
    window = acf[t_lo : t_hi + 1]
    sys_peaks, _ = find_peaks(window)
    if sys_peaks.size:
        lag_sys = t_lo + sys_peaks[np.argmax(window[sys_peaks])]
    else:
        lag_sys = t_lo + int(np.argmax(window))
    t_sys = float(np.clip(lag_sys / fs, 0.1, 60.0 / hr))
    return HeartRateEstimate(hr=float(hr), t_sys=t_sys)


def build_duration_model(hr_est: HeartRateEstimate, stats: DurationStats,
                         fs: float) -> DurationModel:
    """Heart-rate-adapted dwell distributions (discretized Gaussians).

    S1 and S2 take their training means; the systolic mean is the
    estimated systolic interval minus the S1 mean, and the diastolic mean
    is the remainder of the beat. A derived mean <= 0 is infeasible.
    """
    if stats.mean.shape != (4,) or stats.sd.shape != (4,):
        raise ValidationError("duration stats must cover all 4 regimes")
    d_max = int(round(fs * 60.0 / hr_est.hr))
    means = np.empty(4)
    means[0] = stats.mean[0] * fs
    means[2] = stats.mean[2] * fs
    means[1] = hr_est.t_sys * fs - means[0]
    means[3] = d_max - means[0] - means[1] - means[2]
    sds = stats.sd * fs
    if np.any(means <= 0):
        bad = [j + 1 for j in np.flatnonzero(means <= 0)]
        raise ValidationError(f"infeasible duration mean for regime(s) {bad}")
    d = np.arange(1, d_max + 1, dtype=float)
    dP = np.empty((4, d_max))
    for j in range(4):
        if sds[j] <= 0:
            dP[j] = 0.0
            dP[j, int(np.clip(round(means[j]), 1, d_max)) - 1] = 1.0
            continue
        row = np.exp(-0.5 * ((d - means[j]) / sds[j]) ** 2)
        total = row.sum()
        if total <= 0:
            dP[j] = 0.0
            dP[j, int(np.clip(round(means[j]), 1, d_max)) - 1] = 1.0
        else:
            dP[j] = row / total
    return DurationModel(dP=dP, d_max=d_max)


def cyclic_successor_matrix(K: int) -> np.ndarray:
    """Next-state matrix allowing only the cyclic successor."""
    a = np.zeros((K, K))
    for i in range(K):
        a[i, (i + 1) % K] = 1.0
    return a


def skf_viterbi(M: np.ndarray, dm: DurationModel, a: np.ndarray | None = None,
                pi0: np.ndarray | None = None, return_score: bool = False):
    """Duration-dependent Viterbi decode over filtered regime probabilities.

    ``a`` must forbid self-transitions and allow only the cyclic successor
    (dwell is governed by the duration model, not self-loops). Returns a
    1-based state sequence of the same length as ``M``; with
    ``return_score`` also the decoded path's log score.
    """
    M = np.asarray(M, dtype=float)
    T, K = M.shape
    # a common positive factor per row cancels in the argmax, so rows only
    # need to be nonnegative with positive mass
    if np.any(M < 0) or np.any(M.sum(axis=1) <= 0):
        raise ValidationError("rows of M must be nonnegative with positive sum")
    if dm.dP.shape[0] != K:
        raise ValidationError(f"duration model covers {dm.dP.shape[0]} regimes, M has {K}")
    if a is None:
        a = cyclic_successor_matrix(K)
    a = np.asarray(a, dtype=float)
    if np.any(np.diag(a) != 0):
        raise ValidationError("a must forbid self-transitions")
    for i in range(K):
        allowed = np.flatnonzero(a[i] > 0)
        if not np.array_equal(allowed, [(i + 1) % K]):
            raise ValidationError("a must allow only the cyclic successor")
    if pi0 is None:
        pi0 = np.full(K, 1.0 / K)
    pi0 = np.asarray(pi0, dtype=float)

    d_max = dm.d_max
    T_ext = T + d_max - 1
    logM = np.log(np.maximum(M, 1e-300))
    with np.errstate(divide="ignore"):
        log_dP = np.log(dm.dP)   # (K, d_max)
        log_a = np.log(a)
        log_pi0 = np.log(pi0)
    cum = np.vstack([np.zeros(K), np.cumsum(logM, axis=0)])  # (T+1, K)

    delta = np.full((T_ext, K), -np.inf)
    anchor = np.zeros((T_ext, K), dtype=int)   # segment start time t0 (1-based)
    prev = np.zeros((T_ext, K), dtype=int)     # predecessor regime (0-based)
    # best predecessor score entering regime j from a segment ending at t0
    best_in = np.full((T_ext, K), -np.inf)
    best_arg = np.zeros((T_ext, K), dtype=int)

    delta[0] = log_pi0 + logM[0]
    scores0 = delta[0][:, None] + log_a
    best_in[0] = np.max(scores0, axis=0)
    best_arg[0] = np.argmax(scores0, axis=0)
    # a run cut off by the window start may continue the initial state
    # without paying a transition
    cont = delta[0] > best_in[0]
    best_in[0] = np.where(cont, delta[0], best_in[0])
    best_arg[0] = np.where(cont, np.arange(K), best_arg[0])

    d = np.arange(1, d_max + 1)
    for t in range(2, T_ext + 1):
        r = t - 1
        t0 = np.maximum(t - d, 1)                   # (d_max,)
        valid = t0 <= min(t - 1, T - 1)
        end = min(t, T)
        t0c = np.minimum(t0, T)  # invalid rows are masked below
        # candidate score per (duration, regime)
        cand = best_in[t0c - 1] + log_dP.T + (cum[end] - cum[t0c])
        cand[~valid] = -np.inf
        idx = np.argmax(cand, axis=0)               # smallest d wins ties
        delta[r] = cand[idx, np.arange(K)]
        anchor[r] = t0[idx]
        prev[r] = best_arg[anchor[r] - 1, np.arange(K)]
        scores = delta[r][:, None] + log_a
        best_in[r] = np.max(scores, axis=0)
        best_arg[r] = np.argmax(scores, axis=0)

    tail = delta[T - 1 : T_ext]
    if tail.max() == -np.inf:
        raise NumericalError("duration-Viterbi decoding failed: all paths impossible")
    flat = int(np.argmax(tail))
    t_star = T + flat // K
    state = flat % K

    score = float(delta[t_star - 1, state])
    labels = np.zeros(T, dtype=int)
    t = t_star
    while True:
        if t == 1:
            labels[0] = state + 1
            break
        t0 = int(anchor[t - 1, state])
        labels[t0 : min(t, T)] = state + 1
        nxt = int(prev[t - 1, state])
        t = t0
        state = nxt
    if return_score:
        return labels, score
    return labels
