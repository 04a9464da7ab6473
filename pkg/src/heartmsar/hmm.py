"""Continuous-density HMM classifier with Gaussian-mixture emissions.

Each class (normal / abnormal / x-factor) gets its own left-to-right,
no-skip HMM whose per-state emission densities are diagonal-covariance
Gaussian mixtures. Models are initialized by segmental K-means, trained
with Baum-Welch, and scored with the Viterbi best path.
"""

from __future__ import annotations

import json
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .errors import FormatError, NumericalError, ValidationError
from .io import Recording
from .mfcc import FeatureSequence, MfccConfig, extract_mfcc

VAR_FLOOR = 1e-6
CLASS_PRIORITY = {"abnormal": 3, "xfactor": 2, "normal": 1}
HMM_SCHEMA = "gmm-hmm-bank-v1"


@dataclass
class HmmParams:
    """Left-to-right HMM with per-state diagonal Gaussian mixtures."""

    pi: np.ndarray         # (S,)
    A: np.ndarray          # (S, S), A[i, j] = 0 unless j in {i, i+1}
    weights: np.ndarray    # (S, M)
    means: np.ndarray      # (S, M, D)
    variances: np.ndarray  # (S, M, D)
    training_loglik: tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self):
        self.pi = np.asarray(self.pi, dtype=float)
        self.A = np.asarray(self.A, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.asarray(self.means, dtype=float)
        self.variances = np.asarray(self.variances, dtype=float)
        S = len(self.pi)
        M, D = self.weights.shape[1], self.means.shape[2]
        if self.A.shape != (S, S) or self.weights.shape != (S, M) \
                or self.means.shape != (S, M, D) or self.variances.shape != (S, M, D):
            raise ValidationError("inconsistent parameter shapes")
        if np.any(self.pi < 0) or abs(self.pi.sum() - 1.0) > 1e-12:
            raise ValidationError("pi must be a probability vector")
        if np.any(self.A < 0) or np.any(np.abs(self.A.sum(axis=1) - 1.0) > 1e-12):
            raise ValidationError("rows of A must be probability vectors")
        if np.any(self.A[~self._topology_mask(S)] != 0.0):
            raise ValidationError("A violates the left-to-right no-skip topology")
        if np.any(self.weights < 0) \
                or np.any(np.abs(self.weights.sum(axis=1) - 1.0) > 1e-12):
            raise ValidationError("mixture weights must sum to 1 per state")
        live = self.weights > 0
        if np.any(self.variances[live] <= 0):
            raise ValidationError("live mixture components need positive variances")

    @staticmethod
    def _topology_mask(S: int) -> np.ndarray:
        mask = np.eye(S, dtype=bool)
        mask[np.arange(S - 1), np.arange(1, S)] = True
        return mask

    @property
    def n_states(self) -> int:
        return len(self.pi)

    @property
    def n_mix(self) -> int:
        return self.weights.shape[1]

    @property
    def dim(self) -> int:
        return self.means.shape[2]


@dataclass(frozen=True)
class BeatSegment:
    """One heartbeat (or 1 s window) ready for classification."""

    features: FeatureSequence
    recording_id: str
    label: str | None = None

    def __post_init__(self):
        if self.features.F < 4:
            raise ValidationError(
                f"beat has {self.features.F} frames; a 4-state pass needs >= 4"
            )


@dataclass
class ClassifierBank:
    models: dict[str, HmmParams]
    mfcc_fingerprint: dict | None = None

    def __post_init__(self):
        dims = {m.dim for m in self.models.values()}
        if len(dims) > 1:
            raise ValidationError(f"models disagree on feature dimension: {dims}")


def _component_logpdfs(params: HmmParams, X: np.ndarray) -> np.ndarray:
    """log [w_m N(x; mu_m, diag v_m)] with shape (T, S, M)."""
    diff = X[:, None, None, :] - params.means[None, :, :, :]
    quad = np.sum(diff**2 / params.variances[None], axis=3)
    const = np.sum(np.log(2.0 * np.pi * params.variances), axis=2)  # (S, M)
    with np.errstate(divide="ignore"):
        logw = np.log(params.weights)
    return logw[None] - 0.5 * (const[None] + quad)


def log_emissions(params: HmmParams, X: np.ndarray) -> np.ndarray:
    """Per-frame, per-state emission log-densities, shape (T, S)."""
    return logsumexp(_component_logpdfs(params, X), axis=2)


def forward_loglik(params: HmmParams, features: FeatureSequence) -> float:
    """Total log-likelihood by the forward algorithm."""
    logB = log_emissions(params, features.frames)
    with np.errstate(divide="ignore"):
        log_pi, logA = np.log(params.pi), np.log(params.A)
    alpha = log_pi + logB[0]
    for t in range(1, features.F):
        alpha = logsumexp(alpha[:, None] + logA, axis=0) + logB[t]
    return float(logsumexp(alpha))


def viterbi_loglik(params: HmmParams, features: FeatureSequence
                   ) -> tuple[float, np.ndarray]:
    """Best-path log-likelihood and the 1-based state path."""
    if features.dim != params.dim:
        raise ValidationError(
            f"feature dim {features.dim} does not match model dim {params.dim}"
        )
    T, S = features.F, params.n_states
    if T < S:
        raise ValidationError(f"infeasible path: {T} frames for {S} states")
    logB = log_emissions(params, features.frames)
    with np.errstate(divide="ignore"):
        log_pi, logA = np.log(params.pi), np.log(params.A)
    v = np.empty((T, S))
    ptr = np.zeros((T, S), dtype=int)
    v[0] = log_pi + logB[0]
    for t in range(1, T):
        scores = v[t - 1][:, None] + logA
        ptr[t] = np.argmax(scores, axis=0)
        v[t] = scores[ptr[t], np.arange(S)] + logB[t]
    best = int(np.argmax(v[-1]))
    loglik = float(v[-1, best])
    path = np.empty(T, dtype=int)
    path[-1] = best
    for t in range(T - 1, 0, -1):
        path[t - 1] = ptr[t, path[t]]
    return loglik, path + 1


def _kmeans(X: np.ndarray, k: int, rng: np.random.Generator,
            n_init: int = 4, max_iter: int = 100) -> np.ndarray:
    """Seeded Lloyd's algorithm with k-means++ starts; returns centers."""
    n = len(X)
    best_centers, best_inertia = None, np.inf
    for _ in range(n_init):
        centers = _kmeanspp(X, k, rng)
        for _ in range(max_iter):
            d2 = ((X[:, None, :] - centers[None]) ** 2).sum(axis=2)
            assign = np.argmin(d2, axis=1)
            new_centers = centers.copy()
            for c in range(k):
                members = X[assign == c]
                if len(members):
                    new_centers[c] = members.mean(axis=0)
            if np.allclose(new_centers, centers):
                centers = new_centers
                break
            centers = new_centers
        d2 = ((X[:, None, :] - centers[None]) ** 2).sum(axis=2)
        inertia = d2.min(axis=1).sum()
        if inertia < best_inertia:
            best_inertia, best_centers = inertia, centers
    return best_centers


def _kmeanspp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [X[rng.integers(len(X))]]
    for _ in range(1, k):
        d2 = np.min(
            ((X[:, None, :] - np.array(centers)[None]) ** 2).sum(axis=2), axis=1
        )
        total = d2.sum()
        if total <= 0:
            centers.append(X[rng.integers(len(X))])
            continue
        centers.append(X[rng.choice(len(X), p=d2 / total)])
    return np.array(centers)


def segmental_kmeans_init(dataset, n_states: int = 4, n_mix: int = 16,
                          seed: int = 0) -> HmmParams:
    """Initialize a model by uniform state alignment plus K-means clustering.

    Each sequence is split into ``n_states`` equal blocks; the frames of
    each block are clustered into ``n_mix`` groups. States with fewer
    frames than mixtures get a reduced component count (warned).
    """
    dataset = list(dataset)
    if not dataset:
        raise ValidationError("empty training set")
    for seq in dataset:
        if seq.F < n_states:
            raise ValidationError(
                f"sequence {seq.segment_id!r} has {seq.F} frames < {n_states} states"
            )
    D = dataset[0].dim
    rng = np.random.default_rng(seed)

    state_frames = [[] for _ in range(n_states)]
    A_counts = np.zeros((n_states, n_states))
    for seq in dataset:
        blocks = np.array_split(seq.frames, n_states)
        for s, block in enumerate(blocks):
            state_frames[s].append(block)
            A_counts[s, s] += len(block) - 1
            if s + 1 < n_states:
                A_counts[s, s + 1] += 1
    A = np.zeros_like(A_counts)
    for s in range(n_states):
        total = A_counts[s].sum()
        A[s] = A_counts[s] / total if total > 0 else 0.0
        if total == 0:
            A[s, s] = 1.0

    weights = np.zeros((n_states, n_mix))
    means = np.zeros((n_states, n_mix, D))
    variances = np.ones((n_states, n_mix, D))
    for s in range(n_states):
        X = np.vstack(state_frames[s])
        k = min(n_mix, len(X))
        if k < n_mix:
            warnings.warn(
                f"state {s + 1}: {len(X)} frames < {n_mix} mixtures; reducing to {k}",
                stacklevel=2,
            )
        centers = _kmeans(X, k, rng)
        d2 = ((X[:, None, :] - centers[None]) ** 2).sum(axis=2)
        assign = np.argmin(d2, axis=1)
        for c in range(k):
            members = X[assign == c]
            if len(members) == 0:
                continue
            weights[s, c] = len(members) / len(X)
            means[s, c] = members.mean(axis=0)
            variances[s, c] = np.maximum(members.var(axis=0), VAR_FLOOR)
        if weights[s].sum() <= 0:
            weights[s, 0] = 1.0
            means[s, 0] = X.mean(axis=0)
            variances[s, 0] = np.maximum(X.var(axis=0), VAR_FLOOR)
        weights[s] /= weights[s].sum()

    pi = np.zeros(n_states)
    pi[0] = 1.0
    return HmmParams(pi=pi, A=A, weights=weights, means=means, variances=variances)


def baum_welch_train(init: HmmParams, dataset, max_iter: int = 10,
                     tol: float = 1e-4) -> HmmParams:
    """Expectation-maximization re-estimation over a set of sequences.

    Stops at ``max_iter`` or when the relative log-likelihood improvement
    falls below ``tol``. The topology's structural zeros are preserved.
    The returned parameters carry the per-iteration total log-likelihoods
    in ``training_loglik``.
    """
    dataset = list(dataset)
    if not dataset:
        raise ValidationError("empty training set")
    params = init
    if max_iter == 0:
        return params
    S, M, D = params.n_states, params.n_mix, params.dim
    topo = HmmParams._topology_mask(S)
    history: list[float] = []

    for it in range(max_iter):
        with np.errstate(divide="ignore"):
            logA = np.log(params.A)
        pi_acc = np.zeros(S)
        A_acc = np.zeros((S, S))
        Rw = np.zeros((S, M))
        Rx = np.zeros((S, M, D))
        Rxx = np.zeros((S, M, D))
        total_ll = 0.0

        for seq in dataset:
            X = seq.frames
            T = seq.F
            logcomp = _component_logpdfs(params, X)
            logB = logsumexp(logcomp, axis=2)
            with np.errstate(divide="ignore"):
                log_pi = np.log(params.pi)
            alpha = np.empty((T, S))
            alpha[0] = log_pi + logB[0]
            for t in range(1, T):
                alpha[t] = logsumexp(alpha[t - 1][:, None] + logA, axis=0) + logB[t]
            ll = logsumexp(alpha[-1])
            if not np.isfinite(ll):
                raise NumericalError(f"training diverged at iteration {it + 1}")
            beta = np.zeros((T, S))
            for t in range(T - 2, -1, -1):
                beta[t] = logsumexp(logA + (logB[t + 1] + beta[t + 1])[None, :], axis=1)
            gamma = np.exp(alpha + beta - ll)
            total_ll += float(ll)

            pi_acc += gamma[0]
            for t in range(T - 1):
                A_acc += np.exp(
                    alpha[t][:, None] + logA + (logB[t + 1] + beta[t + 1])[None, :] - ll
                )
            with np.errstate(invalid="ignore"):
                comp_post = np.exp(logcomp - logB[:, :, None])
            comp_post = np.where(gamma[:, :, None] > 0, comp_post, 0.0)
            r = comp_post * gamma[:, :, None]
            Rw += r.sum(axis=0)
            Rx += np.einsum("tsm,td->smd", r, X)
            Rxx += np.einsum("tsm,td->smd", r, X**2)

        history.append(total_ll)
        if len(history) > 1:
            prev = history[-2]
            if total_ll - prev < tol * abs(prev):
                break

        new_pi = pi_acc / pi_acc.sum()
        new_A = np.zeros((S, S))
        A_acc[~topo] = 0.0
        for s in range(S):
            row = A_acc[s].sum()
            new_A[s] = A_acc[s] / row if row > 0 else params.A[s]
        new_w = params.weights.copy()
        new_mu = params.means.copy()
        new_var = params.variances.copy()
        for s in range(S):
            occ = Rw[s].sum()
            if occ <= 0:
                warnings.warn(f"state {s + 1} unoccupied; keeping previous mixtures",
                              stacklevel=2)
                continue
            new_w[s] = Rw[s] / occ
            for m in range(M):
                if Rw[s, m] <= 1e-12:
                    continue
                new_mu[s, m] = Rx[s, m] / Rw[s, m]
                new_var[s, m] = np.maximum(
                    Rxx[s, m] / Rw[s, m] - new_mu[s, m] ** 2, VAR_FLOOR
                )
        params = HmmParams(
            pi=new_pi, A=new_A, weights=new_w, means=new_mu, variances=new_var,
        )

    return HmmParams(
        pi=params.pi, A=params.A, weights=params.weights, means=params.means,
        variances=params.variances, training_loglik=tuple(history),
    )


def classify_beat(bank: ClassifierBank, features: FeatureSequence,
                  use_xfactor: bool = False) -> str:
    """Label by the highest length-normalized Viterbi score.

    Exact ties break abnormal > xfactor > normal.
    """
    enabled = ["normal", "abnormal"] + (["xfactor"] if use_xfactor else [])
    missing = [c for c in enabled if c not in bank.models]
    if missing:
        raise ValidationError(f"classifier bank lacks model(s): {missing}")
    scored = []
    for label in enabled:
        try:
            ll, _ = viterbi_loglik(bank.models[label], features)
        except ValidationError:
            continue
        scored.append((ll / features.F, CLASS_PRIORITY[label], label))
    if not scored:
        raise ValidationError("beat unclassifiable: no model admits a valid path")
    return max(scored)[2]


def classify_recording(beat_labels) -> str:
    """Plurality vote over beat labels; ties break abnormal > xfactor > normal."""
    labels = list(beat_labels)
    if not labels:
        raise ValidationError("no beat labels to vote on")
    counts = Counter(labels)
    return max(counts, key=lambda lab: (counts[lab], CLASS_PRIORITY[lab]))


def window_xfactor(rec: Recording, cfg: MfccConfig | None = None,
                   label: str | None = None) -> list[BeatSegment]:
    """Slice a recording into non-overlapping 1 s pseudo-beats."""
    cfg = cfg or MfccConfig(fs=rec.sample_rate)
    n_win = len(rec.samples) // rec.sample_rate
    if n_win < 1:
        raise ValidationError(
            f"recording {rec.id!r} shorter than 1 s ({rec.duration:.2f} s)"
        )
    segments = []
    for i in range(n_win):
        chunk = rec.samples[i * rec.sample_rate : (i + 1) * rec.sample_rate]
        feats = extract_mfcc(chunk, cfg, segment_id=f"{rec.id}#w{i}")
        segments.append(BeatSegment(feats, recording_id=rec.id, label=label))
    return segments


def save_bank(bank: ClassifierBank, path) -> None:
    doc = {"schema": HMM_SCHEMA, "mfcc": bank.mfcc_fingerprint, "models": {}}
    for label, m in bank.models.items():
        doc["models"][label] = {
            "pi": m.pi.tolist(), "A": m.A.tolist(),
            "weights": m.weights.tolist(), "means": m.means.tolist(),
            "variances": m.variances.tolist(),
        }
    Path(path).write_text(json.dumps(doc, indent=2))


def load_bank(path) -> ClassifierBank:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema") != HMM_SCHEMA:
        raise FormatError(f"{path}: unknown model schema {doc.get('schema')!r}")
    models = {
        label: HmmParams(
            pi=np.array(m["pi"]), A=np.array(m["A"]),
            weights=np.array(m["weights"]), means=np.array(m["means"]),
            variances=np.array(m["variances"]),
        )
        for label, m in doc["models"].items()
    }
    return ClassifierBank(models=models, mfcc_fingerprint=doc.get("mfcc"))
