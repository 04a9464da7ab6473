"""Regime-switching AR model: parameters, companion-form view, estimation.

Each of the K regimes carries an AR(P) process with its own coefficient
vector, innovation variance and observation-noise variance; a Markov
chain with a cyclic left-to-right topology selects the active regime.
Parameters are estimated from labeled data by clustering samples per
regime, least-squares AR fits, and transition counting.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, NumericalError, ValidationError
from .io import AnnotationTrack, Recording

MODEL_SCHEMA = "msar-params-v1"


def cyclic_mask(K: int) -> np.ndarray:
    """Allowed transitions: stay, or advance to the cyclic successor."""
    mask = np.eye(K, dtype=bool)
    for i in range(K):
        mask[i, (i + 1) % K] = True
    return mask


@dataclass(frozen=True)
class MsarParams:
    """Per-regime AR coefficients and noise variances plus the switch matrix.

    phi has shape (K, P); q and R have shape (K,); Z is the K x K
    transition matrix constrained to the cyclic left-to-right topology.
    """

    phi: np.ndarray
    q: np.ndarray
    R: np.ndarray
    Z: np.ndarray

    def __post_init__(self):
        phi = np.atleast_2d(np.asarray(self.phi, dtype=float))
        q = np.asarray(self.q, dtype=float)
        R = np.asarray(self.R, dtype=float)
        Z = np.asarray(self.Z, dtype=float)
        for name, val in (("phi", phi), ("q", q), ("R", R), ("Z", Z)):
            object.__setattr__(self, name, val)
        K, P = phi.shape
        if q.shape != (K,) or R.shape != (K,) or Z.shape != (K, K):
            raise ValidationError(
                f"shape mismatch: phi {phi.shape}, q {q.shape}, R {R.shape}, Z {Z.shape}"
            )
        if np.any(q < 0):
            raise ValidationError("state-noise variances must be >= 0")
        if np.any(R <= 0):
            raise ValidationError("observation-noise variances must be > 0")
        if np.any(Z < 0) or np.any(np.abs(Z.sum(axis=1) - 1.0) > 1e-12):
            raise ValidationError("rows of Z must be probability vectors")
        if np.any(Z[~cyclic_mask(K)] != 0.0):
            raise ValidationError("Z violates the cyclic left-to-right topology")

    @property
    def K(self) -> int:
        return self.phi.shape[0]

    @property
    def P(self) -> int:
        return self.phi.shape[1]


@dataclass(frozen=True)
class StateSpaceView:
    """Companion-form matrices for the switching linear-Gaussian model.

    A[j] is the P x P companion matrix of regime j (AR coefficients on
    the first row, ones on the subdiagonal), C = [1, 0, ..., 0], and
    Q[j] has the innovation variance at (0, 0) only.
    """

    A: np.ndarray  # (K, P, P)
    C: np.ndarray  # (P,)
    Q: np.ndarray  # (K, P, P)
    R: np.ndarray  # (K,)

    @property
    def K(self) -> int:
        return self.A.shape[0]

    @property
    def P(self) -> int:
        return self.A.shape[1]


def to_state_space(params: MsarParams) -> StateSpaceView:
    K, P = params.K, params.P
    A = np.zeros((K, P, P))
    Q = np.zeros((K, P, P))
    for j in range(K):
        A[j, 0, :] = params.phi[j]
        if P > 1:
            A[j, 1:, :-1] = np.eye(P - 1)
        Q[j, 0, 0] = params.q[j]
    C = np.zeros(P)
    C[0] = 1.0
    return StateSpaceView(A=A, C=C, Q=Q, R=params.R.copy())


@dataclass(frozen=True)
class ClusteredSeries:
    """Per-regime concatenations of samples, in temporal order."""

    series: tuple[np.ndarray, ...]

    @property
    def lengths(self) -> np.ndarray:
        return np.array([len(s) for s in self.series])


def dynamic_cluster(rec: Recording, track: AnnotationTrack) -> ClusteredSeries:
    """Group samples by their annotated regime."""
    if track.end > len(rec.samples):
        raise ValidationError(
            f"annotation ends at {track.end} but recording has {len(rec.samples)} samples"
        )
    return cluster_by_labels(rec.samples[: track.end], track.to_labels(), track.n_states)


def cluster_by_labels(samples, labels, K: int) -> ClusteredSeries:
    samples = np.asarray(samples, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if len(samples) != len(labels):
        raise ValidationError("samples and labels differ in length")
    return ClusteredSeries(tuple(samples[labels == j] for j in range(1, K + 1)))


def fit_ar_least_squares(series, P: int) -> tuple[np.ndarray, float]:
    """Least-squares AR(P) fit.

    Returns the coefficient vector (lag 1 first) and the innovation
    variance, computed as the sum of squared one-step residuals divided
    by the series length.
    """
    y = np.asarray(series, dtype=float)
    n = len(y)
    if n <= 10 * P:
        raise ValidationError(f"series of {n} samples too short for AR({P}) fit")
    if np.std(y) == 0.0:
        raise ValidationError("zero-variance series")
    X = np.column_stack([y[P - 1 - k : n - 1 - k] for k in range(P)])
    target = y[P:]
    phi, _, rank, _ = np.linalg.lstsq(X, target, rcond=None)
    if rank < P:
        raise NumericalError(f"rank-deficient normal equations (rank {rank} < {P})")
    resid = target - X @ phi
    q = float(np.sum(resid**2) / n)
    return phi, q


def estimate_obs_noise(signal, P: int, window: int) -> float:
    """Mean per-window AR(P) residual variance over tiled windows."""
    x = np.asarray(signal, dtype=float)
    if window <= 10 * P:
        raise ValidationError(f"window of {window} samples too short for AR({P})")
    if len(x) < window:
        raise ValidationError("signal shorter than one window")
    variances = []
    for s in range(0, len(x) - window + 1, window):
        seg = x[s : s + window]
        if np.std(seg) == 0.0:
            continue  # flat windows carry no noise information
        _, q = fit_ar_least_squares(seg, P)
        variances.append(q)
    if not variances:
        raise ValidationError("no usable windows (all flat)")
    return float(np.mean(variances))


def _count_transitions(label_seqs, K: int) -> np.ndarray:
    counts = np.zeros((K, K))
    for labels in label_seqs:
        labels = np.asarray(labels, dtype=int)
        np.add.at(counts, (labels[:-1] - 1, labels[1:] - 1), 1)
        # close the cycle so the final regime also has an exit count
        counts[labels[-1] - 1, labels[0] - 1] += 1
    return counts


def init_transition_matrix(tracks, fs: float | None = None) -> np.ndarray:
    """Transition probabilities from per-sample label frequencies.

    ``fs`` records the rate the tracks are expressed at; the counting
    itself is rate-agnostic. Forbidden transitions are forced to zero and
    rows renormalized.
    """
    if not tracks:
        raise ValidationError("no annotation tracks")
    K = tracks[0].n_states
    present = set()
    for tr in tracks:
        present.update(int(s) for s in tr.states)
    missing = sorted(set(range(1, K + 1)) - present)
    if missing:
        raise ValidationError(f"regime(s) {missing} absent from all tracks")
    counts = _count_transitions([tr.to_labels() for tr in tracks], K)
    counts[~cyclic_mask(K)] = 0.0
    Z = np.zeros((K, K))
    for i in range(K):
        total = counts[i].sum()
        if total > 0:
            Z[i] = counts[i] / total
        else:
            Z[i, i] = Z[i, (i + 1) % K] = 0.5
    return Z


def transition_matrix_from_labels(label_seqs, K: int) -> np.ndarray:
    """As :func:`init_transition_matrix` but from raw label sequences."""
    counts = _count_transitions(label_seqs, K)
    counts[~cyclic_mask(K)] = 0.0
    Z = np.zeros((K, K))
    for i in range(K):
        total = counts[i].sum()
        Z[i] = counts[i] / total if total > 0 else 0.0
        if total == 0:
            Z[i, i] = Z[i, (i + 1) % K] = 0.5
    return Z


def pool_parameters(per_recording, weights=None) -> MsarParams:
    """Elementwise average of per-recording parameter estimates.

    ``weights`` enables a duration-weighted mean; the default is the
    unweighted average. Z rows are renormalized after averaging.
    """
    items = list(per_recording)
    if not items:
        raise ValidationError("empty parameter list")
    K, P = items[0].K, items[0].P
    for p in items[1:]:
        if p.K != K or p.P != P:
            raise ValidationError(
                f"mismatched shapes: ({p.K},{p.P}) vs ({K},{P})"
            )
    if weights is None:
        w = np.full(len(items), 1.0 / len(items))
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (len(items),) or np.any(w < 0) or w.sum() <= 0:
            raise ValidationError("weights must be nonnegative and nonempty")
        w = w / w.sum()
    phi = sum(wi * p.phi for wi, p in zip(w, items))
    q = sum(wi * p.q for wi, p in zip(w, items))
    R = sum(wi * p.R for wi, p in zip(w, items))
    Z = sum(wi * p.Z for wi, p in zip(w, items))
    Z = Z / Z.sum(axis=1, keepdims=True)
    return MsarParams(phi=phi, q=q, R=R, Z=Z)


def save_msar(params: MsarParams, path, extra: dict | None = None) -> None:
    """Serialize parameters to JSON (floats keep full double precision)."""
    doc = {
        "schema": MODEL_SCHEMA,
        "K": params.K,
        "P": params.P,
        "phi": params.phi.tolist(),
        "q": params.q.tolist(),
        "R": params.R.tolist(),
        "Z": params.Z.tolist(),
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2))


def load_msar(path) -> MsarParams:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema") != MODEL_SCHEMA:
        raise FormatError(f"{path}: unknown model schema {doc.get('schema')!r}")
    params = MsarParams(
        phi=np.array(doc["phi"]), q=np.array(doc["q"]),
        R=np.array(doc["R"]), Z=np.array(doc["Z"]),
    )
    if params.K != doc["K"] or params.P != doc["P"]:
        raise FormatError(f"{path}: K/P fields disagree with array shapes")
    return params
