"""Switching Kalman filter and smoother over the companion-form model.

At each time step the filter runs a K x K bank of Kalman updates (one per
previous-regime/current-regime pair), reweights the pairs by likelihood,
transition probability and the previous regime posterior, marginalizes to
per-regime probabilities, and collapses each regime's mixture back to a
single Gaussian by moment matching. The smoother runs the analogous
backward pass over regime pairs. All probability bookkeeping is done in
the log domain with max-subtraction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ValidationError
from .msar import StateSpaceView

log = logging.getLogger(__name__)

COV_EIG_FLOOR = 1e-12
LOG_ZERO = -np.inf


@dataclass
class GaussianBelief:
    """Mean and covariance of a latent-state density."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.cov = np.asarray(self.cov, dtype=float)
        if self.mean.ndim != 1 or self.cov.shape != (len(self.mean), len(self.mean)):
            raise ValidationError(
                f"belief shape mismatch: mean {self.mean.shape}, cov {self.cov.shape}"
            )


@dataclass
class FilteredTrajectory:
    """Per-time collapsed beliefs, regime probabilities and log-likelihood."""

    means: np.ndarray  # (T, K, P)
    covs: np.ndarray   # (T, K, P, P)
    M: np.ndarray      # (T, K) filtered regime probabilities
    loglik: float
    degenerate_steps: tuple[int, ...] = field(default_factory=tuple)

    @property
    def T(self) -> int:
        return self.M.shape[0]

    @property
    def K(self) -> int:
        return self.M.shape[1]


@dataclass
class SmoothedTrajectory:
    means: np.ndarray
    covs: np.ndarray
    M: np.ndarray

    @property
    def T(self) -> int:
        return self.M.shape[0]

    @property
    def K(self) -> int:
        return self.M.shape[1]


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def floor_spd(P: np.ndarray, floor: float = COV_EIG_FLOOR) -> np.ndarray:
    """Symmetrize and clip eigenvalues from below."""
    P = symmetrize(np.asarray(P, dtype=float))
    vals, vecs = np.linalg.eigh(P)
    if vals[0] >= floor:
        return P
    vals = np.maximum(vals, floor)
    return symmetrize((vecs * vals) @ vecs.T)


def kalman_filter_step(prior: GaussianBelief, y: float, A: np.ndarray,
                       C: np.ndarray, Q: np.ndarray, R: float
                       ) -> tuple[GaussianBelief, float]:
    """One predict/update cycle for a scalar observation.

    Returns the posterior belief and the log-density of the innovation.
    The covariance update uses the Joseph form and is re-symmetrized.
    """
    if not (np.all(np.isfinite(prior.mean)) and np.all(np.isfinite(prior.cov))
            and np.isfinite(y)):
        raise ValidationError("non-finite filter inputs")
    if R <= 0:
        raise ValidationError(f"observation noise must be positive, got {R}")
    m_pred = A @ prior.mean
    P_pred = A @ prior.cov @ A.T + Q
    innov = y - C @ m_pred
    S = float(C @ P_pred @ C + R)
    if S <= 0:
        raise NumericalError(f"non-positive innovation variance {S}")
    gain = (P_pred @ C) / S
    m_post = m_pred + gain * innov
    IKC = np.eye(len(m_pred)) - np.outer(gain, C)
    P_post = symmetrize(IKC @ P_pred @ IKC.T + R * np.outer(gain, gain))
    loglik = -0.5 * (np.log(2.0 * np.pi * S) + innov**2 / S)
    return GaussianBelief(m_post, P_post), float(loglik)


def collapse(means, covs, weights) -> GaussianBelief:
    """Moment-match a Gaussian mixture to a single Gaussian."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValidationError(f"weights must be a probability vector (sum {w.sum()})")
    means = np.asarray(means, dtype=float)
    covs = np.asarray(covs, dtype=float)
    mean = np.zeros_like(means[0])
    for wi, mi in zip(w, means):
        if wi > 0:  # skip so zero-weight components can hold junk
            mean += wi * mi
    cov = np.zeros_like(covs[0])
    for wi, mi, Pi in zip(w, means, covs):
        if wi > 0:
            d = mi - mean
            cov += wi * (Pi + np.outer(d, d))
    return GaussianBelief(mean, floor_spd(cov))


def default_initial_belief(y, P: int, init_window: int = 1000) -> GaussianBelief:
    """Zero mean; covariance scaled by the early-signal sample variance."""
    y = np.asarray(y, dtype=float)
    with np.errstate(over="ignore"):
        var = float(np.var(y[: max(2, min(len(y), init_window))]))
    if not np.isfinite(var) or var <= 0:
        var = 1.0
    return GaussianBelief(np.zeros(P), var * np.eye(P))


def skf(y, ssv: StateSpaceView, Z: np.ndarray, M0=None,
        init: GaussianBelief | None = None, init_window: int = 1000,
        on_degenerate: str = "recover") -> FilteredTrajectory:
    """Forward switching Kalman filter.

    ``M0`` defaults to [1, 0, ..., 0]. When every pair weight at some step
    collapses to log-zero (e.g. an overflowing innovation), the filter
    either resets that step to the transition-propagated prior and keeps
    going (``on_degenerate="recover"``, logged) or raises
    (``on_degenerate="raise"``).
    """
    y = np.asarray(y, dtype=float)
    T = len(y)
    K, P = ssv.K, ssv.P
    Z = np.asarray(Z, dtype=float)
    if Z.shape != (K, K):
        raise ValidationError(f"Z must be {K}x{K}, got {Z.shape}")
    if M0 is None:
        M0 = np.zeros(K)
        M0[0] = 1.0
    M0 = np.asarray(M0, dtype=float)
    if M0.shape != (K,) or np.any(M0 < 0) or abs(M0.sum() - 1.0) > 1e-9:
        raise ValidationError("M0 must be a probability vector")
    if on_degenerate not in ("recover", "raise"):
        raise ValidationError(f"unknown degenerate-weight policy {on_degenerate!r}")

    init = init or default_initial_belief(y, P, init_window)
    with np.errstate(divide="ignore"):
        logZ = np.log(Z)

    means = np.empty((T, K, P))
    covs = np.empty((T, K, P, P))
    M = np.empty((T, K))
    prior_means = np.tile(init.mean, (K, 1))
    prior_covs = np.tile(floor_spd(init.cov), (K, 1, 1))
    with np.errstate(divide="ignore"):
        logM_prev = np.log(M0)
    total_loglik = 0.0
    degenerate = []

    pair_means = np.empty((K, K, P))      # [i, j]
    pair_covs = np.empty((K, K, P, P))
    logw = np.empty((K, K))

    for t in range(T):
        logw.fill(LOG_ZERO)
        with np.errstate(over="ignore", invalid="ignore"):
            for j in range(K):
                for i in range(K):
                    if logZ[i, j] == LOG_ZERO or logM_prev[i] == LOG_ZERO:
                        pair_means[i, j] = prior_means[i]
                        pair_covs[i, j] = prior_covs[i]
                        continue
                    post, ll = kalman_filter_step(
                        GaussianBelief(prior_means[i], prior_covs[i]),
                        y[t], ssv.A[j], ssv.C, ssv.Q[j], ssv.R[j],
                    )
                    pair_means[i, j] = post.mean
                    pair_covs[i, j] = post.cov
                    if np.isnan(ll):
                        ll = LOG_ZERO
                    logw[i, j] = ll + logZ[i, j] + logM_prev[i]

        mx = logw.max()
        if mx == LOG_ZERO or np.isnan(mx):
            if on_degenerate == "raise":
                raise NumericalError(f"all pair weights underflowed at t={t}")
            degenerate.append(t)
            log.warning("skf: degenerate weights at t=%d; resetting to prior", t)
            with np.errstate(divide="ignore"):
                logw = logZ + logM_prev[:, None]
            mx = logw.max()
            if mx == LOG_ZERO:
                raise NumericalError(f"prior propagation impossible at t={t}")
            # replace measurement-corrupted pair densities by predictions
            for j in range(K):
                for i in range(K):
                    pair_means[i, j] = ssv.A[j] @ prior_means[i]
                    pair_covs[i, j] = ssv.A[j] @ prior_covs[i] @ ssv.A[j].T + ssv.Q[j]
        else:
            total_loglik += mx + np.log(np.exp(logw - mx).sum())

        w = np.exp(logw - mx)
        w /= w.sum()
        Mj = w.sum(axis=0)
        M[t] = Mj
        for j in range(K):
            if Mj[j] > 0:
                weights = w[:, j] / Mj[j]
            else:
                weights = np.full(K, 1.0 / K)  # content is irrelevant at zero mass
            belief = collapse(pair_means[:, j], pair_covs[:, j], weights)
            means[t, j] = belief.mean
            covs[t, j] = belief.cov
        prior_means = means[t].copy()
        prior_covs = covs[t].copy()
        with np.errstate(divide="ignore"):
            logM_prev = np.log(M[t])

    return FilteredTrajectory(
        means=means, covs=covs, M=M, loglik=float(total_loglik),
        degenerate_steps=tuple(degenerate),
    )


def sks(fwd: FilteredTrajectory, ssv: StateSpaceView, Z: np.ndarray) -> SmoothedTrajectory:
    """Backward switching Kalman smoother over the filtered trajectory.

    For each regime pair (j, k) an RTS step combines the filtered density
    of regime j at t with the smoothed density of regime k at t+1; pair
    probabilities reweight and collapse the results per regime.
    """
    T, K, P = fwd.T, fwd.K, fwd.means.shape[2]
    Z = np.asarray(Z, dtype=float)
    means = np.empty_like(fwd.means)
    covs = np.empty_like(fwd.covs)
    M = np.empty_like(fwd.M)
    means[T - 1] = fwd.means[T - 1]
    covs[T - 1] = fwd.covs[T - 1]
    M[T - 1] = fwd.M[T - 1]

    pair_means = np.empty((K, K, P))      # [j, k]
    pair_covs = np.empty((K, K, P, P))

    for t in range(T - 2, -1, -1):
        pred = fwd.M[t] @ Z  # predicted regime probabilities at t+1
        Mjk = np.zeros((K, K))
        for j in range(K):
            for k in range(K):
                if Z[j, k] == 0.0:
                    pair_means[j, k] = fwd.means[t, j]
                    pair_covs[j, k] = fwd.covs[t, j]
                    continue
                if pred[k] <= 0.0:
                    if M[t + 1, k] > 0.0:
                        raise NumericalError(
                            f"zero predicted probability for reachable regime {k + 1} at t={t}"
                        )
                    pair_means[j, k] = fwd.means[t, j]
                    pair_covs[j, k] = fwd.covs[t, j]
                    continue
                Mjk[j, k] = fwd.M[t, j] * Z[j, k] / pred[k] * M[t + 1, k]
                m_f, P_f = fwd.means[t, j], fwd.covs[t, j]
                A_k, Q_k = ssv.A[k], ssv.Q[k]
                P_pred = floor_spd(A_k @ P_f @ A_k.T + Q_k)
                J = P_f @ A_k.T @ np.linalg.inv(P_pred)
                pair_means[j, k] = m_f + J @ (means[t + 1, k] - A_k @ m_f)
                pair_covs[j, k] = symmetrize(
                    P_f + J @ (covs[t + 1, k] - P_pred) @ J.T
                )
        row = Mjk.sum(axis=1)
        total = row.sum()
        if total <= 0:
            raise NumericalError(f"smoothed probabilities vanished at t={t}")
        M[t] = row / total
        for j in range(K):
            if row[j] > 0:
                weights = Mjk[j] / row[j]
            else:
                weights = np.full(K, 1.0 / K)
            belief = collapse(pair_means[j], pair_covs[j], weights)
            means[t, j] = belief.mean
            covs[t, j] = belief.cov

    return SmoothedTrajectory(means=means, covs=covs, M=M)


def decode_map_states(M: np.ndarray) -> np.ndarray:
    """Pointwise MAP regime labels (1-based); ties go to the lowest index."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ValidationError("M must be a T x K matrix")
    if np.any(M < 0) or np.any(np.abs(M.sum(axis=1) - 1.0) > 1e-6):
        raise ValidationError("rows of M must be probability vectors")
    return np.argmax(M, axis=1) + 1


def save_trajectory(M: np.ndarray, path) -> None:
    """Dump regime probabilities and MAP labels as CSV for inspection."""
    M = np.asarray(M, dtype=float)
    states = decode_map_states(M)
    K = M.shape[1]
    header = "t," + ",".join(f"M{j + 1}" for j in range(K)) + ",map_state"
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for t in range(M.shape[0]):
            probs = ",".join(f"{v!r}" for v in M[t])
            fh.write(f"{t},{probs},{states[t]}\n")
