"""Signal conditioning: band-pass filtering, spike removal, normalization.

The standard pipeline is filter -> spike removal -> z-normalization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import butter, sosfiltfilt

from .errors import ConfigError, ValidationError


@dataclass(frozen=True)
class PreprocessConfig:
    band_low: float = 25.0
    band_high: float = 400.0
    filter_order: int = 4
    spike_window: float = 0.5  # seconds
    normalize: bool = True

    def validate_for(self, fs: float) -> None:
        if not 0 < self.band_low < self.band_high:
            raise ConfigError(
                f"need 0 < band_low < band_high, got {self.band_low}:{self.band_high}"
            )
        if self.band_high >= fs / 2:
            raise ConfigError(
                f"band_high {self.band_high} Hz must be below Nyquist {fs / 2} Hz"
            )
        if self.filter_order < 1:
            raise ConfigError("filter_order must be >= 1")
        if self.spike_window <= 0:
            raise ConfigError("spike_window must be positive")


def bandpass_filter(signal, fs: float, cfg: PreprocessConfig) -> np.ndarray:
    """Zero-phase Butterworth band-pass (applied forward-backward)."""
    cfg.validate_for(fs)
    x = np.asarray(signal, dtype=float)
    sos = butter(
        cfg.filter_order, [cfg.band_low, cfg.band_high], btype="bandpass",
        fs=fs, output="sos",
    )
    return sosfiltfilt(sos, x)


def remove_spikes(signal, fs: float, cfg: PreprocessConfig) -> np.ndarray:
    """Replace outlier windows by linear interpolation from their edges.

    The signal is tiled into non-overlapping windows of ``spike_window``
    seconds; a window is an outlier when its maximum absolute amplitude
    exceeds 3x the median of all windows' maxima. The worst window is
    replaced and the criterion re-evaluated until no outlier remains, so
    the operation is a fixed point (applying it twice changes nothing).
    """
    cfg.validate_for(fs)
    x = np.asarray(signal, dtype=float).copy()
    win = int(round(cfg.spike_window * fs))
    if win < 3:
        raise ValidationError(f"spike window of {win} samples is too short (need >= 3)")
    n = len(x)
    if n < win:
        return x
    n_win = n // win
    edges = [(i * win, (i + 1) * win) for i in range(n_win)]
    # fold the trailing remainder into the final window
    edges[-1] = (edges[-1][0], n)

    for _ in range(16 * len(edges) + 8):
        maas = np.array([np.max(np.abs(x[s:e])) for s, e in edges])
        med = np.median(maas)
        bad = np.flatnonzero(maas > 3.0 * med)
        if bad.size == 0:
            break
        worst = bad[np.argmax(maas[bad])]
        s, e = edges[worst]
        left = x[s - 1] if s > 0 else (x[e] if e < n else 0.0)
        right = x[e] if e < n else (x[s - 1] if s > 0 else 0.0)
        x[s:e] = np.linspace(left, right, e - s + 2)[1:-1]
    return x


def zscore_normalize(signal) -> np.ndarray:
    """Subtract the mean and divide by the standard deviation."""
    x = np.asarray(signal, dtype=float)
    if len(x) < 2:
        raise ValidationError("need at least 2 samples to normalize")
    sd = float(np.std(x))
    if sd <= 0.0:
        raise ValidationError("zero variance signal cannot be normalized")
    return (x - np.mean(x)) / sd


def preprocess_signal(signal, fs: float, cfg: PreprocessConfig | None = None) -> np.ndarray:
    """Full conditioning pipeline: band-pass, de-spike, then normalize."""
    cfg = cfg or PreprocessConfig()
    x = bandpass_filter(signal, fs, cfg)
    x = remove_spikes(x, fs, cfg)
    if cfg.normalize:
        x = zscore_normalize(x)
    return x
