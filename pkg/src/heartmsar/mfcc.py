"""Mel-frequency cepstral coefficient extraction.

Frames are pre-emphasized and Hamming-windowed; per frame, the magnitude
squared spectrum is pooled through triangular mel filters (HTK mel scale,
no area normalization), floored, logged, and decorrelated with an
orthonormal DCT-II. The 0th coefficient is dropped and coefficients
1..n_coef kept.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.fft import dct

from .errors import ConfigError, FormatError, ValidationError


@dataclass(frozen=True)
class MfccConfig:
    fs: float
    frame_ms: float = 50.0
    hop_ms: float = 10.0
    preemphasis: float = 0.97
    n_mel: int = 24
    n_coef: int = 12
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.fs <= 0:
            raise ConfigError("fs must be positive")
        if not self.frame_ms > self.hop_ms > 0:
            raise ConfigError(
                f"need frame_ms > hop_ms > 0, got {self.frame_ms}/{self.hop_ms}"
            )
        if not 0 < self.preemphasis < 1:
            raise ConfigError("preemphasis must be in (0, 1)")
        if not 20 <= self.n_mel <= 24:
            raise ConfigError(f"n_mel must be in 20..24, got {self.n_mel}")
        if not 1 <= self.n_coef <= self.n_mel:
            raise ConfigError("n_coef must be in 1..n_mel")

    @property
    def frame_len(self) -> int:
        return int(round(self.frame_ms * self.fs / 1000.0))

    @property
    def hop(self) -> int:
        return int(round(self.hop_ms * self.fs / 1000.0))


@dataclass(frozen=True)
class FeatureSequence:
    """F x n_coef matrix of per-frame cepstral coefficients."""

    frames: np.ndarray
    segment_id: str = ""

    def __post_init__(self):
        frames = np.atleast_2d(np.asarray(self.frames, dtype=float))
        object.__setattr__(self, "frames", frames)
        if frames.shape[0] < 1:
            raise ValidationError("feature sequence must contain at least one frame")
        if not np.all(np.isfinite(frames)):
            raise ValidationError("feature sequence contains non-finite values")

    @property
    def F(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


def frame_signal(signal, cfg: MfccConfig) -> np.ndarray:
    """Slice into pre-emphasized, Hamming-windowed frames of shape (F, L)."""
    x = np.asarray(signal, dtype=float)
    L, H = cfg.frame_len, cfg.hop
    if len(x) < L:
        raise ValidationError(f"signal of {len(x)} samples shorter than one frame ({L})")
    F = (len(x) - L) // H + 1
    offsets = np.arange(F)[:, None] * H + np.arange(L)[None, :]
    frames = x[offsets].copy()
    frames[:, 1:] -= cfg.preemphasis * frames[:, :-1]
    return frames * np.hamming(L)


def mel_filterbank(n_mel: int, frame_len: int, fs: float) -> np.ndarray:
    """Triangular filters (n_mel, frame_len // 2 + 1) spanning 0..fs/2."""
    mel = lambda f: 2595.0 * np.log10(1.0 + f / 700.0)
    inv_mel = lambda m: 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    pts = inv_mel(np.linspace(mel(0.0), mel(fs / 2.0), n_mel + 2))
    bin_freqs = np.arange(frame_len // 2 + 1) * fs / frame_len
    fb = np.zeros((n_mel, len(bin_freqs)))
    for m in range(n_mel):
        left, center, right = pts[m], pts[m + 1], pts[m + 2]
        up = (bin_freqs - left) / (center - left)
        down = (right - bin_freqs) / (right - center)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return fb


def extract_mfcc(signal, cfg: MfccConfig, segment_id: str = "") -> FeatureSequence:
    """Cepstral coefficients 1..n_coef per frame (the gain term is dropped)."""
    frames = frame_signal(signal, cfg)
    power = np.abs(np.fft.rfft(frames, axis=1)) ** 2
    fb = mel_filterbank(cfg.n_mel, cfg.frame_len, cfg.fs)
    energies = power @ fb.T
    log_e = np.log(np.maximum(energies, cfg.log_floor))
    cep = dct(log_e, type=2, norm="ortho", axis=1)
    return FeatureSequence(cep[:, 1 : cfg.n_coef + 1], segment_id=segment_id)


def save_features(seq: FeatureSequence, path, fs: float) -> None:
    with open(path, "w") as fh:
        fh.write(f"segment_id={seq.segment_id},frames={seq.F},fs={fs}\n")
        for row in seq.frames:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def load_features(path) -> tuple[FeatureSequence, float]:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("segment_id="):
        raise FormatError(f"{path}: missing feature header")
    fields = dict(kv.split("=", 1) for kv in lines[0].split(","))
    frames = np.array(
        [[float(v) for v in ln.split(",")] for ln in lines[1:] if ln.strip()]
    )
    if frames.shape[0] != int(fields["frames"]):
        raise FormatError(f"{path}: frame count disagrees with header")
    return (
        FeatureSequence(frames, segment_id=fields["segment_id"]),
        float(fields["fs"]),
    )
