"""Recording, annotation, and manifest I/O plus sample-rate conversion.

On-disk formats:

* WAV: PCM 16-bit little-endian, mono.
* CSV float: header line ``sample_rate=<int>``, then one sample per line.
* Annotation CSV: rows ``start,end,state`` (integer sample indices, end
  exclusive, states 1=S1, 2=systole, 3=S2, 4=diastole).
* Manifest CSV: header ``path,annotation,label,split``.
"""

from __future__ import annotations

import csv
import math
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

from .errors import ConfigError, FormatError, ValidationError

CLASS_LABELS = ("normal", "abnormal", "xfactor", "noise")


@dataclass(frozen=True)
class Recording:
    """A single-channel signal with its sampling rate."""

    samples: np.ndarray
    sample_rate: int
    id: str = ""

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        object.__setattr__(self, "samples", samples)
        if self.sample_rate <= 0:
            raise ValidationError(f"sample_rate must be positive, got {self.sample_rate}")
        if samples.ndim != 1 or samples.size == 0:
            raise ValidationError("samples must be a nonempty 1-D sequence")
        if not np.all(np.isfinite(samples)):
            raise ValidationError("samples contain non-finite values")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class AnnotationTrack:
    """Contiguous state intervals covering [0, ends[-1]).

    Consecutive intervals must advance through the cyclic state order
    1 -> 2 -> ... -> n_states -> 1.
    """

    starts: np.ndarray
    ends: np.ndarray
    states: np.ndarray
    n_states: int = 4

    def __post_init__(self):
        starts = np.asarray(self.starts, dtype=int)
        ends = np.asarray(self.ends, dtype=int)
        states = np.asarray(self.states, dtype=int)
        object.__setattr__(self, "starts", starts)
        object.__setattr__(self, "ends", ends)
        object.__setattr__(self, "states", states)
        if not (len(starts) == len(ends) == len(states)) or len(starts) == 0:
            raise ValidationError("annotation track must contain at least one interval")
        if starts[0] != 0:
            raise ValidationError(f"track must start at sample 0, got {starts[0]}")
        for row, (s, e, st) in enumerate(zip(starts, ends, states), start=1):
            if e <= s:
                raise ValidationError(f"row {row}: empty interval ({s},{e})")
            if not 1 <= st <= self.n_states:
                raise ValidationError(f"row {row}: state {st} outside 1..{self.n_states}")
            if row > 1:
                prev_end = ends[row - 2]
                if s > prev_end:
                    raise ValidationError(f"row {row}: gap at sample {prev_end}")
                if s < prev_end:
                    raise ValidationError(f"row {row}: overlap at sample {s}")
                prev_state = states[row - 2]
                if st != _successor(prev_state, self.n_states):
                    raise ValidationError(
                        f"row {row}: illegal transition {prev_state}→{st}"
                    )

    def __len__(self) -> int:
        return len(self.starts)

    @property
    def end(self) -> int:
        return int(self.ends[-1])

    def to_labels(self) -> np.ndarray:
        """Per-sample state labels over [0, ends[-1])."""
        labels = np.empty(self.end, dtype=int)
        for s, e, st in zip(self.starts, self.ends, self.states):
            labels[s:e] = st
        return labels

    def durations_by_state(self) -> dict[int, np.ndarray]:
        lengths = self.ends - self.starts
        return {
            j: lengths[self.states == j] for j in range(1, self.n_states + 1)
        }

    def cycle_spans(self) -> list[tuple[int, int]]:
        """Sample spans of complete cycles (state-1 onset to next state-1 onset)."""
        spans = []
        for m in range(len(self) - self.n_states + 1):
            if self.states[m] == 1:
                spans.append((int(self.starts[m]), int(self.ends[m + self.n_states - 1])))
        return spans


def _successor(state: int, n_states: int) -> int:
    return state % n_states + 1


def load_recording(path, fmt: str = "auto") -> Recording:
    """Load a recording from WAV (``wav16-mono``) or CSV (``csv-float``)."""
    path = Path(path)
    if fmt == "auto":
        fmt = "wav16-mono" if path.suffix.lower() == ".wav" else "csv-float"
    if fmt == "wav16-mono":
        return _load_wav(path)
    if fmt == "csv-float":
        return _load_csv_float(path)
    raise ConfigError(f"unknown recording format {fmt!r}")


def _load_wav(path: Path) -> Recording:
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            nframes = wf.getnframes()
            payload = wf.readframes(nframes)
    except (wave.Error, EOFError) as exc:
        raise FormatError(f"{path}: malformed WAV header ({exc})") from exc
    if channels != 1:
        raise FormatError(f"{path}: multi-channel unsupported (channels={channels})")
    if width != 2:
        raise FormatError(f"{path}: sample width must be 16-bit, got {8 * width}-bit")
    if nframes == 0:
        raise FormatError(f"{path}: empty payload")
    raw = np.frombuffer(payload, dtype="<i2")
    return Recording(raw.astype(float) / 32768.0, rate, id=path.stem)


def _load_csv_float(path: Path) -> Recording:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("sample_rate="):
        raise FormatError(f"{path}: missing 'sample_rate=<int>' header line")
    try:
        rate = int(lines[0].split("=", 1)[1])
    except ValueError as exc:
        raise FormatError(f"{path}: malformed sample_rate header") from exc
    body = [ln for ln in lines[1:] if ln.strip()]
    if not body:
        raise FormatError(f"{path}: empty payload")
    try:
        samples = np.array([float(ln) for ln in body])
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric sample value ({exc})") from exc
    return Recording(samples, rate, id=path.stem)


def save_recording(rec: Recording, path, fmt: str = "auto") -> None:
    path = Path(path)
    if fmt == "auto":
        fmt = "wav16-mono" if path.suffix.lower() == ".wav" else "csv-float"
    if fmt == "wav16-mono":
        scaled = np.clip(np.round(rec.samples * 32768.0), -32768, 32767).astype("<i2")
        with wave.open(str(path), "wb") as wf:
            wf.setnchannels(1)
            wf.setsampwidth(2)
            wf.setframerate(rec.sample_rate)
            wf.writeframes(scaled.tobytes())
    elif fmt == "csv-float":
        with open(path, "w") as fh:
            fh.write(f"sample_rate={rec.sample_rate}\n")
            for v in rec.samples:
                fh.write(f"{float(v)!r}\n")
    else:
        raise ConfigError(f"unknown recording format {fmt!r}")


def load_annotations(path, n_states: int = 4) -> AnnotationTrack:
    """Load and validate a ``start,end,state`` interval CSV."""
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise FormatError(f"{path}: row {lineno}: expected 3 columns, got {len(parts)}")
        try:
            rows.append(tuple(int(p) for p in parts))
        except ValueError as exc:
            raise FormatError(f"{path}: row {lineno}: non-integer field ({exc})") from exc
    if not rows:
        raise FormatError(f"{path}: no intervals")
    starts, ends, states = (np.array(col) for col in zip(*rows))
    return AnnotationTrack(starts, ends, states, n_states=n_states)


def save_annotations(track: AnnotationTrack, path) -> None:
    with open(path, "w") as fh:
        for s, e, st in zip(track.starts, track.ends, track.states):
            fh.write(f"{int(s)},{int(e)},{int(st)}\n")


def save_state_runs(states: np.ndarray, path) -> None:
    """Write a per-sample label sequence as interval rows (same schema as
    annotation CSVs, but without the cyclic-order requirement)."""
    states = np.asarray(states, dtype=int)
    if states.size == 0:
        raise ValidationError("empty state sequence")
    bounds = np.flatnonzero(np.diff(states)) + 1
    starts = np.concatenate([[0], bounds])
    ends = np.concatenate([bounds, [len(states)]])
    with open(path, "w") as fh:
        for s, e in zip(starts, ends):
            fh.write(f"{int(s)},{int(e)},{int(states[s])}\n")


def load_state_runs(path) -> np.ndarray:
    """Read interval rows back into a per-sample label sequence (lenient:
    contiguity is required, cyclic order is not)."""
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        s, e, st = (int(p) for p in line.split(","))
        rows.append((s, e, st))
    if not rows:
        raise FormatError(f"{path}: no intervals")
    length = rows[-1][1]
    labels = np.zeros(length, dtype=int)
    prev_end = 0
    for s, e, st in rows:
        if s != prev_end:
            raise FormatError(f"{path}: intervals not contiguous at sample {s}")
        labels[s:e] = st
        prev_end = e
    return labels


def rescale_track(track: AnnotationTrack, orig_fs: int, new_fs: int) -> AnnotationTrack:
    """Map interval boundaries to a new sampling rate."""
    if orig_fs == new_fs:
        return track
    ratio = new_fs / orig_fs
    bounds = np.concatenate([[0], np.round(track.ends * ratio).astype(int)])
    bounds = np.maximum.accumulate(bounds)
    if np.any(np.diff(bounds) <= 0):
        raise ValidationError("interval collapsed to zero length during rescaling")
    return AnnotationTrack(bounds[:-1], bounds[1:], track.states, track.n_states)


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    annotation: str | None
    label: str
    split: str


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]
    base_dir: Path | None = None

    def __post_init__(self):
        seen = set()
        for entry in self.entries:
            if entry.label not in CLASS_LABELS:
                raise ValidationError(f"unknown class label {entry.label!r}")
            if entry.path in seen:
                raise ValidationError(f"duplicate entry {entry.path!r}")
            seen.add(entry.path)

    def __len__(self) -> int:
        return len(self.entries)

    def subset(self, split: str | None = None, labels=None) -> "DatasetManifest":
        kept = tuple(
            e
            for e in self.entries
            if (split is None or e.split == split)
            and (labels is None or e.label in labels)
        )
        return DatasetManifest(kept, self.base_dir)

    def segmentation_entries(self) -> tuple[ManifestEntry, ...]:
        """Entries usable for segmentation; all-noise recordings are excluded."""
        return tuple(e for e in self.entries if e.label != "noise")

    def resolve(self, relpath: str) -> Path:
        p = Path(relpath)
        if p.is_absolute() or self.base_dir is None:
            return p
        return self.base_dir / p


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty manifest") from None
        if [h.strip() for h in header] != ["path", "annotation", "label", "split"]:
            raise FormatError(f"{path}: expected header 'path,annotation,label,split'")
        entries = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise FormatError(f"{path}: row {lineno}: expected 4 columns")
            rec, ann, label, split = (c.strip() for c in row)
            entries.append(ManifestEntry(rec, ann or None, label, split))
    return DatasetManifest(tuple(entries), base_dir=path.parent)


def save_manifest(manifest: DatasetManifest, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "annotation", "label", "split"])
        for e in manifest.entries:
            writer.writerow([e.path, e.annotation or "", e.label, e.split])


def resample(rec: Recording, target_rate: int) -> Recording:
    """Anti-aliased polyphase decimation to ``target_rate``.

    Output length is floor(n * target/orig). Upsampling is unsupported.
    """
    if target_rate <= 0:
        raise ConfigError(f"target rate must be positive, got {target_rate}")
    if target_rate > rec.sample_rate:
        raise ConfigError(
            f"upsampling unsupported ({rec.sample_rate} Hz -> {target_rate} Hz)"
        )
    if target_rate == rec.sample_rate:
        return Recording(rec.samples.copy(), rec.sample_rate, rec.id)
    g = math.gcd(int(target_rate), int(rec.sample_rate))
    out = resample_poly(rec.samples, target_rate // g, rec.sample_rate // g)
    n_out = (len(rec.samples) * target_rate) // rec.sample_rate
    return Recording(out[:n_out], target_rate, rec.id)
