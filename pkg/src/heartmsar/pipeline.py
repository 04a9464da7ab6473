"""End-to-end orchestration: training, segmentation, classification.

A :class:`PipelineConfig` collects every tunable as flat dotted keys so a
run can be reproduced from the single ``key = value`` text document that
each command writes beside its outputs.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import hmm as hmm_mod
from . import metrics as metrics_mod
from .duration import (DurationModel, DurationStats, build_duration_model,
                       duration_stats_from_tracks, estimate_heart_rate,
                       skf_viterbi)
from .errors import ConfigError, NumericalError, ValidationError
from .io import (AnnotationTrack, DatasetManifest, Recording, load_annotations,
                 load_recording, rescale_track, resample, save_state_runs)
from .mfcc import MfccConfig, extract_mfcc
from .msar import (MsarParams, cluster_by_labels, dynamic_cluster,
                   estimate_obs_noise, fit_ar_least_squares,
                   init_transition_matrix, load_msar, pool_parameters,
                   save_msar, to_state_space, transition_matrix_from_labels)
from .preprocess import PreprocessConfig, preprocess_signal
from .slds import decode_map_states, skf, sks

METHODS = ("skf", "sks", "skf-viterbi")


@dataclass(frozen=True)
class PipelineConfig:
    working_rate: int = 1000
    seed: int = 0
    jobs: int = 1
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    ar_order: int = 4
    obs_window_s: float = 1.0
    per_regime_obs_noise: bool = False
    pool: str = "mean"            # "mean" or "duration"
    refine: bool = False
    method: str = "skf-viterbi"
    frame_ms: float = 50.0
    hop_ms: float = 10.0
    preemphasis: float = 0.97
    n_mel: int = 24
    n_coef: int = 12
    hmm_states: int = 4
    hmm_mixtures: int = 16
    hmm_max_iter: int = 10
    hmm_tol: float = 1e-4

    def mfcc_config(self) -> MfccConfig:
        return MfccConfig(
            fs=self.working_rate, frame_ms=self.frame_ms, hop_ms=self.hop_ms,
            preemphasis=self.preemphasis, n_mel=self.n_mel, n_coef=self.n_coef,
        )

    def mfcc_fingerprint(self) -> dict:
        return {
            "fs": self.working_rate, "frame_ms": self.frame_ms,
            "hop_ms": self.hop_ms, "preemphasis": self.preemphasis,
            "n_mel": self.n_mel, "n_coef": self.n_coef,
        }


_KEY_MAP = {
    "rate": ("working_rate", int),
    "seed": ("seed", int),
    "jobs": ("jobs", int),
    "preprocess.band_low": ("preprocess.band_low", float),
    "preprocess.band_high": ("preprocess.band_high", float),
    "preprocess.order": ("preprocess.filter_order", int),
    "preprocess.spike_window": ("preprocess.spike_window", float),
    "preprocess.normalize": ("preprocess.normalize", bool),
    "msar.order": ("ar_order", int),
    "msar.obs_window": ("obs_window_s", float),
    "msar.per_regime_r": ("per_regime_obs_noise", bool),
    "msar.pool": ("pool", str),
    "msar.refine": ("refine", bool),
    "segment.method": ("method", str),
    "mfcc.frame_ms": ("frame_ms", float),
    "mfcc.hop_ms": ("hop_ms", float),
    "mfcc.preemphasis": ("preemphasis", float),
    "mfcc.n_mel": ("n_mel", int),
    "mfcc.n_coef": ("n_coef", int),
    "hmm.states": ("hmm_states", int),
    "hmm.mixtures": ("hmm_mixtures", int),
    "hmm.max_iter": ("hmm_max_iter", int),
    "hmm.tol": ("hmm_tol", float),
}


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"cannot parse boolean from {raw!r}")


def config_from_dict(pairs: dict) -> PipelineConfig:
    cfg_kwargs: dict = {}
    pre_kwargs: dict = {}
    for key, raw in pairs.items():
        if key not in _KEY_MAP:
            raise ConfigError(f"unknown config key {key!r}")
        dest, typ = _KEY_MAP[key]
        value = _parse_bool(str(raw)) if typ is bool else typ(raw)
        if dest.startswith("preprocess."):
            pre_kwargs[dest.split(".", 1)[1]] = value
        else:
            cfg_kwargs[dest] = value
    cfg = PipelineConfig(**cfg_kwargs)
    if pre_kwargs:
        cfg = replace(cfg, preprocess=replace(cfg.preprocess, **pre_kwargs))
    if cfg.method not in METHODS:
        raise ConfigError(f"unknown method {cfg.method!r}; expected one of {METHODS}")
    return cfg


def load_config(path) -> PipelineConfig:
    pairs = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{path}: line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in body.split("=", 1))
        pairs[key] = raw
    return config_from_dict(pairs)


def save_config(cfg: PipelineConfig, path) -> None:
    """Write the fully resolved configuration for provenance."""
    lines = []
    for key, (dest, _typ) in _KEY_MAP.items():
        if dest.startswith("preprocess."):
            value = getattr(cfg.preprocess, dest.split(".", 1)[1])
        else:
            value = getattr(cfg, dest)
        lines.append(f"{key} = {value}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_and_condition(entry_path, manifest: DatasetManifest, cfg: PipelineConfig
                       ) -> tuple[Recording, np.ndarray]:
    """Load, downsample to the working rate, and run preprocessing."""
    rec = load_recording(manifest.resolve(entry_path))
    if rec.sample_rate > cfg.working_rate:
        rec = resample(rec, cfg.working_rate)
    x = preprocess_signal(rec.samples, rec.sample_rate, cfg.preprocess)
    return rec, x


def _load_track(entry, manifest: DatasetManifest, native_rate: int,
                cfg: PipelineConfig) -> AnnotationTrack:
    track = load_annotations(manifest.resolve(entry.annotation))
    if native_rate > cfg.working_rate:
        track = rescale_track(track, native_rate, cfg.working_rate)
    return track


@dataclass
class SegmenterModel:
    params: MsarParams
    stats: DurationStats
    working_rate: int


def train_segmenter(manifest: DatasetManifest, cfg: PipelineConfig
                    ) -> tuple[SegmenterModel, list[str]]:
    """Fit per-recording AR parameters on annotated training data and pool.

    Returns the pooled model plus human-readable log lines. Recordings
    missing a usable stretch of any regime are skipped with a warning.
    """
    entries = [e for e in manifest.subset(split="train").segmentation_entries()
               if e.annotation]
    if not entries:
        raise ValidationError("no annotated training entries in manifest")
    per_rec: list[MsarParams] = []
    weights: list[float] = []
    tracks: list[AnnotationTrack] = []
    signals: list[np.ndarray] = []
    logs: list[str] = []
    for entry in entries:
        rec = load_recording(manifest.resolve(entry.path))
        native_rate = rec.sample_rate
        if rec.sample_rate > cfg.working_rate:
            rec = resample(rec, cfg.working_rate)
        x = preprocess_signal(rec.samples, rec.sample_rate, cfg.preprocess)
        track = _load_track(entry, manifest, native_rate, cfg)
        try:
            params = _fit_one_recording(x, track, rec.sample_rate, cfg)
        except ValidationError as exc:
            warnings.warn(f"{entry.path}: skipped ({exc})", stacklevel=2)
            continue
        per_rec.append(params)
        weights.append(track.end)
        tracks.append(track)
        signals.append(x)
        logs.append(f"fitted {entry.path}: q={np.array2string(params.q, precision=4)}")
    if not per_rec:
        raise ValidationError("no recording could be fitted")
    pooled = pool_parameters(
        per_rec, weights=weights if cfg.pool == "duration" else None
    )
    pooled = replace_transitions(pooled, init_transition_matrix(tracks, cfg.working_rate))
    if cfg.refine:
        pooled = _refine_once(pooled, signals, cfg)
        logs.append("applied one refinement pass over filter-derived labels")
    stats = duration_stats_from_tracks(tracks, cfg.working_rate)
    logs.append(f"pooled {len(per_rec)} recordings")
    return SegmenterModel(pooled, stats, cfg.working_rate), logs


def replace_transitions(params: MsarParams, Z: np.ndarray) -> MsarParams:
    return MsarParams(phi=params.phi, q=params.q, R=params.R, Z=Z)


def _fit_one_recording(x: np.ndarray, track: AnnotationTrack, fs: int,
                       cfg: PipelineConfig) -> MsarParams:
    clustered = dynamic_cluster(Recording(x, fs, "tmp"), track)
    K = track.n_states
    P = cfg.ar_order
    phi = np.zeros((K, P))
    q = np.zeros(K)
    for j, series in enumerate(clustered.series):
        phi[j], q[j] = fit_ar_least_squares(series, P)
    window = int(round(cfg.obs_window_s * fs))
    if cfg.per_regime_obs_noise:
        R = np.array([
            estimate_obs_noise(series, P, min(window, max(10 * P + 1, len(series) // 2)))
            if len(series) > 10 * P + 1 else np.nan
            for series in clustered.series
        ])
        if np.any(np.isnan(R)):
            raise ValidationError("regime too short for per-regime noise estimation")
    else:
        R = np.full(K, estimate_obs_noise(x, P, window))
    R = np.maximum(R, 1e-12)
    Z = init_transition_matrix([track], fs)
    return MsarParams(phi=phi, q=q, R=R, Z=Z)


def _refine_once(params: MsarParams, signals: list[np.ndarray],
                 cfg: PipelineConfig) -> MsarParams:
    """Re-cluster by filter-derived labels and refit (single pass)."""
    ssv = to_state_space(params)
    refits: list[MsarParams] = []
    label_seqs = []
    for x in signals:
        traj = skf(x, ssv, params.Z)
        labels = decode_map_states(traj.M)
        clustered = cluster_by_labels(x, labels, params.K)
        try:
            phi = np.zeros_like(params.phi)
            q = np.zeros_like(params.q)
            for j, series in enumerate(clustered.series):
                phi[j], q[j] = fit_ar_least_squares(series, params.P)
        except (ValidationError, NumericalError) as exc:
            warnings.warn(f"refinement skipped one recording ({exc})", stacklevel=2)
            continue
        refits.append(MsarParams(phi=phi, q=q, R=params.R, Z=params.Z))
        label_seqs.append(labels)
    if not refits:
        return params
    refined = pool_parameters(refits)
    Z = transition_matrix_from_labels(label_seqs, params.K)
    return replace_transitions(refined, Z)


def segment_signal(x: np.ndarray, fs: int, model: SegmenterModel, method: str,
                   pi0=None) -> np.ndarray:
    """Run one conditioned signal through the selected inference scheme."""
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}")
    ssv = to_state_space(model.params)
    traj = skf(x, ssv, model.params.Z, init_window=fs)
    if method == "skf":
        return decode_map_states(traj.M)
    if method == "sks":
        return decode_map_states(sks(traj, ssv, model.params.Z).M)
    hr = estimate_heart_rate(x, fs)
    dm = build_duration_model(hr, model.stats, fs)
    return skf_viterbi(traj.M, dm, pi0=pi0)


def _segment_entry(args):
    entry, manifest, cfg, model, method = args
    rec, x = load_and_condition(entry.path, manifest, cfg)
    labels = segment_signal(x, rec.sample_rate, model, method)
    ref = None
    if entry.annotation:
        rec_raw = load_recording(manifest.resolve(entry.path))
        track = _load_track(entry, manifest, rec_raw.sample_rate, cfg)
        ref = track.to_labels()
    return entry.path, labels, ref


def run_segment(manifest: DatasetManifest, cfg: PipelineConfig, method: str,
                out_dir, model: SegmenterModel) -> dict:
    """Segment every non-noise test entry; write tracks and a metrics report."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = [e for e in manifest.segmentation_entries() if e.split == "test"]
    if not entries:
        entries = list(manifest.segmentation_entries())
    if not entries:
        raise ValidationError("no entries to segment")
    tasks = [(e, manifest, cfg, model, method) for e in entries]
    results = _map_tasks(_segment_entry, tasks, cfg.jobs)

    per_rec = []
    rows = []
    for entry_path, labels, ref in results:
        stem = Path(entry_path).stem
        save_state_runs(labels, out_dir / f"{stem}.pred.csv")
        if ref is not None:
            L = min(len(labels), len(ref))
            confusion = metrics_mod.segmentation_confusion(labels[:L], ref[:L])
            m = metrics_mod.seg_metrics(confusion)
            per_rec.append(m)
            rows.append((stem, m.acc))
    report = {"n_recordings": len(results)}
    if per_rec:
        report.update(metrics_mod.aggregate_seg_metrics(per_rec))
        _write_seg_report(out_dir / "segmentation_report.csv", rows, report)
    save_config(cfg, out_dir / "resolved_config.txt")
    return report


def _write_seg_report(path, rows, report) -> None:
    with open(path, "w") as fh:
        fh.write("recording,acc\n")
        for stem, acc in rows:
            fh.write(f"{stem},{acc:.6f}\n")
        mean, sd = report["acc"]
        fh.write(f"__mean__,{mean:.6f}\n")
        fh.write(f"__sd__,{sd:.6f}\n")


def _map_tasks(fn, tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def extract_beats(entry, manifest: DatasetManifest, cfg: PipelineConfig,
                  segmenter: SegmenterModel | None = None) -> list[hmm_mod.BeatSegment]:
    """Heartbeat segments for one manifest entry.

    X-factor entries are cut into 1 s windows; otherwise cycle boundaries
    come from the annotation track when present, else from the
    duration-Viterbi segmentation.
    """
    rec, x = load_and_condition(entry.path, manifest, cfg)
    mcfg = cfg.mfcc_config()
    if entry.label == "xfactor":
        conditioned = Recording(x, rec.sample_rate, Path(entry.path).stem)
        return hmm_mod.window_xfactor(conditioned, mcfg, label=entry.label)
    if entry.annotation:
        rec_raw_rate = load_recording(manifest.resolve(entry.path)).sample_rate
        track = _load_track(entry, manifest, rec_raw_rate, cfg)
        spans = track.cycle_spans()
    else:
        if segmenter is None:
            raise ValidationError(
                f"{entry.path}: no annotation and no trained segmenter available"
            )
        labels = segment_signal(x, rec.sample_rate, segmenter, "skf-viterbi")
        spans = _spans_from_labels(labels)
    beats = []
    rec_id = Path(entry.path).stem
    for i, (s, e) in enumerate(spans):
        chunk = x[s:e]
        if len(chunk) < mcfg.frame_len:
            continue
        feats = extract_mfcc(chunk, mcfg, segment_id=f"{rec_id}#b{i}")
        if feats.F < cfg.hmm_states:
            continue
        beats.append(hmm_mod.BeatSegment(feats, recording_id=rec_id, label=entry.label))
    return beats


def _spans_from_labels(labels: np.ndarray) -> list[tuple[int, int]]:
    """Complete S1-to-S1 cycles in a decoded label sequence."""
    onsets = np.flatnonzero((labels == 1) & (np.r_[0, labels[:-1]] != 1))
    spans = []
    for a, b in zip(onsets[:-1], onsets[1:]):
        if set(np.unique(labels[a:b])) == {1, 2, 3, 4}:
            spans.append((int(a), int(b)))
    return spans


def train_classifier(manifest: DatasetManifest, cfg: PipelineConfig,
                     segmenter: SegmenterModel | None = None,
                     with_xfactor: bool = True) -> hmm_mod.ClassifierBank:
    """Train one HMM per class on the training-split beats."""
    classes = ["normal", "abnormal"] + (["xfactor"] if with_xfactor else [])
    train = manifest.subset(split="train")
    by_class: dict[str, list] = {c: [] for c in classes}
    for entry in train.entries:
        if entry.label not in by_class:
            continue
        for beat in extract_beats(entry, manifest, cfg, segmenter):
            by_class[entry.label].append(beat.features)
    models = {}
    for label, seqs in by_class.items():
        if not seqs:
            raise ValidationError(f"no training beats for class {label!r}")
        init = hmm_mod.segmental_kmeans_init(
            seqs, n_states=cfg.hmm_states, n_mix=cfg.hmm_mixtures, seed=cfg.seed,
        )
        models[label] = hmm_mod.baum_welch_train(
            init, seqs, max_iter=cfg.hmm_max_iter, tol=cfg.hmm_tol,
        )
    return hmm_mod.ClassifierBank(models=models, mfcc_fingerprint=cfg.mfcc_fingerprint())


def run_classify(manifest: DatasetManifest, cfg: PipelineConfig,
                 bank: hmm_mod.ClassifierBank, out_dir,
                 with_xfactor: bool = False,
                 segmenter: SegmenterModel | None = None) -> dict:
    """Classify test beats and recordings; write reports and metrics."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    test = manifest.subset(split="test")
    if not len(test.entries):
        raise ValidationError("no test entries in manifest")
    enabled = ["normal", "abnormal"] + (["xfactor"] if with_xfactor else [])
    missing = [c for c in enabled if c not in bank.models]
    if missing:
        raise ValidationError(f"classifier bank lacks model(s): {missing}")

    beat_rows = []
    rec_rows = []
    for entry in test.entries:
        if entry.label == "noise" or (entry.label == "xfactor" and not with_xfactor):
            continue
        beats = extract_beats(entry, manifest, cfg, segmenter)
        labels = []
        for i, beat in enumerate(beats):
            scores = beat_scores(bank, beat.features, with_xfactor)
            pred = _best_label(scores)
            labels.append(pred)
            beat_rows.append((beat.recording_id, i, pred, entry.label, scores))
        if labels:
            rec_rows.append(
                (Path(entry.path).stem, hmm_mod.classify_recording(labels), entry.label)
            )

    _write_beat_report(out_dir / "beat_report.csv", beat_rows)
    _write_recording_report(out_dir / "recording_report.csv", rec_rows)
    report = {
        "beat": _plain_metrics_from_rows(
            [(pred, ref) for _, _, pred, ref, _ in beat_rows]
        ),
        "recording": _plain_metrics_from_rows(
            [(pred, ref) for _, pred, ref in rec_rows]
        ),
    }
    if with_xfactor:
        report["beat_xfactor"] = _xfactor_metrics_from_rows(
            [(pred, ref) for _, _, pred, ref, _ in beat_rows], manifest,
        )
        report["recording_xfactor"] = _xfactor_metrics_from_rows(
            [(pred, ref) for _, pred, ref in rec_rows], manifest,
        )
    save_config(cfg, out_dir / "resolved_config.txt")
    return report


def beat_scores(bank: hmm_mod.ClassifierBank, features, with_xfactor: bool) -> dict:
    enabled = ["normal", "abnormal"] + (["xfactor"] if with_xfactor else [])
    scores = {}
    for label in enabled:
        try:
            ll, _ = hmm_mod.viterbi_loglik(bank.models[label], features)
        except ValidationError:
            continue
        scores[label] = ll / features.F
    if not scores:
        raise ValidationError("beat unclassifiable: no model admits a valid path")
    return scores


def _best_label(scores: dict) -> str:
    return max(scores, key=lambda lab: (scores[lab], hmm_mod.CLASS_PRIORITY[lab]))


def _plain_metrics_from_rows(rows):
    """Abnormal-positive confusion over normal/abnormal references."""
    tp = fp = tn = fn = 0
    for pred, ref in rows:
        if ref == "abnormal":
            if pred == "abnormal":
                tp += 1
            elif pred == "normal":
                fn += 1
        elif ref == "normal":
            if pred == "abnormal":
                fp += 1
            elif pred == "normal":
                tn += 1
    if tp + fp + tn + fn == 0:
        return None
    return metrics_mod.class_metrics_plain(tp, fp, tn, fn)


def _xfactor_metrics_from_rows(rows, manifest: DatasetManifest) -> dict:
    """Weighted metrics treating x-factor references as the poor-quality
    abnormal population (the manifest has no separate quality column)."""
    train = manifest.subset(split="train")
    n_good = sum(1 for e in train.entries if e.label == "abnormal")
    n_poor = sum(1 for e in train.entries if e.label == "xfactor")
    wa = metrics_mod.quality_weights(n_good, n_poor)
    refs, preds, quals = [], [], []
    for pred, ref in rows:
        if ref == "xfactor":
            refs.append("abnormal")
            quals.append("poor")
        else:
            refs.append(ref)
            quals.append("good")
        preds.append(pred)
    confusion = metrics_mod.xfactor_confusion(refs, preds, quals, wa=wa, wn=(1.0, 0.0))
    se, sp, macc = metrics_mod.class_metrics_xfactor(confusion)
    f1 = metrics_mod.penalized_f1(
        confusion.aa1, confusion.an1, confusion.na1, confusion.aq1, confusion.nq1,
    )
    return {"se": se, "sp": sp, "macc": macc, "penalized_f1": f1}


def _write_beat_report(path, rows) -> None:
    with open(path, "w") as fh:
        fh.write("recording,beat_index,label,score_normal,score_abnormal,score_xfactor\n")
        for rec_id, idx, pred, _ref, scores in rows:
            cells = [
                f"{scores[c]:.6f}" if c in scores else ""
                for c in ("normal", "abnormal", "xfactor")
            ]
            fh.write(f"{rec_id},{idx},{pred}," + ",".join(cells) + "\n")


def _write_recording_report(path, rows) -> None:
    with open(path, "w") as fh:
        fh.write("recording,predicted,reference\n")
        for rec_id, pred, ref in rows:
            fh.write(f"{rec_id},{pred},{ref}\n")


def save_segmenter(model: SegmenterModel, path) -> None:
    save_msar(
        model.params, path,
        extra={
            "duration_mean_s": model.stats.mean.tolist(),
            "duration_sd_s": model.stats.sd.tolist(),
            "working_rate": model.working_rate,
        },
    )


def load_segmenter(path) -> SegmenterModel:
    import json

    params = load_msar(path)
    doc = json.loads(Path(path).read_text())
    try:
        stats = DurationStats(
            mean=np.array(doc["duration_mean_s"]), sd=np.array(doc["duration_sd_s"]),
        )
        rate = int(doc["working_rate"])
    except KeyError as exc:
        raise ValidationError(f"{path}: segmenter file missing {exc}") from exc
    return SegmenterModel(params, stats, rate)
