"""Scoring: zero-tolerance segmentation metrics, classification metrics,
x-factor-weighted metrics, penalized F1, and stratified k-fold splits.

Undefined ratios (0/0) are reported as ``None`` and skipped by the
aggregation helpers rather than being coerced to 0 or 100.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .io import DatasetManifest, ManifestEntry


@dataclass(frozen=True)
class SegConfusion:
    """Sample-wise per-regime counts under zero boundary tolerance."""

    tp: np.ndarray  # (K,)
    fp: np.ndarray
    fn: np.ndarray
    total: int


def segmentation_confusion(pred, ref, n_states: int = 4) -> SegConfusion:
    pred = np.asarray(pred, dtype=int)
    ref = np.asarray(ref, dtype=int)
    if pred.shape != ref.shape:
        raise ValidationError(f"length mismatch: pred {pred.shape}, ref {ref.shape}")
    tp = np.zeros(n_states, dtype=int)
    fp = np.zeros(n_states, dtype=int)
    fn = np.zeros(n_states, dtype=int)
    for j in range(1, n_states + 1):
        tp[j - 1] = np.sum((pred == j) & (ref == j))
        fp[j - 1] = np.sum((pred == j) & (ref != j))
        fn[j - 1] = np.sum((ref == j) & (pred != j))
    return SegConfusion(tp=tp, fp=fp, fn=fn, total=len(pred))


@dataclass(frozen=True)
class RegimeMetrics:
    se: float | None
    ppv: float | None
    f1: float | None


@dataclass(frozen=True)
class SegMetrics:
    per_regime: tuple[RegimeMetrics, ...]
    acc: float


def _ratio(num: float, den: float) -> float | None:
    return num / den if den > 0 else None


def f1_from(se: float | None, ppv: float | None) -> float | None:
    if se is None or ppv is None or se + ppv == 0:
        return None
    return 2.0 * se * ppv / (se + ppv)


def seg_metrics(c: SegConfusion) -> SegMetrics:
    """Per-regime sensitivity/precision/F1 plus global accuracy."""
    rows = []
    for j in range(len(c.tp)):
        se = _ratio(c.tp[j], c.tp[j] + c.fn[j])
        ppv = _ratio(c.tp[j], c.tp[j] + c.fp[j])
        rows.append(RegimeMetrics(se=se, ppv=ppv, f1=f1_from(se, ppv)))
    return SegMetrics(per_regime=tuple(rows), acc=float(c.tp.sum()) / c.total)


@dataclass(frozen=True)
class PlainMetrics:
    se: float | None
    ppv: float | None
    acc: float
    f1: float | None


def class_metrics_plain(tp: int, fp: int, tn: int, fn: int) -> PlainMetrics:
    total = tp + fp + tn + fn
    if total == 0:
        raise ValidationError("all counts are zero")
    se = _ratio(tp, tp + fn)
    ppv = _ratio(tp, tp + fp)
    return PlainMetrics(se=se, ppv=ppv, acc=(tp + tn) / total, f1=f1_from(se, ppv))


@dataclass(frozen=True)
class XFactorConfusion:
    """Counts ``<Ref><pred><quality>`` with quality 1=good, 2=poor.

    Reference classes are A (abnormal) and N (normal); predictions are a
    (abnormal), q (x-factor), n (normal). ``wa``/``wn`` are the good/poor
    quality proportions used as term weights.
    """

    aa1: int = 0
    aq1: int = 0
    an1: int = 0
    aa2: int = 0
    aq2: int = 0
    an2: int = 0
    na1: int = 0
    nq1: int = 0
    nn1: int = 0
    na2: int = 0
    nq2: int = 0
    nn2: int = 0
    wa: tuple[float, float] = (1.0, 0.0)
    wn: tuple[float, float] = (1.0, 0.0)

    def __post_init__(self):
        counts = (self.aa1, self.aq1, self.an1, self.aa2, self.aq2, self.an2,
                  self.na1, self.nq1, self.nn1, self.na2, self.nq2, self.nn2)
        if any(c < 0 for c in counts):
            raise ValidationError("counts must be nonnegative")
        for name, w in (("wa", self.wa), ("wn", self.wn)):
            if abs(w[0] + w[1] - 1.0) > 1e-12 or min(w) < 0:
                raise ValidationError(f"{name} must be nonnegative and sum to 1")


def class_metrics_xfactor(x: XFactorConfusion
                          ) -> tuple[float | None, float | None, float | None]:
    """Quality-weighted (Se, Sp, MAcc); terms with empty denominators are
    omitted, and a metric is ``None`` when every term is absent."""
    se_terms = [
        _weighted_term(x.wa[0], x.aa1, x.aa1 + x.aq1 + x.an1),
        _weighted_term(x.wa[1], x.aa2 + x.aq2, x.aa2 + x.aq2 + x.an2),
    ]
    sp_terms = [
        _weighted_term(x.wn[0], x.nn1, x.na1 + x.nq1 + x.nn1),
        _weighted_term(x.wn[1], x.nn2 + x.nq2, x.na2 + x.nq2 + x.nn2),
    ]
    se = _sum_terms(se_terms)
    sp = _sum_terms(sp_terms)
    macc = (se + sp) / 2.0 if se is not None and sp is not None else None
    return se, sp, macc


def _weighted_term(weight: float, num: float, den: float) -> float | None:
    return weight * num / den if den > 0 else None


def _sum_terms(terms) -> float | None:
    defined = [t for t in terms if t is not None]
    return sum(defined) if defined else None


def penalized_f1(aa1: int, an1: int, na1: int, aq1: int, nq1: int,
                 alpha: float = 10.0) -> float:
    """F1 with penalty ``alpha`` on plain confusions; x-factor assignments
    count as pseudo false positives/negatives with unit weight."""
    if min(aa1, an1, na1, aq1, nq1) < 0:
        raise ValidationError("counts must be nonnegative")
    if alpha <= 0:
        raise ValidationError("alpha must be positive")
    num = 2.0 * (alpha + 1.0) * aa1
    den = num + alpha * (an1 + na1) + (aq1 + nq1)
    if den == 0:
        raise ValidationError("zero denominator: no qualifying counts")
    return num / den


def xfactor_confusion(ref_labels, pred_labels, qualities, wa, wn) -> XFactorConfusion:
    """Tally a confusion from parallel reference/prediction/quality lists.

    ``ref_labels`` in {normal, abnormal}; ``pred_labels`` additionally
    allow xfactor; ``qualities`` in {good, poor}.
    """
    counts = {}
    for ref, pred, quality in zip(ref_labels, pred_labels, qualities, strict=True):
        r = {"abnormal": "a", "normal": "n"}[ref]
        p = {"abnormal": "a", "xfactor": "q", "normal": "n"}[pred]
        suffix = {"good": "1", "poor": "2"}[quality]
        key = f"{r}{p}{suffix}"
        counts[key] = counts.get(key, 0) + 1
    return XFactorConfusion(wa=tuple(wa), wn=tuple(wn), **counts)


def quality_weights(n_good: int, n_poor: int) -> tuple[float, float]:
    total = n_good + n_poor
    if total == 0:
        return (1.0, 0.0)
    return (n_good / total, n_poor / total)


def kfold_split(manifest: DatasetManifest, k: int, seed: int = 0
                ) -> list[tuple[DatasetManifest, DatasetManifest]]:
    """Stratified, seeded k-fold partition of manifest entries.

    Every entry lands in exactly one test fold; folds balance class
    labels. Raises when any present class has fewer entries than ``k``.
    """
    if k < 2:
        raise ValidationError(f"k must be >= 2, got {k}")
    rng = np.random.default_rng(seed)
    by_label: dict[str, list[ManifestEntry]] = {}
    for e in manifest.entries:
        by_label.setdefault(e.label, []).append(e)
    fold_of: dict[str, int] = {}
    for label in sorted(by_label):
        entries = by_label[label]
        if len(entries) < k:
            raise ValidationError(
                f"class {label!r} has {len(entries)} entries, fewer than k={k}"
            )
        order = rng.permutation(len(entries))
        for pos, idx in enumerate(order):
            fold_of[entries[idx].path] = pos % k
    folds = []
    for fold in range(k):
        train, test = [], []
        for e in manifest.entries:
            target = test if fold_of[e.path] == fold else train
            split = "test" if fold_of[e.path] == fold else "train"
            target.append(ManifestEntry(e.path, e.annotation, e.label, split))
        folds.append(
            (DatasetManifest(tuple(train), manifest.base_dir),
             DatasetManifest(tuple(test), manifest.base_dir))
        )
    return folds


def aggregate_seg_metrics(per_recording) -> dict:
    """Unweighted mean +/- SD of per-recording metrics, skipping absent values."""
    items = list(per_recording)
    if not items:
        raise ValidationError("nothing to aggregate")
    K = len(items[0].per_regime)
    out = {"acc": _mean_sd([m.acc for m in items])}
    for j in range(K):
        for name in ("se", "ppv", "f1"):
            vals = [getattr(m.per_regime[j], name) for m in items]
            vals = [v for v in vals if v is not None]
            out[f"{name}_{j + 1}"] = _mean_sd(vals) if vals else (None, None)
    return out


def _mean_sd(vals) -> tuple[float, float]:
    arr = np.asarray(vals, dtype=float)
    return float(arr.mean()), float(arr.std())
