"""Command-line entry points.

Subcommands: ingest, preprocess, train, segment, classify, evaluate,
synth. Exit codes: 0 success, 2 validation/format/config error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import pipeline
from .errors import (ConfigError, EstimationError, FormatError,
                     HeartMsarError, NumericalError, ValidationError)
from .hmm import load_bank, save_bank
from .io import (load_annotations, load_manifest, load_recording,
                 load_state_runs, save_recording)
from .metrics import seg_metrics, segmentation_confusion
from .preprocess import preprocess_signal
from .synth import write_synthetic_dataset


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, FormatError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, EstimationError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except HeartMsarError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="heartmsar",
        description="Heart sound segmentation and classification",
    )
    sub = parser.add_subparsers(required=True)

    p = sub.add_parser("ingest", help="validate a manifest and its files")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("preprocess", help="condition recordings to CSV files")
    p.add_argument("manifest")
    _add_common(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train the segmenter or the classifier")
    p.add_argument("manifest")
    p.add_argument("--target", choices=("segmenter", "classifier"), required=True)
    p.add_argument("--segmenter-model", help="segmenter JSON for unannotated beats")
    p.add_argument("--no-xfactor", action="store_true",
                   help="skip the x-factor class when training the classifier")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("segment", help="segment recordings and score them")
    p.add_argument("manifest")
    p.add_argument("--method", choices=pipeline.METHODS, default=None)
    p.add_argument("--model", required=True, help="trained segmenter JSON")
    _add_common(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("classify", help="classify beats and recordings")
    p.add_argument("manifest")
    p.add_argument("--model", required=True, help="trained classifier bank JSON")
    p.add_argument("--xfactor", action="store_true")
    p.add_argument("--segmenter-model", help="segmenter JSON for unannotated beats")
    _add_common(p)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("evaluate", help="score predicted tracks against references")
    p.add_argument("manifest")
    p.add_argument("--pred-dir", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--n-train", type=int, default=4)
    p.add_argument("--n-test", type=int, default=4)
    p.add_argument("--cycles", type=int, default=8)
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    return parser


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--rate", type=int, default=None, help="working sample rate")
    p.add_argument("--band", default=None, help="band-pass as LOW:HIGH Hz")
    p.add_argument("--order", type=int, default=None, help="Butterworth order")
    p.add_argument("--spike-window", type=float, default=None)
    p.add_argument("--no-normalize", action="store_true")


def _resolve_config(args) -> pipeline.PipelineConfig:
    cfg = pipeline.load_config(args.config) if args.config else pipeline.PipelineConfig()
    pre = cfg.preprocess
    if args.band:
        try:
            low, high = (float(v) for v in args.band.split(":"))
        except ValueError:
            raise ConfigError(f"--band expects LOW:HIGH, got {args.band!r}") from None
        pre = replace(pre, band_low=low, band_high=high)
    if args.order is not None:
        pre = replace(pre, filter_order=args.order)
    if args.spike_window is not None:
        pre = replace(pre, spike_window=args.spike_window)
    if args.no_normalize:
        pre = replace(pre, normalize=False)
    cfg = replace(cfg, preprocess=pre)
    if args.rate is not None:
        cfg = replace(cfg, working_rate=args.rate)
    if args.jobs is not None:
        cfg = replace(cfg, jobs=args.jobs)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "method", None):
        cfg = replace(cfg, method=args.method)
    return cfg


def cmd_ingest(args) -> int:
    manifest = load_manifest(args.manifest)
    if not len(manifest):
        raise ValidationError("no entries")
    n_ann = 0
    for entry in manifest.entries:
        load_recording(manifest.resolve(entry.path))
        if entry.annotation:
            load_annotations(manifest.resolve(entry.annotation))
            n_ann += 1
    print(f"ok: {len(manifest)} entries ({n_ann} annotated)")
    return 0


def cmd_preprocess(args) -> int:
    cfg = _resolve_config(args)
    manifest = load_manifest(args.manifest)
    if not len(manifest):
        raise ValidationError("no entries")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for entry in manifest.entries:
        rec, x = pipeline.load_and_condition(entry.path, manifest, cfg)
        from .io import Recording

        save_recording(Recording(x, rec.sample_rate, rec.id),
                       out / f"{Path(entry.path).stem}.pre.csv", fmt="csv-float")
    pipeline.save_config(cfg, out / "resolved_config.txt")
    print(f"preprocessed {len(manifest)} recordings -> {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    manifest = load_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.target == "segmenter":
        model, logs = pipeline.train_segmenter(manifest, cfg)
        pipeline.save_segmenter(model, out / "segmenter.json")
        (out / "training_log.txt").write_text("\n".join(logs) + "\n")
        print(f"segmenter written to {out / 'segmenter.json'}")
    else:
        segmenter = (pipeline.load_segmenter(args.segmenter_model)
                     if args.segmenter_model else None)
        bank = pipeline.train_classifier(
            manifest, cfg, segmenter=segmenter, with_xfactor=not args.no_xfactor,
        )
        save_bank(bank, out / "classifier.json")
        lines = []
        for label, model in bank.models.items():
            lls = ", ".join(f"{v:.3f}" for v in model.training_loglik)
            lines.append(f"{label}: loglik per iteration: {lls}")
        (out / "training_log.txt").write_text("\n".join(lines) + "\n")
        print(f"classifier written to {out / 'classifier.json'}")
    pipeline.save_config(cfg, out / "resolved_config.txt")
    return 0


def cmd_segment(args) -> int:
    cfg = _resolve_config(args)
    manifest = load_manifest(args.manifest)
    model = pipeline.load_segmenter(args.model)
    report = pipeline.run_segment(manifest, cfg, cfg.method, args.out, model)
    if "acc" in report:
        mean, sd = report["acc"]
        print(f"method={cfg.method} recordings={report['n_recordings']} "
              f"acc={100 * mean:.2f}% +/- {100 * sd:.2f}")
    else:
        print(f"segmented {report['n_recordings']} recordings (no references)")
    return 0


def cmd_classify(args) -> int:
    cfg = _resolve_config(args)
    manifest = load_manifest(args.manifest)
    bank = load_bank(args.model)
    segmenter = (pipeline.load_segmenter(args.segmenter_model)
                 if args.segmenter_model else None)
    report = pipeline.run_classify(
        manifest, cfg, bank, args.out, with_xfactor=args.xfactor,
        segmenter=segmenter,
    )
    for level in ("beat", "recording"):
        m = report[level]
        if m is None:
            continue
        se = f"{100 * m.se:.2f}" if m.se is not None else "-"
        f1 = f"{100 * m.f1:.2f}" if m.f1 is not None else "-"
        print(f"{level}: Se={se}% Acc={100 * m.acc:.2f}% F1={f1}%")
    if args.xfactor:
        for level in ("beat_xfactor", "recording_xfactor"):
            m = report[level]
            vals = {k: (f"{100 * v:.2f}" if v is not None else "-")
                    for k, v in m.items()}
            print(f"{level}: Se={vals['se']}% Sp={vals['sp']}% "
                  f"MAcc={vals['macc']}% pF1={vals['penalized_f1']}%")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _resolve_config(args)
    manifest = load_manifest(args.manifest)
    pred_dir = Path(args.pred_dir)
    per_rec = []
    for entry in manifest.segmentation_entries():
        if not entry.annotation:
            continue
        pred_path = pred_dir / f"{Path(entry.path).stem}.pred.csv"
        if not pred_path.exists():
            continue
        pred = load_state_runs(pred_path)
        native_rate = load_recording(manifest.resolve(entry.path)).sample_rate
        track = load_annotations(manifest.resolve(entry.annotation))
        if native_rate > cfg.working_rate:
            from .io import rescale_track

            track = rescale_track(track, native_rate, cfg.working_rate)
        ref = track.to_labels()
        L = min(len(pred), len(ref))
        per_rec.append(seg_metrics(segmentation_confusion(pred[:L], ref[:L])))
    if not per_rec:
        raise ValidationError("no (prediction, reference) pairs found")
    from .metrics import aggregate_seg_metrics

    agg = aggregate_seg_metrics(per_rec)
    mean, sd = agg["acc"]
    print(f"evaluated {len(per_rec)} recordings: acc={100 * mean:.2f}% +/- {100 * sd:.2f}")
    return 0


def cmd_synth(args) -> int:
    cfg = _resolve_config(args)
    manifest_path = write_synthetic_dataset(
        args.out, fs=cfg.working_rate, n_train=args.n_train,
        n_test=args.n_test, n_cycles=args.cycles, seed=cfg.seed,
    )
    print(f"synthetic manifest: {manifest_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
