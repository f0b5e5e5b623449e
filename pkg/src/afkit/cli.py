"""Command-line interface chaining the toolkit into runnable experiments.

Subcommands: ``gen`` (synthetic corpus), ``train`` / ``infer`` (peak model),
``hrv`` (feature table), ``classify`` (rhythm classification), ``loss-curves``
(misalignment and sharpness sweeps), and ``pipeline`` (the full clip-length
experiment). Every command takes ``--seed``; identical seeds reproduce every
data output byte for byte. Wall-clock timings and other non-reproducible
metadata go to ``run_meta.json``, never into data files.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .classify import save_report
from .errors import AfkitError
from .experiments import (
    ExperimentConfig,
    TASKS,
    classify_task,
    evaluate_at_length,
    load_corpus,
    monitoring_summary,
    provenance,
    task_features,
    train_on_corpus,
)
from .hrv import extract, read_features_csv, write_features_csv
from .losses import LOSS_KINDS, loss_vs_shift, loss_vs_sharpness
from .peaknet import TrainConfig, infer_peaks, load_model, save_model
from .series import PeakTrain, ibi_from_peaks, load_clip
from .synth import DEFAULT_RATE_HZ, RHYTHM_KINDS, gen_corpus


def _say(args, msg: str) -> None:
    if not getattr(args, "quiet", False):
        print(msg)


def _load_config_defaults(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    """Apply a JSON config file (flag names as keys) as parser defaults."""
    if "--config" in argv:
        idx = argv.index("--config")
        path = argv[idx + 1]
        doc = json.loads(Path(path).read_text())
        parser.set_defaults(**{k.replace("-", "_"): v for k, v in doc.items()})
    return argv


def _write_meta(out_dir: Path, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_meta.json").write_text(json.dumps(payload, sort_keys=True, indent=1))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    classes = tuple(args.classes.split(","))
    t0 = time.perf_counter()
    manifest = gen_corpus(
        args.out, classes=classes, n_subjects_per_class=args.subjects,
        clips_per_subject=args.clips, duration_s=args.dur, snr_db=args.snr,
        seed=args.seed, rate_hz=args.rate,
    )
    _write_meta(Path(args.out), {"command": "gen", "wall_clock_s": time.perf_counter() - t0})
    _say(args, f"wrote {len(manifest['clips'])} clips to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = TrainConfig(
        epochs=args.epochs, learning_rate=args.lr, batch_size=args.batch,
        loss_kind=args.loss, seed=args.seed, clip_len_samples=args.clip_len,
        optimizer=args.optimizer,
    )
    clips = load_corpus(args.corpus)
    t0 = time.perf_counter()
    params, record, train_subjects, val_subjects = train_on_corpus(clips, cfg)
    save_model(args.out, params, seed=cfg.seed, loss_kind=cfg.loss_kind)
    _write_meta(Path(args.out).parent, {
        "command": "train",
        "wall_clock_s": time.perf_counter() - t0,
        "val_ibi_mae_ms": record.val_ibi_mae_ms,
        "epoch_losses": list(record.epoch_losses),
        "n_train_subjects": len(train_subjects),
        "n_val_subjects": len(val_subjects),
    })
    _say(args, f"final epoch loss {record.epoch_losses[-1]:.4f}; "
               f"held-out IBI MAE {record.val_ibi_mae_ms:.1f} ms; model -> {args.out}")
    return 0


def cmd_infer(args) -> int:
    params, _meta = load_model(args.model)
    series, _true, label, subject_id = load_clip(args.clip)
    peaks = infer_peaks(params, series)
    doc = {"rate_hz": series.rate_hz, "clip_len": len(series),
           "peaks": peaks.indices.tolist()}
    if label is not None:
        doc["label"] = label
    if subject_id is not None:
        doc["subject_id"] = subject_id
    Path(args.out).write_text(json.dumps(doc, sort_keys=True))
    _say(args, f"{len(peaks)} peaks -> {args.out}")
    return 0


def cmd_hrv(args) -> int:
    paths = sorted(Path(args.peaks_dir).rglob("*.json"))
    vectors, skipped = [], 0
    for path in paths:
        doc = json.loads(path.read_text())
        if "peaks" not in doc:
            continue
        peaks = PeakTrain(np.asarray(doc["peaks"], dtype=int),
                          float(doc["rate_hz"]), int(doc["clip_len"]))
        try:
            ibi = ibi_from_peaks(peaks)
            vectors.append(extract(ibi, label=doc.get("label", ""),
                                   subject_id=int(doc.get("subject_id", -1))))
        except AfkitError:
            skipped += 1
    write_features_csv(vectors, args.out)
    _say(args, f"{len(vectors)} feature rows -> {args.out} ({skipped} clips skipped)")
    return 0


def cmd_classify(args) -> int:
    features = read_features_csv(args.features)
    positive, keep, remap = TASKS[args.task]
    rows = []
    for f in features:
        if f.label not in keep:
            continue
        label = remap.get(f.label, f.label)
        rows.append(f if label == f.label else
                    type(f)(**{**f.as_dict(), "label": label}))
    report = classify_task(rows, args.task, folds=args.folds, seed=args.seed)
    save_report(report, args.out)
    p = report.pooled
    _say(args, f"{args.task}: accuracy {p['accuracy']:.4f} "
               f"sensitivity {p['sensitivity']:.4f} specificity {p['specificity']:.4f} "
               f"-> {args.out}")
    return 0


def _self_check_loss_curves(shifts, curves, sharp_grid, sharp_curves) -> list[str]:
    lines = []

    def check(name, ok):
        lines.append(f"{'PASS' if ok else 'FAIL'}  {name}")

    zero = np.flatnonzero(shifts == 0)[0]
    for kind in LOSS_KINDS:
        v = curves[kind]
        check(f"shift minimum at 0 ({kind})", np.argmin(v) == zero)
    ws = curves["ws"]
    check("ws symmetric about 0", np.allclose(ws, ws[::-1], atol=1e-9))
    right = ws[zero:]
    check("ws strictly increasing in |shift|", bool(np.all(np.diff(right) > 0)))
    kl_right = curves["kl"][zero:]
    check("kl strictly increasing in |shift|", bool(np.all(np.diff(kl_right) > 0)))
    for kind in LOSS_KINDS:
        v = sharp_curves[kind]
        check(f"sharpness nondecreasing ({kind})", bool(np.all(np.diff(v) >= -1e-12)))
    top = {k: sharp_curves[k][-1] for k in LOSS_KINDS}
    check("ws largest at flattest peak",
          all(top["ws"] >= top[k] for k in ("sed", "kl", "js")))
    return lines


def cmd_loss_curves(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    shifts = None
    curves = {}
    for kind in LOSS_KINDS:
        shifts, values = loss_vs_shift(kind, max_shift=args.max_shift,
                                       sigma2=args.sigma2, length=args.length)
        curves[kind] = values
    with open(out / "shift_sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sweep_var", "sed", "kl", "js", "ws"])
        for i, dt in enumerate(shifts):
            writer.writerow([int(dt)] + [repr(float(curves[k][i]))
                                         for k in ("sed", "kl", "js", "ws")])

    sharp_grid = np.array([0.01, 0.1, 1.0, 10.0])
    sharp_curves = {}
    for kind in LOSS_KINDS:
        _, values = loss_vs_sharpness(kind, sharp_grid, length=args.length)
        sharp_curves[kind] = values
    with open(out / "sharpness_sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sweep_var", "sed", "kl", "js", "ws"])
        for i, s2 in enumerate(sharp_grid):
            writer.writerow([repr(float(s2))] + [repr(float(sharp_curves[k][i]))
                                                 for k in ("sed", "kl", "js", "ws")])

    lines = _self_check_loss_curves(shifts, curves, sharp_grid, sharp_curves)
    for line in lines:
        _say(args, line)
    if any(line.startswith("FAIL") for line in lines):
        print("loss-curve self-check failed", file=sys.stderr)
        return 1
    _say(args, f"sweeps -> {out}")
    return 0


def cmd_pipeline(args) -> int:
    config = ExperimentConfig(
        corpus=args.corpus, out_dir=args.out,
        clip_lengths_s=tuple(float(x) for x in args.clip_lengths.split(",")),
        loss_kind=args.loss, seed=args.seed, epochs=args.epochs,
        learning_rate=args.lr, batch_size=args.batch,
        clip_len_samples=args.clip_len, folds=args.folds,
    )
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()

    clips = load_corpus(config.corpus)
    labels_present = {c.label for c in clips}
    duration_s = clips[0].channels.duration_s

    if args.model:
        params, _ = load_model(args.model)
        train_meta = {"model": str(args.model)}
    else:
        cfg = TrainConfig(epochs=config.epochs, learning_rate=config.learning_rate,
                          batch_size=config.batch_size, loss_kind=config.loss_kind,
                          seed=config.seed, clip_len_samples=config.clip_len_samples)
        params, record, train_subjects, _val = train_on_corpus(clips, cfg)
        save_model(out / "model.json", params, seed=cfg.seed, loss_kind=cfg.loss_kind)
        train_meta = {"val_ibi_mae_ms": record.val_ibi_mae_ms,
                      "n_train_subjects": len(train_subjects)}
        _say(args, f"trained model: held-out IBI MAE {record.val_ibi_mae_ms:.1f} ms")

    tasks = [t for t in args.tasks.split(",") if t]
    for task in tasks:
        if task not in TASKS:
            print(f"unknown task {task!r}", file=sys.stderr)
            return 2

    metric_rows = []
    error_rows = []
    for clip_len_s in config.clip_lengths_s:
        if clip_len_s > duration_s:
            _say(args, f"skipping clip length {clip_len_s} s (> corpus duration)")
            continue
        results = evaluate_at_length(params, clips, clip_len_s)
        summary = monitoring_summary(results)
        error_rows.append({"clip_len_s": clip_len_s, **summary})
        _say(args, f"[{clip_len_s:g} s] IBI MAE "
                   f"{summary['ibi_mae_ms'] if summary['ibi_mae_ms'] is not None else float('nan'):.1f} ms "
                   f"over {summary['n_ibi_windows']} windows")
        for task in tasks:
            positive, keep, _ = TASKS[task]
            if not set(keep) <= labels_present:
                continue
            feats = task_features(results, task)
            report = classify_task(feats, task, folds=config.folds, seed=config.seed)
            report_path = out / f"report_{task}_{clip_len_s:g}s.json"
            doc = report.as_dict()
            doc["task"] = task
            doc["clip_len_s"] = clip_len_s
            doc["provenance"] = provenance(config)
            Path(report_path).write_text(json.dumps(doc, sort_keys=True, indent=1))
            row = {"clip_len_s": clip_len_s, "task": task, **{
                k: report.pooled.get(k) for k in
                ("accuracy", "sensitivity", "specificity", "f1", "auc")}}
            metric_rows.append(row)
            _say(args, f"[{clip_len_s:g} s] {task}: accuracy {report.pooled['accuracy']:.4f}")

    with open(out / "metrics_by_length.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["clip_len_s", "task", "accuracy", "sensitivity",
                         "specificity", "f1", "auc"])
        for r in metric_rows:
            writer.writerow([r["clip_len_s"], r["task"]] +
                            [repr(float(r[k])) for k in
                             ("accuracy", "sensitivity", "specificity", "f1", "auc")])

    with open(out / "hr_ibi_errors.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        cols = ["clip_len_s", "n_windows", "n_hr_windows", "n_ibi_windows",
                "mae_bpm", "rmse_bpm", "pearson_r", "ibi_mae_ms", "ibi_std_ms", "ac_ibi"]
        writer.writerow(cols)
        for r in error_rows:
            writer.writerow([r.get(c) if not isinstance(r.get(c), float)
                             else repr(r.get(c)) for c in cols])

    _write_meta(out, {"command": "pipeline",
                      "wall_clock_s": time.perf_counter() - t0,
                      **train_meta})
    return 0


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--config", type=str, default=None,
                   help="JSON file of flag values; explicit flags win")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="afkit",
                                     description="systolic-peak learning toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic rhythm corpus")
    p.add_argument("--classes", default="healthy_rest,healthy_exercise,sr,af",
                   help=f"comma list from {','.join(RHYTHM_KINDS)}")
    p.add_argument("--subjects", type=int, default=20)
    p.add_argument("--clips", type=int, default=4)
    p.add_argument("--dur", type=float, default=30.0)
    p.add_argument("--snr", type=float, default=0.0)
    p.add_argument("--rate", type=float, default=DEFAULT_RATE_HZ)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train the peak estimator on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--loss", default="ws", choices=LOSS_KINDS)
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--clip-len", type=int, default=512)
    p.add_argument("--optimizer", default="adam", choices=("adam", "sgd"))
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="infer peaks for one clip")
    p.add_argument("--model", required=True)
    p.add_argument("--clip", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("hrv", help="HRV feature table from peak files")
    p.add_argument("--peaks-dir", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_hrv)

    p = sub.add_parser("classify", help="rhythm classification from a feature table")
    p.add_argument("--features", required=True)
    p.add_argument("--task", required=True, choices=sorted(TASKS))
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("loss-curves", help="misalignment and sharpness sweeps")
    p.add_argument("--max-shift", type=int, default=50)
    p.add_argument("--sigma2", type=float, default=0.1)
    p.add_argument("--length", type=int, default=1001)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_loss_curves)

    p = sub.add_parser("pipeline", help="end-to-end clip-length experiment")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", default=None, help="reuse a trained model checkpoint")
    p.add_argument("--clip-lengths", default="10,20,30,60,120")
    p.add_argument("--tasks", default="af-vs-healthy,af-vs-sr")
    p.add_argument("--loss", default="ws", choices=LOSS_KINDS)
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--clip-len", type=int, default=512)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        if "--config" in argv:
            # configs apply to the active subcommand's parser defaults
            sub_name = argv[0] if argv and not argv[0].startswith("-") else None
            if sub_name is not None:
                for action in parser._subparsers._group_actions:
                    if sub_name in action.choices:
                        _load_config_defaults(action.choices[sub_name], argv)
        args = parser.parse_args(argv)
        return args.func(args)
    except AfkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
