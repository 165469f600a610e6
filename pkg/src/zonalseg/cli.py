"""Command-line entry point: ``zonalseg <verb> [flags]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
Progress is written to stdout as one JSON record per line.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import checkpoint as ckpt_io
from .config import PRETRAIN_EMPTY_MARGIN, PROFILES, ConfigError, ExperimentConfig, build_config, read_config_file
from .crossval import build_networks, evaluate_slices, make_trainer, run_cross_validation
from .data import DatasetError, generate_phantom_dataset, load_dataset
from .evaluation import METRICS_COLUMNS, REGIMES, TEST_DATASETS, MetricsRecord, write_metrics
from .models import ARCHITECTURES, build_model
from .overlay import render_overlay
from .postprocess import ZonalMask
from .preprocess import harmonize_records, prepare_pretraining_data
from .tensor import NumericError
from .training import TrainItem, segment_slices

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
PHANTOM_DATASETS = ("d1", "d2", "promise_like")


def emit(record: dict, sink: Optional[Path] = None) -> None:
    line = json.dumps(record, sort_keys=True)
    print(line, flush=True)
    if sink is not None:
        with open(sink, "a") as fh:
            fh.write(line + "\n")


# -- data ---------------------------------------------------------------------


def cmd_generate_phantoms(cfg: ExperimentConfig, args) -> int:
    root = Path(args.out) if args.out else cfg.data_root
    for ds in PHANTOM_DATASETS:
        desc = cfg.profile_obj.descriptor(ds)
        margin = PRETRAIN_EMPTY_MARGIN if ds == "promise_like" else (0, 0)
        records = generate_phantom_dataset(root, ds, cfg.seed, cfg.patient_count(ds), cfg.slice_count(ds),
                                           sizes=desc.matrix_sizes, style=ds, empty_margin=margin)
        emit({"event": "generated", "dataset": ds, "root": str(root / ds), "patients": len(records),
              "slices": sum(len(r.slices) for r in records), "sizes": [list(s) for s in desc.matrix_sizes]})
    return EXIT_OK


def load_harmonized(cfg: ExperimentConfig, datasets: Sequence[str] = TEST_DATASETS) -> dict:
    target = cfg.preproc().target_size
    out = {}
    for ds in datasets:
        if not (cfg.data_root / ds).is_dir():
            raise DatasetError(f"dataset directory {cfg.data_root / ds} not found (run generate-phantoms first)")
        out[ds] = harmonize_records(load_dataset(cfg.data_root, ds), target)
    return out


# -- training -----------------------------------------------------------------


def cmd_pretrain(cfg: ExperimentConfig, args) -> int:
    root = cfg.data_root / "promise_like"
    if not root.is_dir():
        raise DatasetError(f"pre-training data {root} not found (run generate-phantoms first)")
    samples = prepare_pretraining_data(load_dataset(cfg.data_root, "promise_like"), cfg.preproc().target_size)
    cfg.output.mkdir(parents=True, exist_ok=True)
    log_path = cfg.output / f"pretrain_{cfg.architecture}.jsonl"
    log_path.unlink(missing_ok=True)
    emit({"event": "config", **cfg.effective()}, log_path)
    rc = cfg.run_config()
    trainer = make_trainer(rc, target="wg", mask_input=False,
                           log_fn=lambda rec: emit({"event": "epoch", "stage": "pretrain", **rec}, log_path))
    items = [TrainItem((3, i), s) for i, s in enumerate(samples, start=1)]
    trainer.fit(items, rc.n_epochs)
    path = cfg.output / f"pretrained_{cfg.architecture}.zseg"
    trainer.save(path, {"stage": "pretrain"})
    emit({"event": "saved", "checkpoint": str(path), "samples": len(samples)}, log_path)
    return EXIT_OK


def _load_pretrained(cfg: ExperimentConfig) -> Optional[ckpt_io.Checkpoint]:
    if cfg.pretrained is None:
        return None
    try:
        ckpt = ckpt_io.load_checkpoint(cfg.pretrained)
        # probe shapes now so a mismatch fails before any training
        model, _ = build_networks(cfg.run_config())
        ckpt_io.restore_model(ckpt, model, "model")
    except ckpt_io.CheckpointError as exc:
        raise ConfigError(f"pretrained checkpoint {cfg.pretrained}: {exc}") from exc
    return ckpt


def cmd_crossval(cfg: ExperimentConfig, args) -> int:
    pretrained = _load_pretrained(cfg)
    datasets = load_harmonized(cfg)
    cfg.output.mkdir(parents=True, exist_ok=True)
    log_path = cfg.output / "train_log.jsonl"
    log_path.unlink(missing_ok=True)
    emit({"event": "config", **cfg.effective()}, log_path)
    start = time.perf_counter()
    result = run_cross_validation(
        cfg.regime, datasets, cfg.run_config(), pretrained=pretrained,
        log_fn=lambda rec: emit({"event": "epoch", **rec}, log_path),
        checkpoint_dir=cfg.output / "checkpoints",
    )
    csv_path = write_metrics(result.records, cfg.output / "metrics.csv", per_fold=True)
    for (fold, ds), pred in sorted(result.examples.items()):
        gold = pred.sample
        render_overlay(gold.image, pred.zonal, _gold_zonal(gold), cfg.output / "overlays" / f"fold{fold}_{ds}.png")
    summary = {f"{ds}_{zone}": round(result.mean_dsc(ds, zone), 4) for ds in TEST_DATASETS for zone in ("cg", "pz")}
    emit({"event": "done", "metrics": str(csv_path), "constraint_violations": result.constraint_violations,
          "outputs_checked": result.outputs_checked, "wall_time": round(time.perf_counter() - start, 3), **summary},
         log_path)
    return EXIT_OK


def _gold_zonal(sample) -> ZonalMask:
    return ZonalMask(sample.wg_mask, sample.cg_mask, sample.pz_mask)


# -- inference ----------------------------------------------------------------


def _model_from_checkpoint(path: Path):
    try:
        ckpt = ckpt_io.load_checkpoint(path)
    except (OSError, ckpt_io.CheckpointError) as exc:
        raise ConfigError(f"cannot read checkpoint {path}: {exc}") from exc
    if ckpt.architecture not in ARCHITECTURES:
        raise ConfigError(f"checkpoint {path} holds a {ckpt.architecture!r} network")
    model = build_model(ckpt.architecture, ckpt.base_width, ckpt.scaling_levels, int(ckpt.meta.get("seed", 0)))
    ckpt_io.restore_model(ckpt, model, "model")
    return ckpt, model


def cmd_evaluate(cfg: ExperimentConfig, args) -> int:
    if not args.checkpoint:
        raise ConfigError("evaluate needs --checkpoint")
    ckpt, model = _model_from_checkpoint(Path(args.checkpoint))
    extra = ckpt.meta.get("extra", {})
    datasets = load_harmonized(cfg, args.dataset or TEST_DATASETS)
    records = []
    for ds, patients in datasets.items():
        predictions = segment_slices(model, [s for r in patients for s in r.slices], cfg.preproc())
        cg, pz, bad = evaluate_slices(predictions)
        for zone, values in (("cg", cg), ("pz", pz)):
            arr = np.asarray(values)
            records.append(MetricsRecord(ckpt.architecture, bool(extra.get("pretrained", False)),
                                         extra.get("regime", cfg.regime), ds, zone, int(extra.get("fold", 1)),
                                         float(arr.mean()), float(arr.std()), arr.size))
        emit({"event": "evaluated", "dataset": ds, "slices": len(predictions), "cg": round(float(np.mean(cg)), 4),
              "pz": round(float(np.mean(pz)), 4), "constraint_violations": bad})
    path = write_metrics(records, cfg.output / "evaluation.csv", per_fold=True)
    emit({"event": "done", "metrics": str(path)})
    return EXIT_OK


def cmd_render_overlay(cfg: ExperimentConfig, args) -> int:
    if not args.checkpoint:
        raise ConfigError("render-overlay needs --checkpoint")
    _, model = _model_from_checkpoint(Path(args.checkpoint))
    ds = (args.dataset or ["d1"])[0]
    patients = {r.patient_id: r for r in load_harmonized(cfg, [ds])[ds]}
    if args.patient not in patients:
        raise DatasetError(f"{ds} has no patient {args.patient}")
    slices = patients[args.patient].slices
    if not 1 <= args.slice <= len(slices):
        raise DatasetError(f"{ds} patient {args.patient} has no slice {args.slice}")
    pred = segment_slices(model, [slices[args.slice - 1]], cfg.preproc())[0]
    out = cfg.output / f"overlay_{ds}_p{args.patient:03d}_s{args.slice:03d}.png"
    render_overlay(pred.sample.image, pred.zonal, _gold_zonal(pred.sample), out)
    emit({"event": "rendered", "path": str(out)})
    return EXIT_OK


# -- reporting ----------------------------------------------------------------

REPORT_COLUMNS = METRICS_COLUMNS + ("best",)


def merge_summaries(paths: Sequence[Path]) -> list[dict]:
    """``fold=all`` rows of every CSV; identical duplicates collapse, conflicting ones raise."""
    rows: dict[tuple, dict] = {}
    for path in paths:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != METRICS_COLUMNS:
                raise DatasetError(f"{path}: unexpected columns {reader.fieldnames}")
            for rec in reader:
                if rec["fold"] != "all":
                    continue
                key = tuple(rec[c] for c in METRICS_COLUMNS[:5])
                if key in rows and rows[key] != rec:
                    raise DatasetError(f"{path}: conflicting duplicate row for {key}")
                rows[key] = rec
    out = list(rows.values())
    groups: dict[tuple, float] = {}
    for rec in out:
        g = (rec["train_regime"], rec["test_dataset"], rec["zone"])
        groups[g] = max(groups.get(g, -1.0), float(rec["dsc_mean"]))
    for rec in out:
        g = (rec["train_regime"], rec["test_dataset"], rec["zone"])
        rec["best"] = "1" if float(rec["dsc_mean"]) == groups[g] else "0"
    order = {r: i for i, r in enumerate(REGIMES)}
    out.sort(key=lambda r: (order.get(r["train_regime"], 99), r["test_dataset"], r["zone"], r["arch"], r["pretrained"]))
    return out


def cmd_report(cfg: ExperimentConfig, args) -> int:
    if not args.inputs:
        raise ConfigError("report needs at least one metrics CSV")
    for p in args.inputs:
        if not Path(p).is_file():
            raise DatasetError(f"metrics file {p} not found")
    rows = merge_summaries([Path(p) for p in args.inputs])
    cfg.output.mkdir(parents=True, exist_ok=True)
    path = cfg.output / "report.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, REPORT_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    header = f"{'regime':<7}{'test':<5}{'zone':<5}{'arch':<9}{'pre':<4}{'DSC':>16}"
    lines = [header, "-" * len(header)]
    for r in rows:
        mark = " *" if r["best"] == "1" else ""
        lines.append(f"{r['train_regime']:<7}{r['test_dataset']:<5}{r['zone']:<5}{r['arch']:<9}{r['pretrained']:<4}"
                     f"{float(r['dsc_mean']):>8.2f} ± {float(r['dsc_std']):5.2f}{mark}")
    text = "\n".join(lines) + "\n"
    (cfg.output / "report.txt").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


# -- entry point ----------------------------------------------------------------

COMMANDS = {
    "generate-phantoms": cmd_generate_phantoms,
    "pretrain": cmd_pretrain,
    "crossval": cmd_crossval,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
    "render-overlay": cmd_render_overlay,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zonalseg", description="Prostate zonal segmentation experiments.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("inputs", nargs="*", help="metrics CSVs (report only)")
    parser.add_argument("--config", help="INI config file")
    parser.add_argument("--arch", choices=ARCHITECTURES)
    parser.add_argument("--regime", choices=REGIMES)
    parser.add_argument("--pretrained", help="pre-trained checkpoint to fine-tune from")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--profile", choices=sorted(PROFILES))
    parser.add_argument("--out", help="output directory (data root for generate-phantoms)")
    parser.add_argument("--data", help="dataset root")
    parser.add_argument("--patients", type=int, help="phantom patients per dataset")
    parser.add_argument("--slices", type=int, help="phantom slices per patient")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--width", type=int, help="base channel width")
    parser.add_argument("--checkpoint", help="model checkpoint (evaluate, render-overlay)")
    parser.add_argument("--dataset", action="append", choices=TEST_DATASETS, help="dataset(s) to evaluate")
    parser.add_argument("--patient", type=int, default=1)
    parser.add_argument("--slice", type=int, default=1)
    return parser


def resolve_config(args) -> ExperimentConfig:
    file_values = read_config_file(args.config) if args.config else {}
    cfg = build_config(
        file_values, architecture=args.arch, regime=args.regime, pretrained=args.pretrained, seed=args.seed,
        profile=args.profile, output=None if args.command == "generate-phantoms" else args.out,
        data_root=args.data, patients=args.patients, slices_per_patient=args.slices, epochs=args.epochs,
        base_width=args.width,
    )
    return cfg.validate(need_pretrained=args.command == "crossval")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        if args.inputs and args.command != "report":
            raise ConfigError(f"{args.command} takes no positional arguments")
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        emit({"event": "error", "kind": "config", "message": str(exc)})
        return EXIT_CONFIG
    except (DatasetError, FileNotFoundError) as exc:
        emit({"event": "error", "kind": "data", "message": str(exc)})
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        emit({"event": "error", "kind": "numeric", "message": str(exc)})
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
