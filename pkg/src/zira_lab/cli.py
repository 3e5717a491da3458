"""Command-line front end: pretrain, run, sweep, probe-noise, report.

Exit codes: 0 ok, 2 config, 3 pretrain, 4 checkpoint, 5 report.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from . import plotting
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, load_config
from .errors import CheckpointError, ConfigError, PretrainConvergenceError, ZiraError
from .evalkit import RunRecord
from .experiment import general_holdout, pretrain, run_method, task_sequence
from .fileio import atomic_write_text
from .sweep import grid_csv, median_table, medians_csv, run_ablation_grid
from .taskgen import save_datasets
from .toymodel import noise_probe
from .trainer import METHODS

log = logging.getLogger("zira_lab")

EXIT_OK, EXIT_CONFIG, EXIT_PRETRAIN, EXIT_CHECKPOINT, EXIT_REPORT = 0, 2, 3, 4, 5


class ReportError(ZiraError):
    pass


def _seed(cfg: ExperimentConfig, seed: int | None) -> int:
    return cfg.seeds[0] if seed is None else seed


def _checkpoint_for(cfg: ExperimentConfig, path):
    model, header = load_checkpoint(path)
    if model.dims != cfg.model_dims():
        raise CheckpointError(f"checkpoint {path} was built with different model dims than the config")
    return model, header


def cmd_pretrain(args) -> int:
    cfg = load_config(args.config)
    seed = _seed(cfg, args.seed)
    model = pretrain(cfg, seed)
    out = Path(args.out) if args.out else Path(cfg.output_dir) / f"pretrained_seed{seed}.ckpt"
    save_checkpoint(out, model)
    print(f"seed {seed}: general holdout accuracy {model.pretrain_accuracy:.6f}")
    print(f"checkpoint written to {out}")
    return EXIT_OK


def _norm_csv(record: RunRecord) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["task_index", "epoch", "modality", "mean_l1_norm"])
    for r in record.norm_curves:
        w.writerow([r["task_index"], r["epoch"], r["modality"], f"{r['mean_l1_norm']:.6f}"])
    return buf.getvalue()


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    model, header = _checkpoint_for(cfg, args.checkpoint)
    seed = header["seed"]
    method = args.method or cfg.train.method
    out = Path(args.out) if args.out else Path(cfg.output_dir) / f"run_{method}_seed{seed}"
    record = run_method(cfg, seed, method, model)
    atomic_write_text(out / "run.json", record.to_json())
    from .sweep import GridCell
    atomic_write_text(out / "metrics.csv", grid_csv([GridCell({"method": method}, seed, record)], ["method"]))
    atomic_write_text(out / "norm_curve.csv", _norm_csv(record))
    if not args.no_plot:
        plotting.combined_curves_figure(record.norm_curves, out / "curves.svg")
    if args.export_data:
        tasks = task_sequence(cfg, seed)
        datasets = [general_holdout(cfg, seed)] + [d for t in tasks for d in (t.train, t.holdout)]
        save_datasets(out / "datasets.npz", datasets)
    print(f"{method} seed {seed}: zcoco {record.zcoco_analogue:.6f} avg {record.avg:.6f} hap {record.hap:.6f}")
    print(f"results written to {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    if cfg.grid is None or not cfg.grid.axes:
        raise ConfigError(f"{args.config}: sweep needs a grid.axes section")
    axes = cfg.grid.axes
    cells = run_ablation_grid(cfg, axes, workers=args.workers)
    out = Path(args.out) if args.out else Path(cfg.output_dir) / "grid.csv"
    names = list(axes)
    atomic_write_text(out, grid_csv(cells, names))
    atomic_write_text(out.with_name(out.stem + "_medians.csv"), medians_csv(median_table(cells, names), names))
    failed = [c for c in cells if c.error]
    if failed:
        atomic_write_text(out.with_name(out.stem + "_failures.json"),
                          json.dumps([{"values": c.values, "seed": c.seed, "error": c.error} for c in failed],
                                     indent=2, sort_keys=True) + "\n")
    print(f"{len(cells) - len(failed)} rows written to {out} ({len(failed)} failed cells)")
    return EXIT_OK


def _parse_sigmas(text: str) -> list[float]:
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError as e:
        raise ConfigError(f"--sigmas: {e}") from e


def cmd_probe_noise(args) -> int:
    cfg = load_config(args.config)
    sigmas = _parse_sigmas(args.sigmas)
    if args.checkpoint:
        model, header = _checkpoint_for(cfg, args.checkpoint)
        seed = header["seed"]
    else:
        seed = _seed(cfg, args.seed)
        model = pretrain(cfg, seed)
    try:
        points = noise_probe(model, general_holdout(cfg, seed), sigmas, seed)
    except ZiraError as e:
        raise ConfigError(str(e)) from e
    out = Path(args.out) if args.out else Path(cfg.output_dir) / f"noise_seed{seed}.csv"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sigma", "accuracy"])
    for s, a in points:
        w.writerow([f"{s:.6f}", f"{a:.6f}"])
    atomic_write_text(out, buf.getvalue())
    if not args.no_plot:
        plotting.noise_curve_figure(points, out.with_suffix(".svg"))
    for s, a in points:
        print(f"sigma {s:g}: accuracy {a:.6f}")
    return EXIT_OK


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    path = run_dir / "run.json"
    if not run_dir.is_dir() or not path.is_file():
        raise ReportError(f"{run_dir}: no run.json to report on")
    try:
        record = RunRecord.from_dict(json.loads(path.read_text()))
    except (ValueError, TypeError) as e:
        raise ReportError(f"{path}: unreadable run record: {e}") from e
    method = record.config.get("train", {}).get("method", "run")
    figures = []
    for m in sorted({r["modality"] for r in record.norm_curves}):
        figures.append(plotting.norm_curve_figure({method: record.norm_curves}, m, run_dir / f"norm_{m}.svg"))
    lines = [
        f"# {method} (seed {record.seed})",
        "",
        "| metric | value |",
        "|---|---|",
        f"| zero-shot retention | {record.zcoco_analogue:.4f} |",
        f"| downstream avg | {record.avg:.4f} |" if record.avg is not None else "| downstream avg | n/a |",
        f"| hAP | {record.hap:.4f} |" if record.hap is not None else "| hAP | n/a |",
        f"| final probe norm | {record.final_norm():.6f} |",
        "",
        "| task | accuracy |",
        "|---|---|",
        *(f"| {k} | {v:.4f} |" for k, v in record.per_task_acc.items()),
        "",
        *(f"![{f.stem}]({f.name})" for f in figures),
        "",
    ]
    atomic_write_text(run_dir / "report.md", "\n".join(lines))
    print(f"report written to {run_dir / 'report.md'} ({len(figures)} figures)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="zira-lab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("pretrain", help="build and save the pretrained surrogate model")
    s.add_argument("config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("run", help="run one method over the task sequence")
    s.add_argument("config")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--method", choices=sorted(METHODS))
    s.add_argument("--out")
    s.add_argument("--no-plot", action="store_true")
    s.add_argument("--export-data", action="store_true", help="also write the generated datasets")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run the config's grid axes over all seeds")
    s.add_argument("config")
    s.add_argument("--out")
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("probe-noise", help="accuracy under Gaussian noise on detector inputs")
    s.add_argument("config")
    s.add_argument("--sigmas", default="0,0.1,0.2,0.5,1.0")
    s.add_argument("--checkpoint")
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.add_argument("--no-plot", action="store_true")
    s.set_defaults(func=cmd_probe_noise)

    s = sub.add_parser("report", help="render figures and a markdown summary for a run directory")
    s.add_argument("run_dir")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except PretrainConvergenceError as e:
        print(f"pretraining failed: {e}", file=sys.stderr)
        return EXIT_PRETRAIN
    except CheckpointError as e:
        print(f"checkpoint error: {e}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except ReportError as e:
        print(f"report error: {e}", file=sys.stderr)
        return EXIT_REPORT


if __name__ == "__main__":
    sys.exit(main())
