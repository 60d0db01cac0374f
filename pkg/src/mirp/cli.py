"""``mirp`` command line: validate, train, sweep, report, data."""
from __future__ import annotations

import argparse
import glob
import json
import logging
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from . import datasets, harness, physics, report
from .config import ConfigError, ExperimentConfig, parse_powers
from .nn import CheckpointError, TrainingError

log = logging.getLogger("mirp")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="TOML experiment config")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: out)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override a config value; repeatable")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("-q", "--quiet", action="store_true")
    return p


def _sweep_flags():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--trials", type=int, help="noise trials per power")
    p.add_argument("--powers", help="comma-separated watts, or values with a dBm suffix")
    return p


def build_parser():
    common, sweep = _common(), _sweep_flags()
    ap = Parser(prog="mirp", description="Micro-ring perceptron RF sensing simulator.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {_version()}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=Parser,
                            metavar="{validate,train,sweep,report,data}")
    sub.add_parser("validate", parents=[common], help="derived physics and approximation checks")
    t = sub.add_parser("train", parents=[common], help="noiseless training of the configured mode")
    t.add_argument("--search-gamma", action="store_true", help="grid-search the ring linewidth first")
    s = sub.add_parser("sweep", parents=[common, sweep], help="noisy evaluation over the power grid")
    s.add_argument("--checkpoint", type=Path, help="trained checkpoint (default: OUT/model.ckpt)")
    r = sub.add_parser("report", parents=[common], help="merge sweep CSVs into one CSV and an SVG chart")
    r.add_argument("inputs", nargs="*", type=Path, help="sweep CSVs (default: OUT/**/sweep.csv)")
    d = sub.add_parser("data", help="dataset utilities")
    dsub = d.add_subparsers(dest="data_command", required=True, parser_class=Parser)
    dsub.add_parser("inspect", parents=[common], help="record counts, shapes and RMS statistics")
    syn = dsub.add_parser("synth", parents=[common], help="write the synthetic RF-modulation corpus")
    syn.add_argument("--per-class", type=int, default=None,
                     help="frames per class and split (default: from the record counts)")
    return ap


def load_config(args) -> ExperimentConfig:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"experiment.seed={args.seed}")
    if getattr(args, "trials", None) is not None:
        overrides.append(f"sweep.trials={args.trials}")
    cfg = ExperimentConfig.load(args.config, overrides)
    if getattr(args, "powers", None):
        cfg = cfg.with_updates(sweep={"powers_w": parse_powers(args.powers)})
    return cfg


def _write_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _sidecar(path: Path, cfg, **extra):
    # timestamps live here only, so the primary artifacts stay byte-stable
    _write_json(path, {"config_hash": cfg.hash, "train_hash": cfg.train_hash,
                       "run_id": harness.run_id(cfg), "version": _version(),
                       "written_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"), **extra})


# ---------------------------------------------------------------------------

def cmd_validate(args, cfg):
    summary = harness.validation_summary(cfg)
    print(harness.format_summary(summary))
    _write_json(args.out / "validation.json", summary)
    return EXIT_OK


def cmd_train(args, cfg):
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    data = harness.load_task(cfg)
    if args.search_gamma:
        found = harness.gamma_search(cfg, data=data)
        lines = ["gamma_over_2pi_hz,val_accuracy_noisy,val_accuracy_clean"]
        lines += [f"{g!r},{a!r},{c!r}" for g, a, c in found.table]
        (out / "gamma_search.csv").write_text("\n".join(lines) + "\n")
        print(f"linewidth search: best gamma/2pi = {found.best_over_2pi_hz:.4g} Hz")
        cfg = harness.select_gamma(cfg, found.best_over_2pi_hz)
    (out / "config.toml").write_text(cfg.to_toml())
    state, rep = harness.run_training(cfg, data, out_dir=out)
    _sidecar(out / "train.meta.json", cfg, best_epoch=rep.best_epoch)
    print(f"{cfg.mode} on {cfg.task}: best epoch {rep.best_epoch}, val {rep.val_accuracy:.4f}, "
          f"test {rep.test_accuracy:.4f} (noiseless)")
    print(f"checkpoint: {out / 'model.ckpt'}")
    return EXIT_OK


def cmd_sweep(args, cfg):
    ckpt = args.checkpoint or args.out / "model.ckpt"
    if not Path(ckpt).exists():
        raise FileNotFoundError(f"checkpoint {ckpt} not found; run `mirp train` first or pass --checkpoint")
    state, ckpt_hash = harness.TrainState.load(ckpt)
    data = harness.load_task(cfg)
    result = harness.power_sweep(state, cfg, data.test, checkpoint_hash=ckpt_hash)
    report.write_csv(args.out / "sweep.csv", [result])
    _sidecar(args.out / "sweep.meta.json", cfg, checkpoint=str(ckpt))
    print(report.summary_table([result]))
    return EXIT_OK


def cmd_report(args, cfg):
    inputs = list(args.inputs) or sorted(Path(p) for p in glob.glob(str(args.out / "**" / "sweep.csv"),
                                                                      recursive=True))
    if not inputs:
        raise FileNotFoundError(f"no sweep.csv found under {args.out}; run `mirp sweep` first")
    results = []
    for path in inputs:
        if not Path(path).exists():
            raise FileNotFoundError(f"{path} not found")
        results += report.read_csv(path)
    report.write_csv(args.out / "report.csv", results)
    if cfg["report"]["svg"]:
        report.plot_svg(args.out / "report.svg", results)
    if cfg["report"]["png"]:
        report.plot_svg(args.out / "report.png", results, fmt="png")
    print(report.summary_table(results))
    return EXIT_OK


def cmd_data_inspect(args, cfg):
    root = datasets.data_dir(cfg["data"]["dir"] or None)
    task = cfg.task
    if task == "mnist" or (task == "har" and cfg["data"]["source"] == "files"):
        load, find = ((datasets.load_mnist, datasets.find_mnist) if task == "mnist"
                      else (datasets.load_har, datasets.find_har))
        parts = [load(*find(root, s), split=s) for s in ("train", "test")]
        tr, te = parts
        j, m = tr.x.shape[1:]
        print(f"{len(tr)} train / {len(te)} test, M={m}, J={j}")
    else:
        data = harness.load_task(cfg)
        parts = [data.train, data.val, data.test]
        j, m = data.train.x.shape[1:]
        print(f"{len(data.train)} train / {len(data.val)} val / {len(data.test)} test, M={m}, J={j} "
              f"({data.train.provenance})")
    for ds in parts:
        rms = np.sqrt(np.mean(ds.x ** 2, axis=2))
        counts = np.bincount(ds.y, minlength=ds.classes)
        print(f"  {ds.split:<5} rms mean {rms.mean():.6f} min {rms.min():.6f} max {rms.max():.6f}; "
              f"per class {counts.tolist()}")
    return EXIT_OK


def cmd_data_synth(args, cfg):
    d = cfg["data"]
    out = args.out / "rfmod"
    counts = {"train": d["train_records"], "val": d["val_records"], "test": d["test_records"]}
    for i, (split, n) in enumerate(counts.items()):
        per_class = args.per_class or max(1, n // len(datasets.RFMOD_CLASSES))
        frames, labels = datasets.synth_rfmod_frames(cfg.seed * 3 + i, per_class, snr_db=d["synth_snr_db"])
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"{split}.iq"
        datasets.write_iq(path, frames, labels)
        print(f"wrote {len(labels)} frames to {path}")
    return EXIT_OK


COMMANDS = {"validate": cmd_validate, "train": cmd_train, "sweep": cmd_sweep, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING if args.quiet else (logging.DEBUG if args.verbose > 1 else
                                                logging.INFO if args.verbose else logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
    except ConfigError as exc:
        print(f"mirp: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.command == "data":
        fn = cmd_data_inspect if args.data_command == "inspect" else cmd_data_synth
    else:
        fn = COMMANDS[args.command]
    try:
        return fn(args, cfg)
    except ConfigError as exc:
        print(f"mirp: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, datasets.DatasetError, CheckpointError, TrainingError,
            report.ReportError, physics.PhysicsDomainError, OSError) as exc:
        print(f"mirp: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
