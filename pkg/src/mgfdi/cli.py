"""``mgfdi`` command line: dataset, train, simulate, evaluate, plot.

Exit codes: 0 success, 1 usage error (bad flags, missing or invalid config),
2 runtime fault (missing dataset or model, corrupt files, numerical faults).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, SimulationFault, TrainingFault

log = logging.getLogger("mgfdi")

EXIT_OK, EXIT_USAGE, EXIT_FAULT = 0, 1, 2
DATASET_FILE = "dataset.csv"
MODEL_DIR = "models"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def _defaults() -> dict:
    from .harness.config import config_to_dict
    from .harness.datagen import DatagenConfig
    from .harness.scenarios import normal_operation
    from .ml.logreg import LogRegConfig
    from .ml.lstm import TrainConfig

    gen = asdict(DatagenConfig())
    gen.pop("base")
    return _jsonable({"scenario": config_to_dict(normal_operation()), "dataset": gen,
                      "lstm": asdict(TrainConfig()), "logreg": asdict(LogRegConfig())})


def _seed(args):
    if args.seed is not None:
        return args.seed
    env = os.environ.get("MGFDI_SEED")
    if env is None:
        return None
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"MGFDI_SEED must be an integer, got {env!r}") from None


def _read_json(path) -> dict:
    try:
        d = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(d, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    return d


def _section(cls, d: dict, where: str, **fixed):
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise UsageError(f"unknown keys in {where}: {sorted(unknown)}")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
    kw.update(fixed)
    try:
        return cls(**kw)
    except (TypeError, ConfigError) as exc:
        raise UsageError(f"bad {where}: {exc}") from None


# --- dataset ----------------------------------------------------------------

def cmd_dataset(args, out: Path) -> int:
    from .harness.datagen import DatagenConfig, generate_training_data, save_training_data
    from .ml.data import split_counts

    d = _read_json(args.config).get("dataset", {}) if args.config else {}
    seed = _seed(args)
    if seed is not None:
        d = {**d, "seed": seed}
    if args.points is not None:
        d = {**d, "n_points": args.points}
    gc = _section(DatagenConfig, d, "dataset config")
    data = generate_training_data(gc)
    digest = save_training_data(data, out / DATASET_FILE)
    print("split " + "/".join(str(n) for n in split_counts(gc.n_points, gc.fractions)))
    print(f"sha256 {digest}")
    print(f"wrote {out / DATASET_FILE}")
    return EXIT_OK


# --- train ------------------------------------------------------------------

def _load_dataset(args, out: Path):
    from .harness.datagen import load_training_data

    path = Path(args.dataset) if args.dataset else out / DATASET_FILE
    if not path.exists():
        raise ConfigError(f"dataset not found: {path} (run 'mgfdi dataset' first)")
    return load_training_data(path)


def _write_rows(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.9g}" if isinstance(v, float) else v for v in row])


def cmd_train(args, out: Path) -> int:
    from .defense import save_regressions, save_twin
    from .harness.training import train_regressions, train_twin
    from .ml.logreg import LogRegConfig
    from .ml.lstm import TrainConfig

    cfg = _read_json(args.config) if args.config else {}
    data = _load_dataset(args, out)
    seed = _seed(args)
    model_dir = out / MODEL_DIR
    if args.model == "lstm":
        d = dict(cfg.get("lstm", {}))
        if seed is not None:
            d["seed"] = seed
        if args.epochs is not None:
            d["max_epochs"] = args.epochs
        tc = _section(TrainConfig, d, "lstm config")

        def progress(epoch, tr, va):
            if epoch % 25 == 0:
                log.info("epoch %d train %.3e val %.3e", epoch, tr, va)

        twin, rep = train_twin(data, tc, callback=progress)
        save_twin(model_dir, twin)
        h = rep.history
        _write_rows(out / "lstm_history.csv", ["epoch", "train_mse", "val_mse"],
                    zip(h.epochs, h.train_mse, h.val_mse))
        print(f"best epoch {h.best_epoch}")
        print(f"train mse {rep.train_mse:.4e}  val mse {rep.val_mse:.4e}")
        print(f"test mse {rep.test_mse:.4e}")
        print("residual std [current, voltage, comm] " + " ".join(f"{v:.4g}" for v in rep.resid_std))
    else:
        d = dict(cfg.get("logreg", {}))
        if seed is not None:
            d["seed"] = seed
        lc = _section(LogRegConfig, d, "logreg config")
        fractions = tuple(cfg.get("lstm", {}).get("fractions", (0.70, 0.15, 0.15)))
        models, reports = train_regressions(data, fractions, lc.seed, lc)
        save_regressions(model_dir, models)
        rows = []
        for r in reports:
            rows += [(r.kind, i, float(loss)) for i, loss in enumerate(r.losses)]
            print(f"{r.kind}: accuracy train {r.train_acc:.4f} val {r.val_acc:.4f} test {r.test_acc:.4f}; "
                  f"test sample error {r.test_error_pct:.3f}%")
        _write_rows(out / "logreg_history.csv", ["kind", "iteration", "loss"], rows)
    print(f"wrote {model_dir}")
    return EXIT_OK


# --- simulate ---------------------------------------------------------------

def _scenario_configs(args, out: Path) -> list:
    from .harness.config import config_from_dict
    from .harness.scenarios import builtin_scenario

    seed = _seed(args)
    cfgs = []
    for which in args.scenario:
        if which == "custom":
            if not args.config:
                raise UsageError("--scenario custom needs --config")
            d = _read_json(args.config)
            d = d.get("scenario_config", d)
            try:
                base = builtin_scenario(d["scenario"]) if "scenario" in d else None
                cfg = config_from_dict(d, base)
            except ConfigError as exc:
                raise UsageError(f"bad scenario config: {exc}") from None
        else:
            cfg = builtin_scenario(int(which))
        over = {"mitigation": args.mitigation == "on"}
        if seed is not None:
            over["seed"] = seed
        if args.duration is not None:
            over["duration"] = args.duration
        try:
            cfgs.append(replace(cfg, **over))
        except ConfigError as exc:
            raise UsageError(str(exc)) from None
    names = [c.name for c in cfgs]
    if len(set(names)) != len(names):
        raise UsageError(f"scenario names must be unique, got {names}")
    return cfgs


def run_scenario(cfg, model_dir, run_dir) -> dict:
    """Simulate one scenario and write its trace, metrics and config."""
    from .defense import DetectorModels
    from .harness.config import dump_config
    from .harness.metrics import compute_metrics
    from .harness.sim import simulate
    from .harness.trace_io import write_metrics_json, write_trace_csv

    models = None
    if cfg.detection:
        if model_dir is None:
            raise ConfigError("detection needs trained models (--models)")
        models = DetectorModels.load(model_dir)
    res = simulate(cfg, models)
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(dump_config(cfg) + "\n")
    write_trace_csv(res.trace, run_dir / "trace.csv")
    metrics = compute_metrics(res.trace, cfg)
    write_metrics_json(metrics, run_dir / "metrics.json")
    return json.loads(metrics.to_json())


def _summary(name, m) -> str:
    parts = [f"{name}: sample error {m['sample_error_pct']:.3f}%"]
    for a in m["attacks"]:
        lat = "never" if a["detection_latency"] is None else f"{1e3 * a['detection_latency']:.1f} ms"
        parts.append(f"  {a['target']} at {a['t_start']} s: latched after {lat}; "
                     f"{a['recovery_signal']} deviation {a['recovery_deviation_pct']:.2f}%")
    if m["unlabeled_latched_channels"]:
        parts.append(f"  flags on unattacked channels: {m['unlabeled_latched_channels']}")
    return "\n".join(parts)


def cmd_simulate(args, out: Path) -> int:
    cfgs = _scenario_configs(args, out)
    model_dir = Path(args.models) if args.models else out / MODEL_DIR
    if args.mitigation == "off" and not (model_dir / "lstm.bin").exists():
        # without models the unmitigated run still shows the attack's effect
        cfgs = [replace(c, detection=False) for c in cfgs]
    jobs = [(c, model_dir, out / c.name) for c in cfgs]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(run_scenario, *zip(*jobs)))
    else:
        results = [run_scenario(*j) for j in jobs]
    for (cfg, _, run_dir), m in zip(jobs, results):
        print(_summary(cfg.name, m))
        print(f"wrote {run_dir}")
    return EXIT_OK


# --- evaluate ---------------------------------------------------------------

def cmd_heldout(args, out: Path) -> int:
    from .defense import DetectorModels
    from .harness.datagen import DatagenConfig
    from .harness.evaluation import heldout_detection_error

    d = _read_json(args.config).get("dataset", {}) if args.config else {}
    seed = _seed(args)
    if seed is not None:
        d = {**d, "seed": seed}
    gc = _section(DatagenConfig, d, "dataset config")
    model_dir = Path(args.models) if args.models else out / MODEL_DIR
    if not (model_dir / "lstm.bin").exists():
        raise ConfigError(f"no trained models in {model_dir}")
    rep = heldout_detection_error(DetectorModels.load(model_dir), gc)
    c = rep.confusion
    for run, pct in zip(rep.runs, rep.per_run_pct):
        print(f"  run {run}: {pct:.3f}%")
    print(f"held-out sample error {rep.sample_error_pct:.3f}% over runs {rep.runs} "
          f"(tp {c['tp']} fp {c['fp']} fn {c['fn']} tn {c['tn']})")
    return EXIT_OK


def cmd_evaluate(args, out: Path) -> int:
    from .harness.config import load_config
    from .harness.metrics import compute_metrics, confusion, sample_error_pct
    from .harness.trace_io import read_trace_csv, trace_from_columns, write_metrics_json

    if args.heldout:
        return cmd_heldout(args, out)
    runs = [Path(r) for r in args.runs] if args.runs else sorted(
        p.parent for p in out.glob("*/trace.csv"))
    if not runs:
        raise ConfigError(f"no scenario runs found under {out}")
    flags, labels = [], []
    for run in runs:
        cfg = load_config(run / "config.json")
        trace = trace_from_columns(read_trace_csv(run / "trace.csv"))
        m = compute_metrics(trace, cfg)
        write_metrics_json(m, run / "metrics.json")
        print(_summary(cfg.name, json.loads(m.to_json())))
        flags.append(trace.latched.ravel())
        labels.append(trace.labels.ravel())
    f, lab = np.concatenate(flags), np.concatenate(labels)
    c = confusion(f, lab)
    print(f"overall sample error {sample_error_pct(f, lab):.3f}% over {f.size} channel-samples "
          f"(tp {c['tp']} fp {c['fp']} fn {c['fn']} tn {c['tn']})")
    return EXIT_OK


# --- plot -------------------------------------------------------------------

def cmd_plot(args, out: Path) -> int:
    from .harness.trace_io import read_trace_csv
    from .plotting import plot_trace

    trace = Path(args.trace)
    cols = read_trace_csv(trace)
    dest = Path(args.plots) if args.plots else out / "plots" / trace.parent.name
    for p in plot_trace(cols, dest):
        print(f"wrote {p}")
    return EXIT_OK


def _common(suppress: bool) -> argparse.ArgumentParser:
    # shared flags, accepted before or after the subcommand
    p = argparse.ArgumentParser(add_help=False)
    dflt = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--out", default=dflt("out"), help="output directory (default: out)")
    p.add_argument("--seed", type=int, default=dflt(None), help="seed override (fallback: MGFDI_SEED)")
    p.add_argument("--config", default=dflt(None), help="JSON config file")
    p.add_argument("--print-defaults", action="store_true", default=dflt(False),
                   help="print every default parameter and exit")
    p.add_argument("-v", "--verbose", action="store_true", default=dflt(False))
    return p


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mgfdi", description="DC microgrid FDI detection and mitigation experiments.",
                parents=[_common(False)])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    common = [_common(True)]

    s = sub.add_parser("dataset", help="generate the labeled training dataset", parents=common)
    s.add_argument("--points", type=int, help="number of points (default 20000)")

    s = sub.add_parser("train", help="train the estimator or the regressions", parents=common)
    s.add_argument("model", choices=("lstm", "logreg"))
    s.add_argument("--dataset", help=f"dataset CSV (default: OUT/{DATASET_FILE})")
    s.add_argument("--epochs", type=int, help="maximum LSTM epochs")

    s = sub.add_parser("simulate", help="run scenarios and write traces and metrics", parents=common)
    s.add_argument("--scenario", nargs="+", default=["1"], choices=("1", "2", "3", "4", "custom"))
    s.add_argument("--mitigation", choices=("on", "off"), default="on")
    s.add_argument("--models", help=f"model directory (default: OUT/{MODEL_DIR})")
    s.add_argument("--duration", type=float, help="override the run length in seconds")
    s.add_argument("--jobs", type=int, default=1, help="scenarios simulated in parallel")

    s = sub.add_parser("evaluate", help="recompute metrics from written traces", parents=common)
    s.add_argument("runs", nargs="*", help="run directories (default: every OUT/*/trace.csv)")
    s.add_argument("--heldout", action="store_true",
                   help="replay the dataset's test-split runs with the live detector instead")
    s.add_argument("--models", help=f"model directory for --heldout (default: OUT/{MODEL_DIR})")

    s = sub.add_parser("plot", help="SVG panels from a trace CSV", parents=common)
    s.add_argument("trace")
    s.add_argument("--plots", help="destination directory (default: OUT/plots/<run>)")
    return p


COMMANDS = {"dataset": cmd_dataset, "train": cmd_train, "simulate": cmd_simulate,
            "evaluate": cmd_evaluate, "plot": cmd_plot}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.print_defaults:
            print(json.dumps(_defaults(), indent=2))
            return EXIT_OK
        if args.command is None:
            raise UsageError("a subcommand is required")
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be >= 1")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, out)
    except UsageError as exc:
        print(f"mgfdi: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, SimulationFault, TrainingFault, OSError) as exc:
        print(f"mgfdi: {exc}", file=sys.stderr)
        return EXIT_FAULT


if __name__ == "__main__":
    sys.exit(main())
