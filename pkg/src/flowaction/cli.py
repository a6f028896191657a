"""Command-line entry point: ``flowaction <command> --config FILE``.

Commands
  synth     generate a labelled synthetic capture (scenario TOML or preset)
  ingest    parse + filter captures, write flows.csv with each flow's series
  train     cluster training flows, train the forest, write both models
  classify  label the windows of a capture with previously trained models
  eval      full experiment: train, test on held-out accounts, write report
  sweep     validation macro-F for each cluster count, write curve.csv
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import __version__

log = logging.getLogger("flowaction")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--quiet", action="store_true", help="suppress progress output")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                   help="worker threads for distances and tree training (default: all cores)")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="flowaction", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic labelled capture")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", type=Path, help="scenario TOML file")
    src.add_argument("--preset", help="built-in scenario: table1, planted or acceptance")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--distance", default="facebook-conf3", help="distance preset for the emitted experiment config")

    for name, helptext in (
        ("ingest", "parse and filter captures into flows"),
        ("train", "cluster flows and train the classifier"),
        ("eval", "train and evaluate on held-out accounts"),
        ("sweep", "sweep the number of clusters on validation accounts"),
    ):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--config", type=Path, required=True, help="experiment TOML file")
        p.add_argument("--out", type=Path, help="output directory (default: the config's output_dir)")

    p = sub.add_parser("classify", parents=[common], help="classify action windows of a capture")
    p.add_argument("--config", type=Path, required=True, help="experiment TOML file (input settings)")
    p.add_argument("--capture", type=Path, required=True, help="capture CSV")
    p.add_argument("--windows", type=Path, required=True,
                   help="sidecar CSV delimiting the windows (labels may be blank)")
    p.add_argument("--model-dir", type=Path, help="directory with cluster_model.json and forest_model.json")
    return parser


def _load(args):
    from .config import load_config

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "out", None) is not None:
        cfg.output_dir = args.out
    return cfg


def cmd_synth(args) -> int:
    from . import synthgen

    if args.config:
        spec = synthgen.load_scenario(args.config)
    else:
        if args.preset not in synthgen.PRESETS:
            raise ValueError(f"unknown preset {args.preset!r}; known: {sorted(synthgen.PRESETS)}")
        spec = synthgen.PRESETS[args.preset]()
    if args.seed is not None:
        spec = synthgen.replace(spec, seed=args.seed)
    scenario = synthgen.generate(spec)
    paths = synthgen.write_scenario(scenario, spec, args.out, args.distance)
    log.info("%d windows, %d app flows (%d dropped), %d packets", scenario.windows,
             scenario.flows_emitted, scenario.flows_dropped, len(scenario.packets))
    print(paths["config"])
    return 0


def cmd_ingest(args) -> int:
    from .evaluate import load_windows

    cfg = _load(args)
    windows = load_windows(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    from .series import complete_series

    lines = ["window_id,label,account,flow_key,start,complete_series"]
    for w in windows:
        for f in w.flows:
            series = " ".join(str(v) for v in complete_series(f))
            lines.append(f"{w.window_id},{w.label},{w.account},{f.key},{f.start_time:.6f},{series}")
    (out / "flows.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"{len(windows)} windows, {sum(len(w.flows) for w in windows)} flows -> {out / 'flows.csv'}")
    return 0


def cmd_train(args) -> int:
    from .evaluate import curve_csv, fit_pipeline, load_windows
    from .features import format_dataset

    cfg = _load(args)
    windows = load_windows(cfg)
    _, _, model, forest, curve, train_set = fit_pipeline(cfg, windows, args.jobs)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / "cluster_model.json")
    forest.save(out / "forest_model.json")
    (out / "train_dataset.csv").write_text(format_dataset(train_set, model.k), encoding="utf-8")
    if curve:
        (out / "curve.csv").write_text(curve_csv(curve), encoding="utf-8")
    print(f"trained k={model.k} on {len(train_set)} windows -> {out}")
    return 0


def cmd_classify(args) -> int:
    from .cluster import ClusterModel
    from .evaluate import load_windows
    from .features import build_dataset
    from .forest import ForestModel

    cfg = _load(args)
    model_dir = args.model_dir or Path(cfg.output_dir)
    model = ClusterModel.load(model_dir / "cluster_model.json")
    forest = ForestModel.load(model_dir / "forest_model.json")
    windows = load_windows(cfg, [args.capture], [args.windows])
    for inst in build_dataset(windows, model):
        print(f"{inst.window_id},{forest.predict(inst.features)}")
    return 0


def cmd_eval(args) -> int:
    from .evaluate import run_experiment

    cfg = _load(args)
    result = run_experiment(cfg, jobs=args.jobs)
    print(result.report.text(), end="")
    print(f"k={result.k} macro-F={result.report.macro_f:.4f}")
    return 0


def cmd_sweep(args) -> int:
    from .cluster import Hierarchy
    from .evaluate import curve_csv, load_windows, split_by_account, sweep_clusters, training_flows

    cfg = _load(args)
    if not cfg.k_values:
        raise ValueError("sweep needs clusters.k_range or clusters.k_values")
    split = split_by_account(load_windows(cfg), cfg.test_accounts, cfg.validation_accounts)
    hierarchy = Hierarchy(training_flows(split.train), cfg.distance)
    best_k, curve = sweep_clusters(split.train, split.validation, cfg.distance, cfg.k_values,
                                   cfg.forest, hierarchy, args.jobs)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "curve.csv").write_text(curve_csv(curve), encoding="utf-8")
    print(f"best_k={best_k}")
    return 0


COMMANDS = {
    "synth": cmd_synth, "ingest": cmd_ingest, "train": cmd_train,
    "classify": cmd_classify, "eval": cmd_eval, "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    from .cluster import set_jobs
    from .evaluate import StageError

    set_jobs(args.jobs)
    try:
        return COMMANDS[args.command](args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
    except (OSError, ValueError) as exc:
        print(f"error: [{args.command}] {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
