"""Command line front end.

    csi-djscc run --preset smoke
    csi-djscc generate-data --config exp.json
    csi-djscc train --config exp.json
    csi-djscc evaluate --config exp.json --snr-db 5
    csi-djscc sweep --config exp.json
    csi-djscc report --config exp.json

Exit codes: 0 success, 2 configuration error, 3 stage failure, 1 anything else.
"""

import argparse
import dataclasses
import json
import os
import sys

from .errors import ConfigError, StageError
from .evaluation import load_results, nmse, render_report
from .experiments import (ExperimentConfig, list_presets, load_config,
                          load_preset, run_experiment)
from .pipelines import reconstruct

_STAGE_OF = {"generate-data": "data", "train": "train", "sweep": "sweep",
             "report": "report", "run": "report"}


def _add_common(p):
    p.add_argument("--config", help="path to an experiment config JSON file")
    p.add_argument("--preset", help="name of a packaged preset experiment")
    p.add_argument("--out-dir", help="override the experiment output directory")
    p.add_argument("--seed", type=int, help="override the experiment seed")
    p.add_argument("--profile", help="override the geometry profile")
    p.add_argument("--force", action="store_true",
                   help="retrain even when cached bundles match the config")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="csi-djscc",
        description="SNR-adaptive joint source-channel coding for CSI feedback")
    parser.add_argument("--list-presets", action="store_true",
                        help="print packaged preset names and exit")
    sub = parser.add_subparsers(dest="command")
    for name, help_text in [
            ("generate-data", "generate (or verify) the dataset and stop"),
            ("train", "run the data and training stages"),
            ("evaluate", "report NMSE of trained models at one SNR"),
            ("sweep", "train if needed, then sweep the SNR grid"),
            ("report", "render plots and report.md (full run if no results yet)"),
            ("run", "execute every stage: data, train, sweep, report")]:
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        if name == "evaluate":
            p.add_argument("--snr-db", type=float, default=0.0,
                           help="channel SNR to evaluate at (default 0)")
    return parser


def _resolve_config(args) -> ExperimentConfig:
    if bool(args.config) == bool(args.preset):
        raise ConfigError("pass exactly one of --config or --preset")
    cfg = load_config(args.config) if args.config else load_preset(args.preset)
    overrides = {}
    if args.out_dir is not None:
        overrides["out_dir"] = args.out_dir
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.profile is not None:
        overrides["profile"] = args.profile
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    return cfg


def _cmd_evaluate(cfg, args):
    out = run_experiment(cfg, last_stage="train", force=args.force)
    dataset = out["dataset"]
    split = cfg.eval["split"]
    h_down, h_up = dataset.splits[split]
    if cfg.eval["max_samples"] is not None:
        h_down, h_up = h_down[:cfg.eval["max_samples"]], h_up[:cfg.eval["max_samples"]]
    print(f"split={split} n={h_down.shape[0]} snr={args.snr_db:g} dB")
    for name, bundle in sorted(out["bundles"].items()):
        rec = reconstruct(bundle, h_down, h_up=h_up, mu_db=args.snr_db,
                          noise_seed=cfg.eval_seed(),
                          batch_size=cfg.eval["batch_size"])
        print(f"  {name}: NMSE = {nmse(h_down, rec):.2f} dB")
    return 0


def _cmd_report(cfg, args):
    out_dir = cfg.resolve_out_dir()
    results_path = os.path.join(out_dir, "results.json")
    title = cfg.title or f"CSI feedback: {cfg.name}"
    if os.path.exists(results_path) and not args.force:
        loaded_title, results = load_results(results_path)
        paths = render_report(results, out_dir, loaded_title)
        print(f"report rendered from existing {results_path}")
    else:
        out = run_experiment(cfg, last_stage="report", force=args.force)
        paths = out["paths"]
        print(f"report written under {out_dir}")
    print(json.dumps(paths, indent=2))
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.list_presets:
        for name in list_presets():
            print(name)
        return 0
    if args.command is None:
        parser.print_help()
        return 2
    try:
        cfg = _resolve_config(args)
        if args.command == "evaluate":
            return _cmd_evaluate(cfg, args)
        if args.command == "report":
            return _cmd_report(cfg, args)
        out = run_experiment(cfg, last_stage=_STAGE_OF[args.command],
                             force=args.force)
        manifest = out["manifest"]
        print(f"experiment '{cfg.name}' finished stages: "
              f"{', '.join(manifest['stages_run'])}")
        if manifest.get("dataset_dir"):
            print(f"dataset: {manifest['dataset_dir']}")
        elif args.command == "generate-data":
            print("dataset generated in memory only; set dataset.dir to persist it")
        if "results_path" in manifest:
            print(f"results: {manifest['results_path']}")
        if "artifacts" in manifest:
            print(f"report:  {manifest['artifacts']['report']}")
        return 0
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except StageError as e:
        print(f"stage failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
