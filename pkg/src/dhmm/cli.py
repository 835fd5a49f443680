"""Command-line front end.

Subcommands:
  dhmm simulate   --config F [--out DIR]            write trajectory.csv
  dhmm fit        --config F --data CSV --estimator {qmle|mle}
  dhmm experiment --preset NAME | --config F [--jobs N]
  dhmm conditions --config F
  dhmm score      --config F

The environment variable DHMM_SEED overrides the config root seed.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import experiments
from .estimate import fit
from .simulate import load_trajectory_csv, save_trajectory_csv, simulate


def _config_from_args(args) -> experiments.ExperimentConfig:
    if getattr(args, "preset", None):
        cfg = experiments.preset_config(args.preset)
        cfg = experiments.apply_env_seed(cfg)
    else:
        cfg = experiments.load_config(args.config)
    if getattr(args, "out", None):
        cfg = replace(cfg, out_dir=args.out)
    if getattr(args, "jobs", None):
        cfg = replace(cfg, jobs=args.jobs)
    return cfg


def _cmd_simulate(args) -> int:
    cfg = _config_from_args(args)
    model = cfg.model()
    traj = simulate(
        model,
        np.asarray(cfg.theta_star),
        cfg.n_max,
        experiments.replication_seed(cfg.root_seed, 0),
        nu=cfg.nu_weights(model),
    )
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "trajectory.csv"
    save_trajectory_csv(traj, path)
    print(f"wrote {path} ({traj.n} rows)")
    return 0


def _cmd_fit(args) -> int:
    cfg = _config_from_args(args)
    model = cfg.model()
    traj = load_trajectory_csv(args.data)
    result = fit(
        args.estimator,
        model,
        traj.z,
        cfg.nu_weights(model),
        cfg.space(),
        cfg.optimizer(),
    )
    sys.stdout.write(result.to_text())
    return 0


def _cmd_experiment(args) -> int:
    cfg = _config_from_args(args)
    result = experiments.run_experiment(cfg)
    for path in result.files:
        print(f"wrote {path}")
    return 0


def _cmd_conditions(args) -> int:
    cfg = _config_from_args(args)
    reports, path = experiments.run_conditions(cfg)
    for report in reports:
        print(report)
    print(f"wrote {path}")
    return 0


def _cmd_score(args) -> int:
    cfg = _config_from_args(args)
    diag, path = experiments.run_score(cfg)
    print(f"n = {diag.n}, replications = {diag.replications}")
    print(f"mean score (scaled) = {diag.mean_score_scaled:.6g}")
    print(f"lambda_min(G) = {diag.lambda_min_G:.6g}, lambda_min(F) = {diag.lambda_min_F:.6g}")
    print(f"wrote {path}")
    return 0


def _add_config_argument(parser, required=True):
    parser.add_argument("--config", required=required, help="path to a key = value config file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dhmm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate one trajectory and write trajectory.csv")
    _add_config_argument(p)
    p.add_argument("--out", help="output directory (default from config)")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("fit", help="fit one estimator on a trajectory CSV")
    _add_config_argument(p)
    p.add_argument("--data", required=True, help="trajectory CSV with columns t,x,y,z")
    p.add_argument("--estimator", required=True, choices=("qmle", "mle"))
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("experiment", help="run a preset or configured experiment")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--preset", choices=experiments.preset_names())
    group.add_argument("--config")
    p.add_argument("--out", help="output directory override")
    p.add_argument("--jobs", type=int, help="parallel workers for replications")
    p.set_defaults(func=_cmd_experiment)

    p = sub.add_parser("conditions", help="run the condition checks and write conditions.csv")
    _add_config_argument(p)
    p.add_argument("--out", help="output directory override")
    p.set_defaults(func=_cmd_conditions)

    p = sub.add_parser("score", help="finite-difference score diagnostics; writes score.csv")
    _add_config_argument(p)
    p.add_argument("--out", help="output directory override")
    p.set_defaults(func=_cmd_score)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
