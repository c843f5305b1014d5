"""Command-line entry point.

  pmnsense config  --out cfg.ini                 write the default configuration
  pmnsense run     [--config] [--seed] [--mode] [--snr] --out DIR
  pmnsense sweep   [--config] [--snr ...] [--trials] [--modes ...] --out DIR
  pmnsense scatter [--config] [--trials] [--mode] [--snr] --out DIR
  pmnsense trace   [--config] [--seed] [--mode] [--snr] --out DIR

Every command writing results also writes ``summary.json`` (or
``sweep.json``) with the fully resolved configuration embedded.
Exit status: 0 success, 2 bad arguments or config, 3 solver divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import canceller as cc
from .config import ConfigError
from .harness import (ExperimentConfig, TrialError, available_modes, experiment_config_sections,
                      front_end, json_default, load_experiment_config, make_trial_scene,
                      run_scatter, run_trial, save_experiment_config, simulate_stream, sweep_snr,
                      trial_seeds, write_estimates_csv)
from .scenario import save_scenario
from .solver import SolverDivergenceError, solve_mmv, write_trace


def _load(args) -> ExperimentConfig:
    exp = load_experiment_config(args.config) if args.config else ExperimentConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["master_seed"] = args.seed
    if getattr(args, "trials", None) is not None:
        changes["trials"] = args.trials
    if getattr(args, "workers", None) is not None:
        changes["workers"] = args.workers
    if getattr(args, "modes", None):
        changes["modes"] = tuple(args.modes)
    if isinstance(getattr(args, "snr", None), list) and args.snr:
        changes["snr_grid"] = tuple(args.snr)
    exp = dataclasses.replace(exp, **changes)
    exp.validate()
    return exp


def _dump(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=json_default)


def _metrics_json(metrics: dict) -> dict:
    return {k: v for k, v in metrics.items() if k not in ("sq_errors", "doppler_errors")}


def cmd_config(args) -> int:
    save_experiment_config(ExperimentConfig(), args.out)
    return 0


def cmd_run(args) -> int:
    exp = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scene = make_trial_scene(exp, 0, args.snr)
    _, noise_seed = trial_seeds(exp.master_seed, 0)
    res = run_trial(scene, exp.system, exp, args.mode, noise_seed)
    save_scenario(scene, exp.system, out / "scenario.json")
    write_estimates_csv(res, out / "estimates.csv")
    summary = {
        "config": experiment_config_sections(exp),
        "mode": args.mode,
        "snr_db": args.snr,
        "metrics": _metrics_json(res.metrics),
        "tracks": [dataclasses.asdict(e) for e in res.estimates],
        "iterations": [i.iterations for i in res.instants],
    }
    _dump(summary, out / "summary.json")
    m = res.metrics
    print(f"mode={args.mode} targets={m['targets']} detected={m['detected_targets']} "
          f"false_alarms={m['false_alarms']} clutter_detections={m['clutter_detections']} "
          f"mse={m['mse']:.3e}")
    return 0


def cmd_sweep(args) -> int:
    exp = _load(args)
    report = sweep_snr(exp, args.out)
    for r in report.rows:
        print(f"snr={r['snr_db']:6.1f} mode={r['mode']:<9} mse_db={r['mse_db']:8.2f} "
              f"det_rate={r['det_rate']:.3f}")
    print(f"elapsed {report.elapsed_s:.1f} s")
    return 0


def cmd_scatter(args) -> int:
    exp = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics = run_scatter(exp, exp.trials, args.mode, args.snr, out / "scatter.csv")
    _dump({"config": experiment_config_sections(exp), "mode": args.mode, "snr_db": args.snr,
           "trials": [_metrics_json(m) for m in metrics]}, out / "summary.json")
    return 0


def cmd_trace(args) -> int:
    """Solver convergence trace for the first processing instant of trial 0."""
    exp = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = exp.system
    scene = make_trial_scene(exp, 0, args.snr)
    _, noise_seed = trial_seeds(exp.master_seed, 0)
    short = dataclasses.replace(exp, bursts_per_trial=1)
    snap = front_end(simulate_stream(scene, cfg, short, args.mode, noise_seed), cfg, short,
                     args.mode)[0]
    R = cc.assemble(cc.demodulate(snap, scene.schedule), cfg)
    R.to_npy(out / "measurement.npy")
    est = solve_mmv(R, cc.build_dictionary(cfg), exp.solver.delta_x, exp.solver.t_max, trace=True)
    write_trace(est, out / "trace.csv")
    _dump({"config": experiment_config_sections(exp), "mode": args.mode, "snr_db": args.snr,
           "iterations": est.iterations, "converged": est.converged, "beta": est.beta},
          out / "summary.json")
    print(f"iterations={est.iterations} converged={est.converged}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pmnsense", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("config", help="write the default configuration as INI")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_config)

    def common(p, single_snr=True):
        p.add_argument("--config", help="INI file with [system], [scenario], [solver], [experiment]")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--out", required=True, help="output directory")
        if single_snr:
            p.add_argument("--snr", type=float, default=None,
                           help="weakest-target SNR in dB (default: path-loss law)")

    p = sub.add_parser("run", help="one trial, estimates CSV and summary JSON")
    common(p)
    p.add_argument("--mode", choices=available_modes(), default="proposed")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="Monte-Carlo AoA-MSE versus SNR")
    common(p, single_snr=False)
    p.add_argument("--snr", type=float, nargs="+", help="SNR grid in dB")
    p.add_argument("--trials", type=int)
    p.add_argument("--modes", nargs="+", choices=available_modes())
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("scatter", help="speed/angle versus distance scatter CSV")
    common(p)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--mode", choices=available_modes(), default="proposed")
    p.set_defaults(func=cmd_scatter)

    p = sub.add_parser("trace", help="solver convergence trace for one snapshot")
    common(p)
    p.add_argument("--mode", choices=available_modes(), default="proposed")
    p.set_defaults(func=cmd_trace)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (TrialError, SolverDivergenceError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except (ConfigError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
