"""Experiment driver: end-to-end pipeline, baselines, metrics and SNR sweeps.

A trial is one scene observed over ``bursts_per_trial`` processing instants.
At instant i the "current" burst set is c_i = ``rma_window - 1 + i``; every
mode processes the same current bursts with the same noise (noise of burst b
depends only on the trial's noise seed and b), so modes are paired.

Modes
  proposed   binomial canceller over bursts c - P .. c, then sparse recovery
  no_cancel  sparse recovery on burst c alone
  rma        recursive-average clutter estimate over bursts up to c,
             subtracted from burst c, then sparse recovery

Further clutter-mitigation baselines plug in through :func:`register_front_end`.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import canceller as cc
from .config import (SystemConfig, dataclass_from_section, dataclass_to_section,
                     read_sections, write_sections)
from .extract import PathEstimate, Tracker, associate, extract_paths, prune, wrap_sin_diff
from .scenario import (Scenario, ScenarioSpec, delay_to_distance, doppler_to_speed, generate,
                       pin_weakest_target_snr)
from .simcore import ReceivedCube, transmit_receive
from .solver import SolverDivergenceError, detect_support, solve_mmv

MODES = ("proposed", "no_cancel", "rma")

# runtimes are kept out of the CSV so that reruns are byte-identical; see sweep.json
SWEEP_COLUMNS = ["snr_db", "mode", "mse_db", "det_rate", "trials", "mse_ci_db", "mse_mean_db",
                 "false_alarms", "clutter_detections", "doppler_rmse_hz",
                 "clutter_suppression_db"]
SCATTER_COLUMNS = ["trial", "kind", "distance_m", "speed_mps", "pi_sin_theta"]
ESTIMATE_COLUMNS = ["burst", "bin", "delay_s", "doppler_hz", "sin_theta", "power_db", "track_id"]


class TrialError(RuntimeError):
    def __init__(self, trial, cause):
        super().__init__(f"trial {trial}: {cause}")
        self.trial = trial
        self.cause = cause


@dataclass(frozen=True)
class SolverParams:
    delta_x: float = 1e-6
    t_max: int = 300
    rel_threshold: float = 0.1


@dataclass(frozen=True)
class ExperimentConfig:
    system: SystemConfig = field(default_factory=SystemConfig)
    scenario: ScenarioSpec = field(default_factory=ScenarioSpec)
    solver: SolverParams = field(default_factory=SolverParams)
    snr_grid: tuple[float, ...] = (-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0)
    trials: int = 50
    modes: tuple[str, ...] = ("proposed", "no_cancel")
    bursts_per_trial: int = 10
    alpha: float = 0.9
    min_track_hits: int = 5
    rma_rho: float = 0.99
    rma_window: int = 64
    master_seed: int = 0
    workers: int = 1
    output_dir: str = "out"

    def validate(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.snr_grid:
            raise ValueError("snr_grid must be nonempty")
        bad = set(self.modes) - set(available_modes())
        if bad:
            raise ValueError(f"unknown modes {sorted(bad)}")
        if self.bursts_per_trial < 1:
            raise ValueError("bursts_per_trial must be >= 1")
        if self.rma_window < self.system.canceller_order + 1:
            raise ValueError("rma_window shorter than the canceller span")

    @property
    def first_current_burst(self) -> int:
        return self.rma_window - 1


def load_experiment_config(path) -> ExperimentConfig:
    sec = read_sections(path)
    system = dataclass_from_section(SystemConfig, sec.get("system", {}))
    scenario = dataclass_from_section(ScenarioSpec, sec.get("scenario", {}))
    solver = dataclass_from_section(SolverParams, sec.get("solver", {}))
    exp = dict(sec.get("experiment", {}))
    changes = {}
    if "snr_grid" in exp:
        changes["snr_grid"] = tuple(float(v) for v in exp.pop("snr_grid").replace(",", " ").split())
    if "modes" in exp:
        changes["modes"] = tuple(v for v in exp.pop("modes").replace(",", " ").split())
    base = ExperimentConfig(system=system, scenario=scenario, solver=solver, **changes)
    cfg = dataclass_from_section(ExperimentConfig, exp, default=base)
    cfg.validate()
    return cfg


def experiment_config_sections(cfg: ExperimentConfig) -> dict:
    exp = {k: v for k, v in dataclass_to_section(cfg).items()
           if k not in ("system", "scenario", "solver")}
    exp["snr_grid"] = " ".join(repr(float(v)) for v in cfg.snr_grid)
    exp["modes"] = " ".join(cfg.modes)
    return {"system": dataclass_to_section(cfg.system),
            "scenario": dataclass_to_section(cfg.scenario),
            "solver": dataclass_to_section(cfg.solver),
            "experiment": exp}


def save_experiment_config(cfg: ExperimentConfig, path):
    write_sections(path, experiment_config_sections(cfg))


# ---------------------------------------------------------------------------
# clutter mitigation front ends
# ---------------------------------------------------------------------------

def rma_cancel(cube: ReceivedCube, rho: float) -> list[cc.CancelledCube]:
    """Recursive-average clutter removal over a burst stream.

    c(i) = rho c(i-1) + (1 - rho) y(i), started from zero and divided by
    (1 - rho^i) so that a static echo is reproduced exactly. The estimate
    (which includes the current burst) is subtracted from each burst.
    Returns one cleaned cube per burst of the stream.
    """
    if not 0.0 <= rho < 1.0:
        raise ValueError("rho must lie in [0, 1)")
    est = np.zeros_like(cube.samples[0])
    out = []
    for i in range(cube.burst_count):
        est = rho * est + (1.0 - rho) * cube.samples[i]
        norm = 1.0 - rho ** (i + 1)
        cleaned = cube.samples[i] - est / norm
        out.append(cc.CancelledCube(cleaned, cube.noise_variance, cube.symbol_index,
                                    cube.first_burst + i))
    return out


@dataclass(frozen=True)
class FrontEnd:
    """A clutter-mitigation stage usable as a sweep mode.

    ``history(cfg, exp)`` is the number of bursts before the first current
    burst that the stage reads. ``apply(cube, cfg, exp)`` returns one
    snapshot per processing instant, for current bursts
    ``exp.first_current_burst + i``. ``cancelled`` tells the extractor to
    divide the binomial canceller response out of the power estimates.
    """

    name: str
    history: Callable[[SystemConfig, "ExperimentConfig"], int]
    apply: Callable[[ReceivedCube, SystemConfig, "ExperimentConfig"], list]
    cancelled: bool = False


def _current_bursts(exp):
    first = exp.first_current_burst
    return range(first, first + exp.bursts_per_trial)


def _proposed(cube, cfg, exp):
    P = cfg.canceller_order
    return [cc.cancel(cube.bursts(c - P, c + 1), P) for c in _current_bursts(exp)]


def _no_cancel(cube, cfg, exp):
    return [cc.passthrough(cube.bursts(c, c + 1)) for c in _current_bursts(exp)]


def _rma(cube, cfg, exp):
    if cube.burst_count < exp.rma_window:
        raise ValueError(f"RMA needs >= {exp.rma_window} bursts, got {cube.burst_count}")
    first = exp.first_current_burst
    return rma_cancel(cube, exp.rma_rho)[first:first + exp.bursts_per_trial]


_FRONT_ENDS: dict[str, FrontEnd] = {}


def register_front_end(fe: FrontEnd, replace: bool = False):
    """Make ``fe`` available as a mode. Worker processes see it only if they are forked after this call."""
    if fe.name in _FRONT_ENDS and not replace:
        raise ValueError(f"mode {fe.name!r} already registered")
    _FRONT_ENDS[fe.name] = fe


def available_modes() -> tuple[str, ...]:
    return tuple(_FRONT_ENDS)


def get_front_end(mode: str) -> FrontEnd:
    try:
        return _FRONT_ENDS[mode]
    except KeyError:
        raise ValueError(f"unknown mode {mode!r}") from None


register_front_end(FrontEnd("proposed", lambda cfg, exp: cfg.canceller_order, _proposed, True))
register_front_end(FrontEnd("no_cancel", lambda cfg, exp: 0, _no_cancel))
register_front_end(FrontEnd("rma", lambda cfg, exp: exp.first_current_burst, _rma))


def front_end(cube: ReceivedCube, cfg: SystemConfig, exp: ExperimentConfig,
              mode: str) -> list[cc.CancelledCube]:
    """Clutter-mitigated snapshots for each processing instant of ``cube``.

    ``cube`` spans bursts 0 .. first_current + K - 1 (relative to the trial).
    """
    return get_front_end(mode).apply(cube, cfg, exp)


def simulate_stream(scenario: Scenario, cfg: SystemConfig, exp: ExperimentConfig, mode: str,
                    noise_seed: int, noise: bool = True) -> ReceivedCube:
    """Bursts needed by ``mode``; unneeded leading bursts are left as zeros."""
    total = exp.first_current_burst + exp.bursts_per_trial
    start = exp.first_current_burst - get_front_end(mode).history(cfg, exp)
    if not 0 <= start <= exp.first_current_burst:
        raise ValueError(f"mode {mode!r} needs more history than rma_window provides")
    part = transmit_receive(scenario.paths, scenario.schedule, cfg, noise_seed,
                            burst_count=total - start, first_burst=start, noise=noise)
    samples = np.zeros((total,) + part.samples.shape[1:], dtype=complex)
    samples[start:] = part.samples
    return ReceivedCube(samples, part.noise_variance, part.symbol_index, 0, 0)


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

@dataclass
class InstantResult:
    burst: int
    estimates: list[PathEstimate]
    track_ids: list[int]
    iterations: int
    converged: bool


@dataclass
class TrialResult:
    mode: str
    estimates: list[PathEstimate]          # smoothed, confirmed tracks at the end of the trial
    instants: list[InstantResult]
    metrics: dict
    runtime_s: float
    cancel_time_s: float


def sparse_stage(cancelled: cc.CancelledCube, scenario: Scenario, cfg: SystemConfig,
                 solver: SolverParams, cancelled_mode: bool, trace: bool = False):
    """Demodulate, assemble, solve, prune and extract one snapshot."""
    dictionary = cc.build_dictionary(cfg)
    R = cc.assemble(cc.demodulate(cancelled, scenario.schedule), cfg)
    est = solve_mmv(R, dictionary, solver.delta_x, solver.t_max, trace=trace)
    support = detect_support(est, solver.rel_threshold)
    rows = prune(est.A, support, dictionary, cfg)
    return extract_paths(rows, scenario.schedule, cfg, cancelled=cancelled_mode), est


def run_trial(scenario: Scenario, cfg: SystemConfig, exp: ExperimentConfig, mode: str,
              noise_seed: int, trial: int = 0, noise: bool = True) -> TrialResult:
    t0 = time.perf_counter()
    cube = simulate_stream(scenario, cfg, exp, mode, noise_seed, noise)
    t1 = time.perf_counter()
    snapshots = front_end(cube, cfg, exp, mode)
    cancel_time = time.perf_counter() - t1
    tracker = Tracker(alpha=exp.alpha)
    instants = []
    for snap in snapshots:
        try:
            ests, est = sparse_stage(snap, scenario, cfg, exp.solver,
                                     get_front_end(mode).cancelled)
        except SolverDivergenceError as err:
            raise TrialError(trial, err) from err
        pairs = tracker.update(ests, snap.current_burst)
        instants.append(InstantResult(snap.current_burst, ests, [tid for _, tid in pairs],
                                      est.iterations, est.converged))
    min_hits = min(exp.min_track_hits, exp.bursts_per_trial)
    final = [t.estimate() for t in sorted(tracker.confirmed(min_hits), key=lambda t: t.grid_bin)]
    runtime = time.perf_counter() - t0
    metrics = trial_metrics(final, scenario, cfg)
    metrics["clutter_suppression_db"] = clutter_suppression_db(scenario, cfg, exp, mode)
    metrics["runtime_s"] = runtime
    return TrialResult(mode, final, instants, metrics, runtime, cancel_time)


def run_pipeline(cfg: SystemConfig, scenario: Scenario, seed: int,
                 exp: ExperimentConfig | None = None, **kw) -> TrialResult:
    return run_trial(scenario, cfg, exp or ExperimentConfig(system=cfg), "proposed", seed, **kw)


def run_no_cancel_baseline(cfg: SystemConfig, scenario: Scenario, seed: int,
                           exp: ExperimentConfig | None = None, **kw) -> TrialResult:
    return run_trial(scenario, cfg, exp or ExperimentConfig(system=cfg), "no_cancel", seed, **kw)


def run_rma_baseline(cfg: SystemConfig, scenario: Scenario, seed: int,
                     exp: ExperimentConfig | None = None, **kw) -> TrialResult:
    return run_trial(scenario, cfg, exp or ExperimentConfig(system=cfg), "rma", seed, **kw)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def truth_bins(paths, cfg: SystemConfig) -> np.ndarray:
    return np.array([int(round(p.delay / cfg.bin_duration)) for p in paths], dtype=int)


def trial_metrics(estimates: list[PathEstimate], scenario: Scenario, cfg: SystemConfig) -> dict:
    """Match final estimates to ground truth and score the targets.

    Matching gates on delay bin only (+-1), preferring targets over clutter,
    so the angle being scored never decides the match. Targets sharing a bin
    with another target cannot be resolved and are left out of the error
    averages (reported as ``merged_targets``).
    """
    paths = scenario.paths
    bins = truth_bins(paths, cfg)
    sins = np.array([math.sin(p.angle) for p in paths])
    prio = np.array([1 if p.is_clutter else 0 for p in paths])
    pairs = associate([e.grid_bin for e in estimates], [e.sin_angle for e in estimates],
                      bins, sins, prio, bin_gate=1, sin_gate=None)
    target_idx = [j for j, p in enumerate(paths) if not p.is_clutter]
    target_bins = bins[target_idx]
    merged = {j for j in target_idx if np.count_nonzero(target_bins == bins[j]) > 1}
    sq_err, dopp_err, detected = [], [], 0
    clutter_hits = 0
    for i, j in pairs:
        if paths[j].is_clutter:
            clutter_hits += 1
            continue
        detected += 1
        if j in merged:
            continue
        sq_err.append((math.pi * float(wrap_sin_diff(estimates[i].sin_angle, sins[j]))) ** 2)
        dopp_err.append(estimates[i].doppler - paths[j].doppler)
    n_targets = len(target_idx)
    return {
        "mse": float(np.mean(sq_err)) if sq_err else float("nan"),
        "sq_errors": sq_err,
        "doppler_errors": dopp_err,
        "targets": n_targets,
        "merged_targets": len(merged),
        "detected_targets": detected,
        "det_rate": detected / n_targets if n_targets else float("nan"),
        "clutter_detections": clutter_hits,
        "false_alarms": len(estimates) - len(pairs),
        "detections": len(estimates),
    }


def clutter_suppression_db(scenario: Scenario, cfg: SystemConfig, exp: ExperimentConfig,
                           mode: str) -> float:
    """Noiseless clutter energy after / before the front end at the first instant, in dB (floored at -300)."""
    clutter = [p for p in scenario.paths if p.is_clutter]
    if not clutter:
        return float("nan")
    only = Scenario(clutter, scenario.schedule)
    short = dataclasses.replace(exp, bursts_per_trial=1)
    cube = simulate_stream(only, cfg, short, mode, 0, noise=False)
    after = front_end(cube, cfg, short, mode)[0].samples
    before = cube.samples[short.first_current_burst]
    e_before = float(np.sum(np.abs(before) ** 2))
    e_after = float(np.sum(np.abs(after) ** 2))
    # an exact null is reported at the -300 dB floor
    return 10 * math.log10(max(e_after / e_before, 1e-30))


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def trial_seeds(master_seed: int, trial: int) -> tuple[int, int]:
    """(scene seed, noise seed) for a trial; shared across SNR points and modes."""
    ss = np.random.SeedSequence([master_seed, trial])
    a, b = ss.generate_state(2)
    return int(a), int(b)


def make_trial_scene(exp: ExperimentConfig, trial: int, snr_db: float | None) -> Scenario:
    scene_seed, _ = trial_seeds(exp.master_seed, trial)
    spec = dataclasses.replace(exp.scenario, rng_seed=scene_seed)
    scene = generate(spec, exp.system, pilot_seed=scene_seed)
    if snr_db is not None:
        scene = pin_weakest_target_snr(scene, exp.system, snr_db)
    return scene


def _sweep_job(args):
    exp, snr, mode, trial = args
    scene = make_trial_scene(exp, trial, snr)
    _, noise_seed = trial_seeds(exp.master_seed, trial)
    res = run_trial(scene, exp.system, exp, mode, noise_seed, trial)
    m = dict(res.metrics)
    m.update(snr_db=snr, mode=mode, trial=trial, cancel_time_s=res.cancel_time_s)
    return m


def run_jobs(jobs, workers: int = 1):
    if workers <= 1:
        return [_sweep_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_sweep_job, jobs, chunksize=4))


def to_db(x: float) -> float:
    return 10 * math.log10(x) if x > 0 and math.isfinite(x) else float("nan")


def summarize(rows: list[dict]) -> list[dict]:
    """Aggregate per-trial rows into one record per (snr, mode).

    ``mse_db`` is the median over trials of the per-trial AoA MSE (trials with
    no scored target are skipped); ``mse_ci_db`` is a 95% halfwidth of the
    mean per-trial MSE in dB.
    """
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((r["snr_db"], r["mode"]), []).append(r)
    out = []
    order = {m: i for i, m in enumerate(available_modes())}
    for (snr, mode), rs in sorted(groups.items(), key=lambda kv: (kv[0][0], order[kv[0][1]])):
        rs = sorted(rs, key=lambda r: r["trial"])
        mses = np.array([r["mse"] for r in rs if math.isfinite(r["mse"]) and r["mse"] > 0])
        mse_dbs = 10 * np.log10(mses) if mses.size else np.array([])
        dopp = np.concatenate([np.asarray(r["doppler_errors"], dtype=float) for r in rs])
        sup = [r["clutter_suppression_db"] for r in rs if math.isfinite(r["clutter_suppression_db"])]
        det = [r["det_rate"] for r in rs if math.isfinite(r["det_rate"])]
        out.append({
            "snr_db": snr,
            "mode": mode,
            "mse_db": to_db(float(np.median(mses))) if mses.size else float("nan"),
            "det_rate": float(np.mean(det)) if det else float("nan"),
            "trials": len(rs),
            "mse_ci_db": (1.96 * float(np.std(mse_dbs, ddof=1)) / math.sqrt(mse_dbs.size)
                          if mse_dbs.size > 1 else float("nan")),
            "mse_mean_db": to_db(float(np.mean(mses))) if mses.size else float("nan"),
            "false_alarms": float(np.mean([r["false_alarms"] for r in rs])),
            "clutter_detections": float(np.mean([r["clutter_detections"] for r in rs])),
            "doppler_rmse_hz": float(np.sqrt(np.mean(dopp ** 2))) if dopp.size else float("nan"),
            "clutter_suppression_db": float(np.median(sup)) if sup else float("nan"),
            "runtime_s": float(np.mean([r["runtime_s"] for r in rs])),
        })
    return out


@dataclass
class MetricsReport:
    rows: list[dict]                 # one per (snr, mode), see SWEEP_COLUMNS
    trials: list[dict]               # per-trial records
    config: dict
    elapsed_s: float = 0.0

    def lookup(self, snr: float, mode: str) -> dict:
        for r in self.rows:
            if r["snr_db"] == snr and r["mode"] == mode:
                return r
        raise KeyError((snr, mode))

    def to_json(self) -> dict:
        return {"config": self.config, "summary": self.rows, "elapsed_s": self.elapsed_s,
                "trials": [{k: v for k, v in t.items() if k not in ("sq_errors", "doppler_errors")}
                           for t in self.trials]}


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else format(v, ".10g")
    return str(v)


def write_sweep_csv(rows: list[dict], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in SWEEP_COLUMNS])


def sweep_snr(exp: ExperimentConfig, out_dir=None) -> MetricsReport:
    """Monte-Carlo AoA-MSE sweep over ``exp.snr_grid`` for every mode in ``exp.modes``."""
    exp.validate()
    t0 = time.perf_counter()
    jobs = [(exp, float(snr), mode, trial) for snr in exp.snr_grid for mode in exp.modes
            for trial in range(exp.trials)]
    rows = run_jobs(jobs, exp.workers)
    order = {m: i for i, m in enumerate(available_modes())}
    rows.sort(key=lambda r: (r["snr_db"], order[r["mode"]], r["trial"]))
    report = MetricsReport(summarize(rows), rows, experiment_config_sections(exp),
                           time.perf_counter() - t0)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_sweep_csv(report.rows, out / "sweep.csv")
        with open(out / "sweep.json", "w") as fh:
            json.dump(report.to_json(), fh, indent=2, sort_keys=True, default=json_default)
    return report


def json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, float) and math.isnan(o):
        return None
    raise TypeError(type(o))


# ---------------------------------------------------------------------------
# scatter / estimate dumps
# ---------------------------------------------------------------------------

def scatter_rows(trial: int, estimates: list[PathEstimate], scenario: Scenario,
                 cfg: SystemConfig) -> list[list]:
    mode = scenario.meta.get("distance_mode", "one_way")
    rows = []
    for p in scenario.paths:
        rows.append([trial, "truth_clutter" if p.is_clutter else "truth_target",
                     float(delay_to_distance(p.delay, mode)), float(doppler_to_speed(p.doppler, cfg)),
                     math.pi * math.sin(p.angle)])
    for e in estimates:
        rows.append([trial, "estimate", float(delay_to_distance(e.delay, mode)),
                     float(doppler_to_speed(e.doppler, cfg)), math.pi * e.sin_angle])
    return rows


def emit_scatter(results, path):
    """Write speed/angle versus distance rows.

    ``results`` is an iterable of (trial, estimates, scenario, cfg).
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SCATTER_COLUMNS)
        for trial, estimates, scenario, cfg in results:
            for row in scatter_rows(trial, estimates, scenario, cfg):
                w.writerow([_fmt(v) for v in row])


def run_scatter(exp: ExperimentConfig, trials: int, mode: str, snr_db: float | None, path):
    """Run ``trials`` trials and write the scatter CSV; returns the per-trial metrics."""
    results, metrics = [], []
    for trial in range(trials):
        scene = make_trial_scene(exp, trial, snr_db)
        _, noise_seed = trial_seeds(exp.master_seed, trial)
        res = run_trial(scene, exp.system, exp, mode, noise_seed, trial)
        results.append((trial, res.estimates, scene, exp.system))
        metrics.append(dict(res.metrics, trial=trial))
    emit_scatter(results, path)
    return metrics


def write_estimates_csv(result: TrialResult, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ESTIMATE_COLUMNS)
        for inst in result.instants:
            for e, tid in zip(inst.estimates, inst.track_ids):
                pdb = 10 * math.log10(e.power) if e.power > 0 and math.isfinite(e.power) else float("nan")
                w.writerow([inst.burst, e.grid_bin, _fmt(e.delay), _fmt(e.doppler),
                            _fmt(e.sin_angle), _fmt(pdb), tid])
