import csv
import dataclasses
import math

import numpy as np
import pytest

from pmnsense import harness
from pmnsense.harness import (ExperimentConfig, FrontEnd, TrialError, available_modes,
                              emit_scatter, get_front_end, load_experiment_config,
                              register_front_end, rma_cancel, run_no_cancel_baseline,
                              run_pipeline, run_rma_baseline, run_scatter, run_trial,
                              save_experiment_config, sweep_snr, trial_metrics, trial_seeds)
from pmnsense.extract import PathEstimate
from pmnsense.scenario import ScenarioSpec, fixed_target_scene
from pmnsense.simcore import ReceivedCube
from pmnsense.solver import SolverDivergenceError

from conftest import on_grid

CLUTTER = [(25, 0.0, -50.0), (70, 0.0, 10.0), (120, 0.0, 45.0)]
TARGETS = [(40, 250.0, 35.0), (90, -410.0, -12.0), (140, 560.0, 50.0)]


def small_exp(cfg, **kw):
    base = dict(system=cfg, bursts_per_trial=2, rma_window=3, trials=1, snr_grid=(10.0,))
    base.update(kw)
    return ExperimentConfig(**base)


def scene(cfg, targets=TARGETS, clutter=CLUTTER):
    return fixed_target_scene([on_grid(b, cfg, f, a, amp=2e-6) for b, f, a in targets],
                              [on_grid(b, cfg, f, a, amp=2e-6) for b, f, a in clutter], cfg)


def test_trial_is_deterministic(cfg):
    sc, exp = scene(cfg), small_exp(cfg)
    a = run_trial(sc, cfg, exp, "proposed", 5)
    b = run_trial(sc, cfg, exp, "proposed", 5)
    assert a.estimates == b.estimates
    assert a.metrics["mse"] == b.metrics["mse"]


def test_clutter_only_noiseless_scene_gives_nothing(cfg):
    sc = scene(cfg, targets=[])
    res = run_pipeline(cfg, sc, 0, small_exp(cfg), noise=False)
    assert res.estimates == []
    assert all(i.estimates == [] for i in res.instants)


def test_no_cancel_detects_clutter(cfg):
    sc = scene(cfg, targets=[])
    res = run_no_cancel_baseline(cfg, sc, 0, small_exp(cfg), noise=False)
    assert sorted(e.grid_bin for e in res.estimates) == [b for b, _, _ in CLUTTER]
    assert res.metrics["clutter_detections"] == len(CLUTTER)


def test_clutter_free_scene_modes_agree(cfg):
    sc = scene(cfg, clutter=[])
    exp = small_exp(cfg)
    a = run_pipeline(cfg, sc, 3, exp)
    b = run_no_cancel_baseline(cfg, sc, 3, exp)
    assert [e.grid_bin for e in a.estimates] == [e.grid_bin for e in b.estimates]
    for x, y in zip(a.estimates, b.estimates):
        assert x.sin_angle == pytest.approx(y.sin_angle, abs=1e-2)
    assert a.metrics["det_rate"] == b.metrics["det_rate"] == 1.0


def test_proposed_rejects_clutter_keeps_targets(cfg):
    res = run_pipeline(cfg, scene(cfg), 1, small_exp(cfg))
    m = res.metrics
    assert m["det_rate"] == 1.0
    assert m["clutter_detections"] == 0 and m["false_alarms"] == 0
    assert m["clutter_suppression_db"] == pytest.approx(-300.0)


# --- RMA ------------------------------------------------------------------

def cube_of(bursts):
    samples = np.asarray(bursts, dtype=complex)[:, None, None, None] * np.ones((1, 2, 3, 4))
    return ReceivedCube(samples, 1.0, np.arange(4))


def test_rma_rho_zero_nulls_everything():
    rng = np.random.default_rng(0)
    out = rma_cancel(cube_of(rng.standard_normal(6) + 1j * rng.standard_normal(6)), 0.0)
    assert all(not o.samples.any() for o in out)


def test_rma_static_echo_removed_exactly():
    out = rma_cancel(cube_of(np.full(20, 0.3 - 2j)), 0.99)
    for o in out:
        assert np.abs(o.samples).max() <= 1e-12


@pytest.mark.parametrize("i", [2, 10, 63])
def test_rma_moving_path_gain(cfg, i):
    rho, f = 0.99, 600.0
    w = 2 * math.pi * f * cfg.burst_spacing * cfg.symbol_period
    y = np.exp(1j * w * np.arange(i + 1))
    got = rma_cancel(cube_of(y), rho)[i].samples[0, 0, 0] / y[i]
    z = rho * np.exp(-1j * w)
    expect = 1 - (1 - rho) * (1 - z ** (i + 1)) / ((1 - z) * (1 - rho ** (i + 1)))
    assert got == pytest.approx(expect, abs=1e-12)


def test_rma_rejects_bad_rho():
    with pytest.raises(ValueError):
        rma_cancel(cube_of([1.0]), 1.0)


def test_rma_mode_runs_and_suppresses_static_clutter(cfg):
    res = run_rma_baseline(cfg, scene(cfg), 1, small_exp(cfg, rma_window=8))
    assert res.metrics["clutter_suppression_db"] < -200
    assert res.metrics["clutter_detections"] == 0


# --- metrics --------------------------------------------------------------

def test_trial_metrics_scores_matched_targets(cfg):
    sc = scene(cfg)
    ests = [PathEstimate(0.0, 250.0, 0.0, math.sin(math.radians(35)) + 0.01, 1.0, 41, 0),
            PathEstimate(0.0, 0.0, 0.0, 0.0, 1.0, 25, 0),
            PathEstimate(0.0, 0.0, 0.0, 0.0, 1.0, 160, 0)]
    m = trial_metrics(ests, sc, cfg)
    assert m["detected_targets"] == 1 and m["det_rate"] == pytest.approx(1 / 3)
    assert m["clutter_detections"] == 1 and m["false_alarms"] == 1
    assert m["mse"] == pytest.approx((math.pi * 0.01) ** 2)


def test_trial_seeds_stable_and_distinct():
    assert trial_seeds(0, 3) == trial_seeds(0, 3)
    assert trial_seeds(0, 3) != trial_seeds(0, 4)
    assert trial_seeds(0, 3) != trial_seeds(1, 3)


# --- sweeps ---------------------------------------------------------------

def test_single_point_sweep_one_row_per_mode(tmp_path, cfg):
    exp = small_exp(cfg)
    rep = sweep_snr(exp, tmp_path)
    assert [(r["snr_db"], r["mode"]) for r in rep.rows] == [(10.0, "proposed"), (10.0, "no_cancel")]
    with open(tmp_path / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2 and list(rows[0]) == harness.SWEEP_COLUMNS
    assert (tmp_path / "sweep.json").exists()


def test_sweep_csv_byte_identical_on_rerun(tmp_path, cfg):
    exp = small_exp(cfg, snr_grid=(0.0, 10.0))
    sweep_snr(exp, tmp_path / "a")
    sweep_snr(exp, tmp_path / "b")
    assert (tmp_path / "a" / "sweep.csv").read_bytes() == (tmp_path / "b" / "sweep.csv").read_bytes()


def test_parallel_sweep_matches_serial(tmp_path, cfg):
    exp = small_exp(cfg, trials=2)
    sweep_snr(exp, tmp_path / "s")
    sweep_snr(dataclasses.replace(exp, workers=2), tmp_path / "p")
    assert (tmp_path / "s" / "sweep.csv").read_bytes() == (tmp_path / "p" / "sweep.csv").read_bytes()


def test_emit_scatter_header_only_for_empty_input(tmp_path):
    emit_scatter([], tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines() == [",".join(harness.SCATTER_COLUMNS)]


def test_scatter_counts_match_detections(tmp_path, cfg):
    exp = small_exp(cfg)
    metrics = run_scatter(exp, 3, "proposed", 10.0, tmp_path / "s.csv")
    with open(tmp_path / "s.csv") as fh:
        rows = list(csv.DictReader(fh))
    for t, m in enumerate(metrics):
        mine = [r for r in rows if int(r["trial"]) == t]
        assert sum(r["kind"] == "estimate" for r in mine) == m["detections"]
        assert m["clutter_detections"] == 0
    assert {r["kind"] for r in rows} <= {"truth_target", "truth_clutter", "estimate"}


# --- config and plumbing --------------------------------------------------

def test_experiment_config_round_trip(tmp_path, cfg):
    exp = small_exp(cfg, modes=("proposed", "rma"), snr_grid=(-5.0, 2.5),
                    scenario=ScenarioSpec(clutter_doppler="uniform"))
    save_experiment_config(exp, tmp_path / "e.ini")
    assert load_experiment_config(tmp_path / "e.ini") == exp


def test_experiment_config_validation(cfg):
    with pytest.raises(ValueError):
        small_exp(cfg, modes=("gmm",)).validate()
    with pytest.raises(ValueError):
        small_exp(cfg, trials=0).validate()
    with pytest.raises(ValueError):
        small_exp(cfg, rma_window=2).validate()


@pytest.fixture
def custom_mode():
    def apply(cube, cfg, exp):
        # blanks every snapshot: a stand-in for an external baseline
        return [harness.cc.CancelledCube(np.zeros_like(cube.samples[c]), cube.noise_variance,
                                         cube.symbol_index, c)
                for c in harness._current_bursts(exp)]
    register_front_end(FrontEnd("blank", lambda cfg, exp: 0, apply))
    yield "blank"
    harness._FRONT_ENDS.pop("blank")


def test_registered_front_end_is_a_mode(custom_mode, cfg):
    assert custom_mode in available_modes()
    with pytest.raises(ValueError):
        register_front_end(get_front_end(custom_mode))
    small_exp(cfg, modes=("proposed", custom_mode)).validate()
    res = run_trial(scene(cfg), cfg, small_exp(cfg), custom_mode, 0)
    assert res.estimates == [] and res.metrics["det_rate"] == 0.0


def test_unknown_mode(cfg):
    with pytest.raises(ValueError):
        get_front_end("gmm")


def test_divergence_reports_trial(monkeypatch, cfg):
    def boom(*a, **k):
        raise SolverDivergenceError("non-finite")
    monkeypatch.setattr(harness, "solve_mmv", boom)
    with pytest.raises(TrialError) as err:
        run_trial(scene(cfg), cfg, small_exp(cfg), "proposed", 0, trial=17)
    assert err.value.trial == 17
