"""Random and hand-built sensing scenes with recorded ground truth."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .config import SPEED_OF_LIGHT, SystemConfig
from .simcore import PathParams, SsbSchedule, array_response, make_ssb_schedule


class CoverageError(ValueError):
    """A path delay falls outside the delay dictionary."""


@dataclass(frozen=True)
class ScenarioSpec:
    path_count_range: tuple[float, float] = (15, 25)
    angle_span_deg: tuple[float, float] = (0.0, 45.0)
    base_distance_m: tuple[float, float] = (0.0, 60.0)
    base_doppler_hz: tuple[float, float] = (0.0, 600.0)
    angle_offset_deg: tuple[float, float] = (-75.0, 75.0)
    distance_offset_m: tuple[float, float] = (60.0, 120.0)
    speed_offset_mps: tuple[float, float] = (-40.0, 40.0)
    pathloss_exponent: float = 4.0
    rcs_m2: float = 1.0
    clutter_fraction: float = 0.5
    clutter_doppler: str = "zero"       # "zero" or "uniform" within the config bound
    distance_mode: str = "one_way"      # "one_way": tau = 2d/c; "total": tau = d/c
    on_grid: bool = True                # snap delays to the dictionary grid
    snr_floor_db: float = 0.0           # per-element SNR of the farthest configurable path
    rng_seed: int = 0

    def validate(self):
        for name in ("path_count_range", "angle_span_deg", "base_distance_m", "base_doppler_hz",
                     "angle_offset_deg", "distance_offset_m", "speed_offset_mps"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: empty range [{lo}, {hi}]")
        if self.path_count_range[0] < 1:
            raise ValueError("path_count_range must start at >= 1")
        if not 0.0 <= self.clutter_fraction <= 1.0:
            raise ValueError("clutter_fraction must lie in [0, 1]")
        if self.clutter_doppler not in ("zero", "uniform"):
            raise ValueError("clutter_doppler must be 'zero' or 'uniform'")
        if self.distance_mode not in ("one_way", "total"):
            raise ValueError("distance_mode must be 'one_way' or 'total'")
        if self.base_distance_m[0] + self.distance_offset_m[0] <= 0:
            raise ValueError("distances must be positive for the path-loss law")

    @property
    def max_distance(self) -> float:
        return self.base_distance_m[1] + self.distance_offset_m[1]


@dataclass
class Scenario:
    paths: list[PathParams]
    schedule: SsbSchedule
    meta: dict = field(default_factory=dict)

    @property
    def targets(self) -> list[PathParams]:
        return [p for p in self.paths if not p.is_clutter]

    @property
    def clutter(self) -> list[PathParams]:
        return [p for p in self.paths if p.is_clutter]

    def scaled(self, factor: float) -> "Scenario":
        paths = [dataclasses.replace(p, amplitude=p.amplitude * factor) for p in self.paths]
        return Scenario(paths, self.schedule, dict(self.meta, amplitude_scale=factor))


def delay_to_distance(delay, mode: str = "one_way"):
    return delay * SPEED_OF_LIGHT / (2.0 if mode == "one_way" else 1.0)


def doppler_to_speed(doppler, cfg: SystemConfig):
    """Radial speed in m/s for a monostatic echo, f_D = 2 v f_c / c."""
    return doppler * SPEED_OF_LIGHT / (2.0 * cfg.carrier_freq)


def snap_delay(delay: float, cfg: SystemConfig) -> float:
    lo, hi = cfg.grid_origin, cfg.grid_origin + cfg.dict_cols - 1
    return float(np.clip(np.rint(delay / cfg.bin_duration), lo, hi)) * cfg.bin_duration


def check_coverage(paths, cfg: SystemConfig):
    # round-to-nearest keeps anything below max_delay + half a bin on the grid
    limit = cfg.max_delay + 0.5 * cfg.bin_duration
    for p in paths:
        if not 0.0 <= p.delay < limit:
            raise CoverageError(f"delay {p.delay:.3e} s outside dictionary coverage [0, {limit:.3e})")


def path_power(distance, spec: ScenarioSpec, cfg: SystemConfig):
    """|b|^2 from the large-scale law P_tx * rcs / d^k, calibrated so a path at the
    ScenarioSpec's largest distance has per-element SNR ``snr_floor_db``."""
    p_tx = 10.0 ** ((cfg.tx_power_dbm - 30.0) / 10.0)
    floor = cfg.noise_variance * 10.0 ** (spec.snr_floor_db / 10.0)
    kappa = floor * spec.max_distance ** spec.pathloss_exponent / (p_tx * spec.rcs_m2)
    return kappa * p_tx * spec.rcs_m2 / np.asarray(distance, dtype=float) ** spec.pathloss_exponent


def generate(spec: ScenarioSpec, cfg: SystemConfig, pilot_seed: int = 0,
             max_resample: int = 1000) -> Scenario:
    spec.validate()
    rng = np.random.default_rng(spec.rng_seed)
    lo, hi = spec.path_count_range
    L = int(rng.integers(int(lo), int(hi) + 1))
    n_clutter = int(math.floor(spec.clutter_fraction * L))
    if spec.clutter_fraction < 1.0:
        n_clutter = min(n_clutter, L - 1)
    clutter_flags = np.zeros(L, dtype=bool)
    clutter_flags[rng.permutation(L)[:n_clutter]] = True
    mode_div = 2.0 if spec.distance_mode == "one_way" else 1.0

    paths = []
    for is_clutter in clutter_flags:
        for _ in range(max_resample):
            angle_deg = rng.uniform(*spec.angle_span_deg) + rng.uniform(*spec.angle_offset_deg)
            distance = rng.uniform(*spec.base_distance_m) + rng.uniform(*spec.distance_offset_m)
            speed = rng.uniform(*spec.speed_offset_mps)
            doppler = rng.uniform(*spec.base_doppler_hz) + 2.0 * speed * cfg.carrier_freq / SPEED_OF_LIGHT
            delay = distance * mode_div / SPEED_OF_LIGHT
            if delay < cfg.max_delay + 0.5 * cfg.bin_duration:
                break
        else:
            raise CoverageError("could not draw a delay inside dictionary coverage")
        if spec.on_grid:
            delay = snap_delay(delay, cfg)
        if is_clutter:
            bound = cfg.clutter_doppler_bound
            doppler = rng.uniform(-bound, bound) if spec.clutter_doppler == "uniform" else 0.0
        angle = np.deg2rad(np.clip(angle_deg, -90.0, 90.0))
        amp = np.sqrt(path_power(distance, spec, cfg)) * np.exp(2j * np.pi * rng.uniform())
        paths.append(PathParams(float(delay), float(doppler), float(angle), complex(amp), bool(is_clutter)))

    schedule = make_ssb_schedule(cfg, pilot_seed)
    return Scenario(paths, schedule, {"rng_seed": spec.rng_seed, "distance_mode": spec.distance_mode})


def fixed_target_scene(targets, clutter, cfg: SystemConfig, pilot_seed: int = 0) -> Scenario:
    targets = [dataclasses.replace(p, is_clutter=False) for p in targets]
    clutter = [dataclasses.replace(p, is_clutter=True) for p in clutter]
    paths = targets + clutter
    check_coverage(paths, cfg)
    return Scenario(paths, make_ssb_schedule(cfg, pilot_seed), {"fixed": True})


def element_snr(path: PathParams, schedule: SsbSchedule, cfg: SystemConfig) -> float:
    """Per-element receive SNR of a path under its best-aligned SSB beam (before cancellation)."""
    gain = np.abs(schedule.beams @ array_response(cfg.num_antennas, path.angle)) ** 2
    return abs(path.amplitude) ** 2 * float(gain.max()) / cfg.noise_variance


def pin_weakest_target_snr(scenario: Scenario, cfg: SystemConfig, snr_db: float) -> Scenario:
    """Rescale all amplitudes by one factor so the weakest target has ``snr_db``.

    The SNR is measured before the canceller. Averaged over Doppler the
    canceller's power gain equals its noise gain C(2P, P), so this is also the
    Doppler-averaged post-canceller SNR.
    """
    targets = scenario.targets
    if not targets:
        return scenario
    weakest = min(element_snr(p, scenario.schedule, cfg) for p in targets)
    factor = math.sqrt(10.0 ** (snr_db / 10.0) / weakest)
    return scenario.scaled(factor)


def scenario_to_dict(scenario: Scenario, cfg: SystemConfig) -> dict:
    mode = scenario.meta.get("distance_mode", "one_way")
    rows = []
    for i, p in enumerate(scenario.paths):
        rows.append({
            "index": i,
            "delay_s": p.delay,
            "doppler_hz": p.doppler,
            "angle_rad": p.angle,
            "amplitude_re": p.amplitude.real,
            "amplitude_im": p.amplitude.imag,
            "is_clutter": p.is_clutter,
            "distance_m": float(delay_to_distance(p.delay, mode)),
            "speed_mps": float(doppler_to_speed(p.doppler, cfg)),
            "bin": int(round(p.delay / cfg.bin_duration)),
        })
    return {"meta": scenario.meta, "paths": rows}


def save_scenario(scenario: Scenario, cfg: SystemConfig, path):
    with open(path, "w") as fh:
        json.dump(scenario_to_dict(scenario, cfg), fh, indent=2, sort_keys=True)


def load_scenario(path, cfg: SystemConfig, pilot_seed: int = 0) -> Scenario:
    with open(path) as fh:
        data = json.load(fh)
    paths = [PathParams(r["delay_s"], r["doppler_hz"], r["angle_rad"],
                        complex(r["amplitude_re"], r["amplitude_im"]), r["is_clutter"])
             for r in data["paths"]]
    return Scenario(paths, make_ssb_schedule(cfg, pilot_seed), data.get("meta", {}))
