"""System configuration and its key-value text file format.

Defaults reproduce the simulated numerology: 4-antenna ULA, 2.35 GHz carrier,
100 MHz bandwidth over 512 subcarriers (240 occupied by the SSB), a 512-point
delay grid with 10 ns bins, and G = 4 beams per burst set.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SystemConfig:
    num_antennas: int = 4
    num_subcarriers: int = 512          # total N, sets the subcarrier spacing
    num_occupied: int = 240             # subcarriers carrying the SSB
    first_subcarrier: int = 1           # index n of the first occupied subcarrier
    bandwidth: float = 100e6            # Hz
    cp_duration: float = 0.36e-6        # s, ~7% of the useful symbol (NR normal CP ratio)
    carrier_freq: float = 2.35e9        # Hz
    num_ssb: int = 4                    # G
    burst_spacing: int = 128            # N_s, symbols between burst sets
    canceller_order: int = 2            # P
    delay_grid: int = 512               # N_d
    dict_cols: int = 170                # N_p
    grid_origin: int = 1                # first dictionary bin l' (1 per the model, 0 optional)
    tx_power_dbm: float = 30.0
    noise_psd_dbm_hz: float = -174.0
    beam_sector_deg: tuple[float, float] = (-60.0, 60.0)
    clutter_doppler_bound: float = 1.0  # Hz
    max_symbol_index: int = 10**7       # guard on absolute symbol indices

    def __post_init__(self):
        self.validate()

    @property
    def subcarrier_spacing(self) -> float:
        return self.bandwidth / self.num_subcarriers

    @property
    def symbol_period(self) -> float:
        return self.num_subcarriers / self.bandwidth + self.cp_duration

    @property
    def bin_duration(self) -> float:
        """Delay-grid step 1/(N_d * df) in seconds."""
        return 1.0 / (self.delay_grid * self.subcarrier_spacing)

    @property
    def subcarrier_indices(self):
        return np.arange(self.first_subcarrier, self.first_subcarrier + self.num_occupied)

    @property
    def grid_indices(self):
        return np.arange(self.grid_origin, self.grid_origin + self.dict_cols)

    @property
    def max_delay(self) -> float:
        """Largest delay on the dictionary grid."""
        return (self.grid_origin + self.dict_cols - 1) * self.bin_duration

    @property
    def measurement_columns(self) -> int:
        return 3 * self.num_antennas * self.num_ssb

    @property
    def noise_variance(self) -> float:
        """Per-subcarrier, per-antenna noise variance in watts.

        Total thermal noise N_0 + 10 log10(B) dBm spread evenly over all N
        subcarriers.
        """
        total_dbm = self.noise_psd_dbm_hz + 10.0 * math.log10(self.bandwidth)
        return 10.0 ** ((total_dbm - 30.0) / 10.0) / self.num_subcarriers

    @property
    def blind_doppler(self) -> float:
        """First nonzero blind Doppler 1/(N_s T_s)."""
        return 1.0 / (self.burst_spacing * self.symbol_period)

    def validate(self):
        if self.num_antennas < 2:
            raise ConfigError("num_antennas must be >= 2")
        if self.num_ssb < 1:
            raise ConfigError("num_ssb must be >= 1")
        if self.canceller_order < 1:
            raise ConfigError("canceller_order must be >= 1")
        if not 1 <= self.dict_cols < self.delay_grid:
            raise ConfigError("need 1 <= dict_cols < delay_grid")
        if self.grid_origin not in (0, 1):
            raise ConfigError("grid_origin must be 0 or 1")
        if self.num_occupied < 1 or self.num_occupied > self.num_subcarriers:
            raise ConfigError("num_occupied must lie in [1, num_subcarriers]")
        if self.burst_spacing < 4 * self.num_ssb + 4:
            raise ConfigError("burst_spacing shorter than one burst set")
        if self.bandwidth <= 0 or self.cp_duration < 0:
            raise ConfigError("bandwidth must be positive, cp_duration nonnegative")
        lo, hi = self.beam_sector_deg
        if not -90.0 <= lo <= hi <= 90.0:
            raise ConfigError("beam_sector_deg must satisfy -90 <= lo <= hi <= 90")

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)


def _coerce(value: str, like):
    if isinstance(like, bool):
        return value.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(float(value))
    if isinstance(like, float):
        return float(value)
    if isinstance(like, tuple):
        return tuple(float(v) for v in value.replace(",", " ").split())
    if like is None:
        return None if value.strip().lower() in ("", "none") else value
    return value


def dataclass_from_section(cls, section: dict, default=None):
    """Build dataclass `cls` from string key/values, coercing by default types."""
    base = default if default is not None else cls()
    known = {f.name for f in fields(cls)}
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    changes = {k: _coerce(v, getattr(base, k)) for k, v in section.items()}
    return dataclasses.replace(base, **changes)


def dataclass_to_section(obj) -> dict[str, str]:
    out = {}
    for f in fields(obj):
        v = getattr(obj, f.name)
        if dataclasses.is_dataclass(v):
            continue
        if isinstance(v, (tuple, list)):
            out[f.name] = " ".join(repr(float(x)) if isinstance(x, (int, float)) else str(x)
                                   for x in v)
        elif isinstance(v, float):
            out[f.name] = repr(v)
        else:
            out[f.name] = str(v)
    return out


def read_sections(path) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    with open(path) as fh:
        parser.read_file(fh)
    return {name: dict(parser[name]) for name in parser.sections()}


def write_sections(path, sections: dict[str, dict[str, str]]):
    parser = configparser.ConfigParser()
    parser.optionxform = str
    for name, values in sections.items():
        parser[name] = values
    with open(path, "w") as fh:
        parser.write(fh)


def load_system_config(path) -> SystemConfig:
    sections = read_sections(path)
    return dataclass_from_section(SystemConfig, sections.get("system", {}))


def save_system_config(cfg: SystemConfig, path):
    write_sections(Path(path), {"system": dataclass_to_section(cfg)})
