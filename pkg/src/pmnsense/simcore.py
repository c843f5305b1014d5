"""Downlink active-sensing signal model for SSB burst sets.

Symbol indexing: SSB g (1-based) occupies local symbols 4g .. 4g+3 of a
burst set and the last three, t = 4g + k with k = 1, 2, 3, are used for
sensing. Burst set b starts N_s symbols after burst set b - 1, so the
absolute symbol index of local symbol t in burst b is
``symbol_offset + b * N_s + t``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SystemConfig


class SignalModelError(ValueError):
    pass


@dataclass(frozen=True)
class PathParams:
    delay: float                 # s, round trip
    doppler: float               # Hz
    angle: float                 # rad, AoD = AoA
    amplitude: complex
    is_clutter: bool = False


@dataclass(frozen=True)
class SsbSchedule:
    """Beams and pilots of one burst set; repeated identically every burst.

    beams : (G, M) complex, unit-norm rows, constant over the 3 sensing symbols
    pilots : (N_occ, 3G) unit-modulus complex, column j is symbol ``symbol_index[j]``
    """

    beams: np.ndarray
    pilots: np.ndarray
    beam_angles: np.ndarray
    symbol_index: np.ndarray
    ssb_of_symbol: np.ndarray

    @property
    def num_ssb(self) -> int:
        return self.beams.shape[0]


@dataclass
class ReceivedCube:
    """Received samples, shape (bursts, M, N_occ, 3G) with explicit burst axis."""

    samples: np.ndarray
    noise_variance: float
    symbol_index: np.ndarray
    first_burst: int = 0
    symbol_offset: int = 0

    @property
    def burst_count(self) -> int:
        return self.samples.shape[0]

    def bursts(self, start: int, stop: int) -> "ReceivedCube":
        return ReceivedCube(self.samples[start:stop], self.noise_variance,
                            self.symbol_index, self.first_burst + start, self.symbol_offset)


def array_response(M: int, theta) -> np.ndarray:
    """ULA response with half-wavelength spacing, element m = exp(j*pi*m*sin(theta)).

    ``theta`` may be an array; the antenna axis is appended last.
    """
    if M < 1:
        raise SignalModelError("M must be >= 1")
    m = np.arange(M)
    s = np.sin(np.asarray(theta, dtype=float))
    return np.exp(1j * np.pi * np.multiply.outer(s, m))


def channel_matrix(paths, n: int, t: int, cfg: SystemConfig) -> np.ndarray:
    """M x M frequency-domain channel at subcarrier n, absolute symbol t."""
    M = cfg.num_antennas
    H = np.zeros((M, M), dtype=complex)
    df, Ts = cfg.subcarrier_spacing, cfg.symbol_period
    for p in paths:
        a = array_response(M, p.angle)
        H += (p.amplitude * np.exp(-2j * np.pi * n * p.delay * df)
              * np.exp(2j * np.pi * t * p.doppler * Ts) * np.outer(a, a))
    return H


def make_ssb_schedule(cfg: SystemConfig, pilot_seed: int = 0) -> SsbSchedule:
    G, M = cfg.num_ssb, cfg.num_antennas
    lo, hi = cfg.beam_sector_deg
    angles = np.deg2rad(np.linspace(lo, hi, G)) if G > 1 else np.deg2rad([(lo + hi) / 2])
    beams = array_response(M, angles).conj() / np.sqrt(M)
    rng = np.random.default_rng(pilot_seed)
    # QPSK-like unit-modulus pilots
    phases = rng.integers(0, 4, size=(cfg.num_occupied, 3 * G))
    pilots = np.exp(1j * (np.pi / 4 + np.pi / 2 * phases))
    g = np.repeat(np.arange(1, G + 1), 3)
    k = np.tile([1, 2, 3], G)
    return SsbSchedule(beams=beams, pilots=pilots, beam_angles=angles,
                       symbol_index=4 * g + k, ssb_of_symbol=g - 1)


def noiseless_echo(paths, schedule: SsbSchedule, cfg: SystemConfig,
                   bursts, symbol_offset: int = 0) -> np.ndarray:
    """Noise-free received samples, shape (len(bursts), M, N_occ, 3G)."""
    bursts = np.atleast_1d(np.asarray(bursts))
    M = cfg.num_antennas
    n = cfg.subcarrier_indices
    out = np.zeros((len(bursts), M, len(n), schedule.symbol_index.size), dtype=complex)
    if not paths:
        return out
    delay = np.array([p.delay for p in paths])
    dopp = np.array([p.doppler for p in paths])
    amp = np.array([p.amplitude for p in paths], dtype=complex)
    a = array_response(M, np.array([p.angle for p in paths]))           # (L, M)
    t_abs = (symbol_offset + bursts[:, None] * cfg.burst_spacing
             + schedule.symbol_index[None, :])                           # (B, S)
    if t_abs.max() > cfg.max_symbol_index:
        raise SignalModelError(
            f"absolute symbol index {t_abs.max()} exceeds guard {cfg.max_symbol_index}")
    w = schedule.beams[schedule.ssb_of_symbol]                           # (S, M)
    beam_gain = a @ w.T                                                  # (L, S) = a^T w_t
    delay_ph = np.exp(-2j * np.pi * np.outer(delay, n) * cfg.subcarrier_spacing)   # (L, N)
    dopp_ph = np.exp(2j * np.pi * dopp[:, None, None] * t_abs[None] * cfg.symbol_period)  # (L, B, S)
    coef = amp[:, None, None] * dopp_ph * beam_gain[:, None, :]          # (L, B, S)
    out = np.einsum("lbs,lm,ln->bmns", coef, a, delay_ph)
    return out * schedule.pilots[None, None, :, :]


def transmit_receive(paths, schedule: SsbSchedule, cfg: SystemConfig, rng_seed=0,
                     burst_count: int | None = None, first_burst: int = 0,
                     symbol_offset: int = 0, noise: bool = True) -> ReceivedCube:
    """Simulate ``burst_count`` consecutive burst sets (default P + 1).

    Noise of burst b is drawn from a generator seeded by ``(rng_seed, b)``, so
    overlapping burst ranges of the same seed see identical noise.
    """
    if burst_count is None:
        burst_count = cfg.canceller_order + 1
    bursts = np.arange(first_burst, first_burst + burst_count)
    y = noiseless_echo(paths, schedule, cfg, bursts, symbol_offset)
    sigma2 = cfg.noise_variance
    if noise:
        shape = y.shape[1:]
        for i, b in enumerate(bursts):
            rng = np.random.default_rng([int(rng_seed), int(b)])
            z = rng.standard_normal(shape + (2,)).view(complex)[..., 0]
            y[i] += np.sqrt(sigma2 / 2) * z
    return ReceivedCube(y, sigma2, schedule.symbol_index.copy(), first_burst, symbol_offset)
