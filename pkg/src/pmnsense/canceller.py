"""Multipulse clutter cancellation and construction of the sparse delay model.

The binomial canceller combines the same symbol from P + 1 consecutive burst
sets, nulling every echo whose Doppler is a multiple of 1/(N_s T_s)
(including zero). After pilot removal the per-symbol snapshots are stacked
into the N x Upsilon measurement matrix R = C' A + Z over the delay dictionary C'.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from math import comb

import numpy as np

from .config import SystemConfig
from .simcore import ReceivedCube, SsbSchedule


class CancellerError(ValueError):
    pass


@dataclass
class CancelledCube:
    samples: np.ndarray           # (M, N_occ, 3G)
    effective_noise_var: float
    symbol_index: np.ndarray
    current_burst: int            # burst index whose symbols ỹ refers to


@dataclass
class MeasurementMatrix:
    """R with columns in (g, k, m) lexicographic order: col = (3g + k) M + m (0-based)."""

    R: np.ndarray
    num_antennas: int
    num_ssb: int

    @property
    def shape(self):
        return self.R.shape

    def column_index(self, g: int, k: int, m: int) -> int:
        return (3 * g + k) * self.num_antennas + m

    def blocks(self) -> np.ndarray:
        """View of R as (N, G, 3, M)."""
        return self.R.reshape(self.R.shape[0], self.num_ssb, 3, self.num_antennas)

    def to_csv(self, path):
        """Flat dump: one line per entry (row, col, g, k, m, re, im)."""
        N, U = self.R.shape
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row", "col", "g", "k", "m", "re", "im"])
            for col in range(U):
                s, m = divmod(col, self.num_antennas)
                g, k = divmod(s, 3)
                for row in range(N):
                    v = self.R[row, col]
                    w.writerow([row, col, g, k, m, repr(float(v.real)), repr(float(v.imag))])

    def to_npy(self, path):
        np.save(path, self.R)


@dataclass(frozen=True)
class DelayDictionary:
    C: np.ndarray          # (N, N_p), entry (n, l') = exp(-j 2 pi n l' / N_d)
    U: np.ndarray          # (N, N) unitary
    singular_values: np.ndarray
    V: np.ndarray          # (N_p, N_p) unitary, C = U Lambda V
    Phi: np.ndarray        # Lambda V, (N, N_p)
    lam: np.ndarray        # Lambda Lambda^H 1, length N
    grid: np.ndarray       # l' of each column
    subcarriers: np.ndarray

    @property
    def num_cols(self) -> int:
        return self.C.shape[1]


def canceller_gain(doppler, P: int, N_s: int, T_s: float):
    """Frequency response (2j sin(pi f N_s T_s))^P exp(-j pi P f N_s T_s)."""
    if P < 1:
        raise CancellerError("P must be >= 1")
    x = np.pi * np.asarray(doppler, dtype=float) * N_s * T_s
    return (2j * np.sin(x)) ** P * np.exp(-1j * P * x)


def binomial_weights(P: int) -> np.ndarray:
    return np.array([(-1) ** p * comb(P, p) for p in range(P + 1)], dtype=float)


def cancel(cube: ReceivedCube, P: int) -> CancelledCube:
    """ỹ_t = sum_p (-1)^p C(P, p) y_{t - p N_s}, applied to the last burst of the cube."""
    if cube.burst_count != P + 1:
        raise CancellerError(f"expected {P + 1} bursts, got {cube.burst_count}")
    w = binomial_weights(P)
    # burst P is the current one, burst P - p lies p burst sets earlier
    out = np.tensordot(w, cube.samples[::-1], axes=(0, 0))
    return CancelledCube(out, cube.noise_variance * comb(2 * P, P), cube.symbol_index,
                         cube.first_burst + P)


def passthrough(cube: ReceivedCube, burst: int = -1) -> CancelledCube:
    """No cancellation: one burst taken as is."""
    idx = burst % cube.burst_count
    return CancelledCube(cube.samples[idx].copy(), cube.noise_variance, cube.symbol_index,
                         cube.first_burst + idx)


def demodulate(cancelled: CancelledCube, schedule: SsbSchedule) -> np.ndarray:
    """r_{n,t} = conj(s_{n,t}) ỹ_{n,t}; returns (M, N_occ, 3G)."""
    return cancelled.samples * schedule.pilots.conj()[None, :, :]


def assemble(r: np.ndarray, cfg: SystemConfig) -> MeasurementMatrix:
    M, N, S = r.shape
    if S != 3 * cfg.num_ssb:
        raise CancellerError(f"expected {3 * cfg.num_ssb} sensing symbols, got {S}")
    if M != cfg.num_antennas:
        raise CancellerError(f"expected {cfg.num_antennas} antennas, got {M}")
    R = np.ascontiguousarray(r.transpose(1, 2, 0).reshape(N, S * M))
    return MeasurementMatrix(R, M, cfg.num_ssb)


@lru_cache(maxsize=16)
def _dictionary(subcarriers: tuple, grid: tuple, N_d: int) -> DelayDictionary:
    n = np.array(subcarriers)
    lp = np.array(grid)
    C = np.exp(-2j * np.pi * np.outer(n, lp) / N_d)
    U, s, V = np.linalg.svd(C, full_matrices=True)
    N, Np = C.shape
    k = s.size
    Phi = np.zeros((N, Np), dtype=complex)
    Phi[:k] = s[:, None] * V[:k]
    lam = np.zeros(N)
    lam[:k] = s ** 2
    for arr in (C, U, s, V, Phi, lam, n, lp):
        arr.setflags(write=False)
    return DelayDictionary(C, U, s, V, Phi, lam, lp, n)


def build_dictionary(cfg: SystemConfig) -> DelayDictionary:
    """Delay dictionary and its SVD; computed once per geometry and shared read-only."""
    return _dictionary(tuple(cfg.subcarrier_indices.tolist()),
                       tuple(cfg.grid_indices.tolist()), cfg.delay_grid)


def measurement_from_cube(cube: ReceivedCube, schedule: SsbSchedule, cfg: SystemConfig,
                          cancel_clutter: bool = True) -> tuple[MeasurementMatrix, CancelledCube]:
    c = cancel(cube, cfg.canceller_order) if cancel_clutter else passthrough(cube)
    return assemble(demodulate(c, schedule), cfg), c
