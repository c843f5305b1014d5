"""Per-path delay, Doppler, angle and power from the detected rows of A,
plus burst-to-burst association and exponential smoothing.

Each surviving row i of A is one path. Its columns split into G blocks
d_{i,g} (one per SSB beam), each holding three per-symbol M-vectors
b_{i,t'}, b_{i,t'+1}, b_{i,t'+2}. Beam indices are 0-based here.

Angles are handled through the spatial phase pi*sin(theta), which the
extractor measures modulo 2*pi; differences and smoothing wrap accordingly
so that sin(theta) = 1 and sin(theta) = -1 are treated as the same point.
"""

from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass, field

import numpy as np

from .canceller import DelayDictionary, canceller_gain
from .config import SystemConfig
from .simcore import SsbSchedule, array_response


class ExtractionError(ValueError):
    pass


@dataclass
class PrunedRows:
    A: np.ndarray             # (L_hat, Upsilon)
    row_to_grid: np.ndarray   # l' of each row
    num_antennas: int
    num_ssb: int

    def blocks(self, i: int) -> np.ndarray:
        """d_{i,g} for all g as (G, 3, M)."""
        return self.A[i].reshape(self.num_ssb, 3, self.num_antennas)

    def __len__(self):
        return self.A.shape[0]


@dataclass(frozen=True)
class PathEstimate:
    delay: float
    doppler: float
    angle: float
    sin_angle: float
    power: float
    grid_bin: int
    beam: int
    reliable: bool = True


@dataclass
class Track:
    track_id: int
    q: np.ndarray             # smoothed (delay, doppler, sin_angle, power)
    grid_bin: int
    last_update: int
    hits: int = 1

    def estimate(self) -> PathEstimate:
        delay, doppler, s, power = self.q
        return PathEstimate(float(delay), float(doppler), float(np.arcsin(np.clip(s, -1, 1))),
                            float(s), float(power), int(self.grid_bin), -1)


def wrap_sin_diff(a, b):
    """(a - b) for sin(theta) values, wrapped so pi*(a - b) lies in [-pi, pi)."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return (d + 1.0) % 2.0 - 1.0


def prune(A: np.ndarray, support, dictionary: DelayDictionary, cfg: SystemConfig) -> PrunedRows:
    support = np.asarray(support, dtype=int)
    return PrunedRows(A[support], dictionary.grid[support], cfg.num_antennas, cfg.num_ssb)


def estimate_delay(grid_index: int, cfg: SystemConfig) -> float:
    lo, hi = cfg.grid_origin, cfg.grid_origin + cfg.dict_cols - 1
    if not lo <= grid_index <= hi:
        raise ExtractionError(f"grid index {grid_index} outside [{lo}, {hi}]")
    return grid_index / (cfg.delay_grid * cfg.subcarrier_spacing)


def select_beam(blocks: np.ndarray) -> int:
    """Beam whose block has the largest 2-norm; ties go to the smaller index."""
    norms = np.linalg.norm(blocks.reshape(blocks.shape[0], -1), axis=1)
    return int(np.argmax(norms))


def estimate_doppler(b: np.ndarray, T_s: float) -> float:
    """Doppler from the phase rotation between consecutive symbols of one SSB.

    ``b`` is (3, M): the per-symbol vectors of the selected beam.
    """
    acc = np.sum(b[:2] * b[1:].conj())
    if acc == 0:
        raise ExtractionError("zero Doppler accumulator, phase undefined")
    return float(-np.angle(acc) / (2.0 * np.pi * T_s))


def estimate_aoa(b: np.ndarray) -> tuple[float, float]:
    """(theta, sin theta) from the phase progression across adjacent antennas."""
    if b.shape[-1] < 2:
        raise ExtractionError("need at least two antennas")
    acc = np.sum(b[:, :-1] * b[:, 1:].conj())
    if acc == 0:
        raise ExtractionError("zero angle accumulator, phase undefined")
    s = -np.angle(acc) / np.pi
    s = float(np.clip(s, -1.0, 1.0))
    return float(np.arcsin(s)), s


def estimate_power(b: np.ndarray, gain: complex, beam: np.ndarray, theta: float,
                   notch_eps: float = 1e-6) -> tuple[float, bool]:
    """|b|^2 estimate and a reliability flag.

    Uses the middle symbol against the first and third, which carries an
    inherent |cos(2 pi f_D T_s)| factor (close to 1 for realistic Dopplers).
    """
    M = b.shape[-1]
    acc = abs(np.sum(b[1] * b[0].conj()) + np.sum(b[1] * b[2].conj()))
    beam_gain = abs(gain * np.sum(beam.conj() * array_response(M, theta).conj())) ** 2
    if abs(gain) < notch_eps or beam_gain == 0:
        return float("nan"), False
    return float(acc / (2 * M * beam_gain)), True


def extract_paths(rows: PrunedRows, schedule: SsbSchedule, cfg: SystemConfig,
                  cancelled: bool = True) -> list[PathEstimate]:
    """Delay, Doppler, angle and power for every pruned row.

    ``cancelled`` selects whether the rows went through the binomial canceller
    (its gain is then removed from the power estimate) or not (unit gain).
    """
    out = []
    T_s = cfg.symbol_period
    for i in range(len(rows)):
        blocks = rows.blocks(i)
        g = select_beam(blocks)
        b = blocks[g]
        try:
            f = estimate_doppler(b, T_s)
            theta, s = estimate_aoa(b)
        except ExtractionError:
            continue
        gain = (complex(canceller_gain(f, cfg.canceller_order, cfg.burst_spacing, T_s))
                if cancelled else 1.0)
        power, ok = estimate_power(b, gain, schedule.beams[g], theta)
        lp = int(rows.row_to_grid[i])
        out.append(PathEstimate(estimate_delay(lp, cfg), f, theta, s, power, lp, g, ok))
    return out


def smooth(track: Track, est: PathEstimate, alpha: float, burst: int) -> Track:
    """q_hat(i) = alpha q_hat(i-1) + (1 - alpha) q(i), angle taken on the wrapped phase."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    prev = track.q
    s_new = prev[2] + wrap_sin_diff(est.sin_angle, prev[2])
    power = est.power if np.isfinite(est.power) else prev[3]
    q = np.array([est.delay, est.doppler, s_new, power])
    qhat = alpha * prev + (1.0 - alpha) * q
    qhat[2] = wrap_sin_diff(qhat[2], 0.0)
    return dataclasses.replace(track, q=qhat, grid_bin=est.grid_bin, last_update=burst,
                               hits=track.hits + 1)


def associate(est_bins, est_sins, ref_bins, ref_sins, ref_priority=None,
              bin_gate: int = 1, sin_gate: float | None = 0.1) -> list[tuple[int, int]]:
    """Greedy one-to-one matching of estimates to references.

    Candidates must lie within ``bin_gate`` bins and (unless ``sin_gate`` is
    None) within ``sin_gate`` in sin(theta). Pairs are taken in order of bin
    distance, then reference priority (lower first), then angle distance.
    """
    est_bins = np.asarray(est_bins, dtype=int)
    ref_bins = np.asarray(ref_bins, dtype=int)
    est_sins = np.asarray(est_sins, dtype=float)
    ref_sins = np.asarray(ref_sins, dtype=float)
    prio = np.zeros(len(ref_bins)) if ref_priority is None else np.asarray(ref_priority)
    cands = []
    for i, j in itertools.product(range(len(est_bins)), range(len(ref_bins))):
        db = abs(int(est_bins[i]) - int(ref_bins[j]))
        ds = abs(float(wrap_sin_diff(est_sins[i], ref_sins[j])))
        if db <= bin_gate and (sin_gate is None or ds <= sin_gate):
            cands.append((db, prio[j], ds, i, j))
    cands.sort()
    used_e, used_r, pairs = set(), set(), []
    for _, _, _, i, j in cands:
        if i in used_e or j in used_r:
            continue
        used_e.add(i)
        used_r.add(j)
        pairs.append((i, j))
    return sorted(pairs)


@dataclass
class Tracker:
    """Track store updated once per burst set (single writer)."""

    alpha: float = 0.9
    bin_gate: int = 1
    sin_gate: float = 0.1
    max_misses: int = 3
    tracks: list[Track] = field(default_factory=list)
    _next_id: int = 0

    def update(self, estimates: list[PathEstimate], burst: int) -> list[tuple[int, int]]:
        """Fold one burst's estimates in; returns (estimate index, track id) pairs."""
        pairs = associate([e.grid_bin for e in estimates], [e.sin_angle for e in estimates],
                          [t.grid_bin for t in self.tracks], [t.q[2] for t in self.tracks],
                          bin_gate=self.bin_gate, sin_gate=self.sin_gate)
        matched = {}
        for i, j in pairs:
            self.tracks[j] = smooth(self.tracks[j], estimates[i], self.alpha, burst)
            matched[i] = self.tracks[j].track_id
        for i, e in enumerate(estimates):
            if i not in matched:
                power = e.power if np.isfinite(e.power) else 0.0
                t = Track(self._next_id, np.array([e.delay, e.doppler, e.sin_angle, power]),
                          e.grid_bin, burst)
                self._next_id += 1
                self.tracks.append(t)
                matched[i] = t.track_id
        self.tracks = [t for t in self.tracks if burst - t.last_update < self.max_misses]
        return sorted(matched.items())

    def confirmed(self, min_hits: int = 1) -> list[Track]:
        return [t for t in self.tracks if t.hits >= min_hits]
