import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pmnsense.config import SystemConfig
from pmnsense.simcore import (PathParams, SignalModelError, array_response, channel_matrix,
                              make_ssb_schedule, noiseless_echo, transmit_receive)

from conftest import on_grid, random_paths


# --- array response -------------------------------------------------------

def test_array_response_broadside():
    np.testing.assert_array_equal(array_response(4, 0.0), np.ones(4))


def test_array_response_thirty_degrees():
    np.testing.assert_allclose(array_response(2, math.pi / 6), [1, 1j], atol=1e-15)


@given(st.integers(1, 16), st.floats(-math.pi / 2, math.pi / 2))
def test_array_response_negated_angle_conjugates(M, theta):
    np.testing.assert_allclose(array_response(M, -theta), array_response(M, theta).conj(),
                               atol=1e-14)


def test_array_response_vectorised_angles():
    thetas = np.array([0.1, -0.4, 1.2])
    stacked = array_response(5, thetas)
    assert stacked.shape == (3, 5)
    for i, th in enumerate(thetas):
        np.testing.assert_allclose(stacked[i], array_response(5, th))


def test_array_response_rejects_empty_array():
    with pytest.raises(SignalModelError):
        array_response(0, 0.0)


# --- channel matrix -------------------------------------------------------

def test_channel_single_broadside_path_is_all_ones(cfg):
    H = channel_matrix([PathParams(0.0, 0.0, 0.0, 1.0)], 7, 11, cfg)
    np.testing.assert_allclose(H, np.ones((4, 4)), atol=1e-15)


@given(st.integers(0, 200), st.floats(-600, 600), st.floats(-1.5, 1.5), st.integers(0, 10**5))
def test_channel_single_path_rank_one(bin_index, fd, theta, t):
    cfg = SystemConfig()
    p = PathParams(bin_index * cfg.bin_duration, fd, theta, 0.3 - 0.7j)
    s = np.linalg.svd(channel_matrix([p], 13, t, cfg), compute_uv=False)
    assert s[1] <= 1e-10 * s[0]


def test_channel_superposition(cfg):
    rng = np.random.default_rng(3)
    paths = random_paths(rng, cfg, 3)
    for n, t in [(1, 5), (120, 133), (240, 10**4)]:
        total = channel_matrix(paths, n, t, cfg)
        parts = sum(channel_matrix([p], n, t, cfg) for p in paths)
        np.testing.assert_allclose(total, parts, rtol=0, atol=1e-15 * np.abs(total).max())


# --- SSB schedule ---------------------------------------------------------

def test_schedule_deterministic(cfg):
    a, b = make_ssb_schedule(cfg, 9), make_ssb_schedule(cfg, 9)
    np.testing.assert_array_equal(a.pilots, b.pilots)
    np.testing.assert_array_equal(a.beams, b.beams)
    assert not np.array_equal(a.pilots, make_ssb_schedule(cfg, 10).pilots)


def test_schedule_pilots_unit_modulus_and_beams_unit_norm(cfg):
    sch = make_ssb_schedule(cfg, 1)
    np.testing.assert_allclose(np.abs(sch.pilots), 1.0, atol=1e-15)
    np.testing.assert_allclose(np.linalg.norm(sch.beams, axis=1), 1.0, atol=1e-15)


def test_schedule_symbol_map(cfg):
    sch = make_ssb_schedule(cfg)
    # SSB g (1-based) uses local symbols 4g+1 .. 4g+3
    assert sch.symbol_index.tolist() == [5, 6, 7, 9, 10, 11, 13, 14, 15, 17, 18, 19]
    assert sch.ssb_of_symbol.tolist() == [0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3]
    np.testing.assert_allclose(np.rad2deg(sch.beam_angles), [-60, -20, 20, 60])


def test_schedule_beams_steer_to_their_angles(cfg):
    sch = make_ssb_schedule(cfg)
    for g, phi in enumerate(sch.beam_angles):
        gain = abs(sch.beams[g] @ array_response(cfg.num_antennas, phi)) ** 2
        assert gain == pytest.approx(cfg.num_antennas)


# --- transmit / receive ---------------------------------------------------

def test_pure_noise_variance(cfg):
    sch = make_ssb_schedule(cfg)
    cube = transmit_receive([], sch, cfg, rng_seed=4, burst_count=10)
    assert cube.samples.size >= 10**5
    var = np.mean(np.abs(cube.samples) ** 2)
    assert var == pytest.approx(cfg.noise_variance, rel=0.05)
    # circular: real and imaginary parts carry half each and are uncorrelated
    z = cube.samples.ravel() / math.sqrt(cfg.noise_variance)
    assert np.mean(z.real ** 2) == pytest.approx(0.5, abs=0.02)
    assert abs(np.mean(z.real * z.imag)) < 0.01


def test_noiseless_single_path_matches_direct_formula(cfg):
    """Every sample against H_{n,t} w_t s_{n,t} built from channel_matrix."""
    sch = make_ssb_schedule(cfg, 2)
    p = PathParams(37 * cfg.bin_duration, 312.5, math.radians(-23), 2e-6 * np.exp(0.4j))
    cube = transmit_receive([p], sch, cfg, burst_count=2, first_burst=5, symbol_offset=3,
                            noise=False)
    subs = cfg.subcarrier_indices
    for bi, b in enumerate([5, 6]):
        for s, t_loc in enumerate(sch.symbol_index):
            t = 3 + b * cfg.burst_spacing + t_loc
            w = sch.beams[sch.ssb_of_symbol[s]]
            for ni in (0, 57, 239):
                y = channel_matrix([p], subs[ni], t, cfg) @ w * sch.pilots[ni, s]
                np.testing.assert_allclose(cube.samples[bi, :, ni, s], y, rtol=0,
                                           atol=1e-12 * abs(p.amplitude))


def test_noiseless_output_is_linear_in_amplitude(cfg):
    rng = np.random.default_rng(5)
    paths = random_paths(rng, cfg, 4)
    sch = make_ssb_schedule(cfg)
    y1 = noiseless_echo(paths, sch, cfg, [0, 1])
    doubled = [PathParams(p.delay, p.doppler, p.angle, 2 * p.amplitude) for p in paths]
    np.testing.assert_allclose(noiseless_echo(doubled, sch, cfg, [0, 1]), 2 * y1,
                               rtol=0, atol=1e-15 * np.abs(y1).max())


def test_phase_progression_between_symbols(cfg):
    sch = make_ssb_schedule(cfg)
    fd = 437.0
    p = on_grid(20, cfg, doppler=fd, angle_deg=12, amp=1.0)
    y = noiseless_echo([p], sch, cfg, [0])[0] * sch.pilots.conj()[None]
    # consecutive symbols of one SSB, same beam
    ratio = y[:, :, 1] / y[:, :, 0]
    np.testing.assert_allclose(np.angle(ratio), 2 * math.pi * fd * cfg.symbol_period, atol=1e-9)


def test_single_path_power_bounded_by_beam_gain(cfg):
    sch = make_ssb_schedule(cfg)
    p = on_grid(50, cfg, doppler=100, angle_deg=33, amp=3e-6)
    y = noiseless_echo([p], sch, cfg, [0])[0]
    for s in range(sch.symbol_index.size):
        w = sch.beams[sch.ssb_of_symbol[s]]
        expect = abs(p.amplitude) ** 2 * abs(array_response(4, p.angle) @ w) ** 2
        np.testing.assert_allclose(np.abs(y[:, :, s]) ** 2, expect, rtol=1e-12)
        assert expect <= abs(p.amplitude) ** 2 * cfg.num_antennas * (1 + 1e-12)


def test_burst_noise_is_keyed_by_absolute_burst(cfg):
    sch = make_ssb_schedule(cfg)
    a = transmit_receive([], sch, cfg, rng_seed=8, burst_count=4, first_burst=0)
    b = transmit_receive([], sch, cfg, rng_seed=8, burst_count=2, first_burst=2)
    np.testing.assert_array_equal(a.samples[2:], b.samples)


def test_symbol_guard(cfg):
    sch = make_ssb_schedule(cfg)
    with pytest.raises(SignalModelError):
        noiseless_echo([on_grid(3, cfg)], sch, cfg, [10**6])
