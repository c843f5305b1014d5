import math

import numpy as np
import pytest
from hypothesis import settings

from pmnsense.canceller import build_dictionary
from pmnsense.config import SystemConfig
from pmnsense.simcore import PathParams

settings.register_profile("repo", deadline=None, max_examples=50)
settings.load_profile("repo")

# one line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def cfg():
    return SystemConfig()


@pytest.fixture(scope="session")
def dictionary(cfg):
    return build_dictionary(cfg)


def on_grid(bin_index, cfg, doppler=0.0, angle_deg=0.0, amp=1e-6, clutter=False):
    return PathParams(bin_index * cfg.bin_duration, doppler, math.radians(angle_deg),
                      complex(amp), clutter)


def random_paths(rng, cfg, L, clutter=False):
    bins = rng.choice(np.arange(1, cfg.dict_cols + 1), size=L, replace=False)
    return [PathParams(int(b) * cfg.bin_duration,
                       0.0 if clutter else float(rng.uniform(-600, 600)),
                       float(rng.uniform(-1.4, 1.4)),
                       complex(1e-6 * rng.uniform(0.5, 2) * np.exp(2j * np.pi * rng.uniform())),
                       clutter)
            for b in bins]


def planted_instance(seed, dictionary, L=5, cols=48, snr_db=20.0):
    """R = C' A + Z with L unit-modulus rows on random grid columns.

    Returns (R, A, support, noise variance); SNR is per entry of C' A.
    """
    rng = np.random.default_rng(seed)
    Np = dictionary.num_cols
    support = np.sort(rng.choice(Np, L, replace=False))
    A = np.zeros((Np, cols), dtype=complex)
    A[support] = np.exp(2j * np.pi * rng.random((L, cols)))
    X = dictionary.C @ A
    s2 = np.mean(np.abs(X) ** 2) / 10 ** (snr_db / 10)
    Z = np.sqrt(s2 / 2) * (rng.standard_normal(X.shape) + 1j * rng.standard_normal(X.shape))
    return X + Z, A, support, s2
