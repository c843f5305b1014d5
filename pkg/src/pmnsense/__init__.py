"""Downlink SSB sensing with multipulse clutter cancellation and MMV sparse recovery.

Modules
  config     system numerology and INI config I/O
  simcore    SSB schedule, channel and received-signal model
  scenario   random and hand-built scenes with ground truth
  canceller  binomial canceller, pilot removal, measurement matrix, dictionary
  solver     MMV UAMP-SBL
  extract    delay / Doppler / angle / power extraction and tracking
  harness    end-to-end pipeline, baselines, metrics and sweeps
"""

from .canceller import build_dictionary, cancel, canceller_gain
from .config import SystemConfig
from .harness import (ExperimentConfig, run_no_cancel_baseline, run_pipeline, run_rma_baseline,
                      sweep_snr)
from .scenario import ScenarioSpec, generate
from .simcore import PathParams, array_response, transmit_receive
from .solver import detect_support, solve_mmv

__all__ = [
    "ExperimentConfig", "PathParams", "ScenarioSpec", "SystemConfig", "array_response",
    "build_dictionary", "cancel", "canceller_gain", "detect_support", "generate",
    "run_no_cancel_baseline", "run_pipeline", "run_rma_baseline", "solve_mmv", "sweep_snr",
    "transmit_receive",
]

__version__ = "0.1.0"
