"""Python bindings for the qfeel C++ core.

The compiled extension holds the numerical routines; this module adds the
dict-based configuration layer around the end-to-end pipeline.
"""

import json

from ._core import (
    AllocationPlan,
    BandwidthAllocation,
    ConfigError,
    DeviceProfile,
    FitDerived,
    FitFailed,
    GapFit,
    Infeasible,
    InvalidInput,
    JointResult,
    NetworkConfig,
    NonConvergence,
    OutOfDomain,
    QfeelError,
    QuantizedGradient,
    allocate_bandwidth,
    brute_force_sweep,
    dbm_to_watts,
    dequantize,
    derive,
    ergodic_rate,
    exp_integral_ei,
    fit_gap_model,
    joint_optimize,
    large_scale_gain,
    payload_bits,
    predict_gap,
    quantize,
    rate_theta,
    round_latency,
    rounds_needed,
)
from . import _core


def default_config():
    """Every configuration key with its default value."""
    return json.loads(_core._default_config_json())


def run_pipeline(config=None, out_dir=None):
    """Run probe training, fitting, optimization and simulated validation.

    ``config`` may hold any subset of the keys from ``default_config()``.
    When ``out_dir`` is given the full report is written there as well.
    """
    text = _core._run_pipeline_json(json.dumps(config or {}), str(out_dir) if out_dir else "")
    return json.loads(text)


__all__ = [name for name in dir() if not name.startswith("_")]
