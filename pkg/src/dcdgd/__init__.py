"""Differential-coded compressed decentralized gradient descent.

Submodules
----------
graph        consensus matrices, spectra and step-size / SNR thresholds
compressors  unbiased SNR-constrained compressors and the hybrid planner
bitcodec     wire format and bit-cost accounting
objectives   local objectives and dataset loading
engine       the per-node state machine, trials and diagnostics
harness      experiment configs and CSV output behind the ``dcdgd`` CLI
"""
from ._backend import BACKEND
from .bitcodec import CostModel, decode, encode, paper_cost
from .compressors import (
    CompressedMessage,
    CompressorSpec,
    HybridPlan,
    brute_force_plan,
    compress,
    estimate_stats,
    hybrid_compress,
    hybrid_plan,
    ternary_noise_power,
)
from .engine import RunConfig, StepSchedule, run, theory_report
from .graph import ConsensusMatrix, Topology, build_metropolis, load_matrix, spectral, thresholds
from .objectives import GlobalObjective, make_synthetic_five

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "CostModel", "decode", "encode", "paper_cost",
    "CompressedMessage", "CompressorSpec", "HybridPlan", "brute_force_plan", "compress", "estimate_stats",
    "hybrid_compress", "hybrid_plan", "ternary_noise_power",
    "RunConfig", "StepSchedule", "run", "theory_report",
    "ConsensusMatrix", "Topology", "build_metropolis", "load_matrix", "spectral", "thresholds",
    "GlobalObjective", "make_synthetic_five",
]
