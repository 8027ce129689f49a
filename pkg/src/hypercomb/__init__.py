"""Simulation toolkit for a driven photonic mode coupled to a nonlinear
dissipative material branch: time-domain and harmonic-balance solvers,
rotating-frame reduction, comb/stability analysis, and sweep tooling."""

from .circuit import (
    CircuitParams,
    DriveSpec,
    EnergyBreakdown,
    StateVector,
    Tone,
    energy,
    eval_rhs,
    linear_transfer,
)
from .timedomain import (
    DivergenceError,
    EnvelopeSeries,
    SteadySegment,
    Trajectory,
    demodulate,
    integrate,
    settle,
)
from .spectral import (
    CombReport,
    InsufficientCombError,
    SpectralPeak,
    Spectrum,
    comb_metrics,
    find_peaks,
    spectrum,
    transmission,
)
from .harmonic import (
    BifurcationError,
    ContinuationPath,
    FourierSolution,
    GainCurve,
    NoConvergenceError,
    ProbeResponse,
    continuation,
    galerkin_residual,
    hb_solve,
    probe_transmission,
    small_signal_gain,
)
from .slowflow import (
    CoexistenceMap,
    DerivedCoefficients,
    FrameSpec,
    LoopResult,
    Quadratures,
    RegimeReport,
    ResolutionError,
    ResonatorSpec,
    SlowFlowParams,
    StabilityReport,
    SubharmonicReduction,
    build_frame,
    check_regime,
    coexistence_scan,
    derive_coefficients,
    envelope_coefficients,
    fixed_points,
    loop_analysis,
    simulate_envelope,
    slowflow_from_circuit,
    slowflow_jacobian,
    slowflow_rhs,
    subharmonic_reduction,
)

__version__ = "0.1.0"

__all__ = [
    "CircuitParams",
    "DriveSpec",
    "EnergyBreakdown",
    "StateVector",
    "Tone",
    "energy",
    "eval_rhs",
    "linear_transfer",
    "DivergenceError",
    "EnvelopeSeries",
    "SteadySegment",
    "Trajectory",
    "demodulate",
    "integrate",
    "settle",
    "CombReport",
    "InsufficientCombError",
    "SpectralPeak",
    "Spectrum",
    "comb_metrics",
    "find_peaks",
    "spectrum",
    "transmission",
    "BifurcationError",
    "ContinuationPath",
    "FourierSolution",
    "GainCurve",
    "NoConvergenceError",
    "ProbeResponse",
    "continuation",
    "galerkin_residual",
    "hb_solve",
    "probe_transmission",
    "small_signal_gain",
    "CoexistenceMap",
    "DerivedCoefficients",
    "FrameSpec",
    "LoopResult",
    "Quadratures",
    "RegimeReport",
    "ResolutionError",
    "ResonatorSpec",
    "SlowFlowParams",
    "StabilityReport",
    "SubharmonicReduction",
    "build_frame",
    "check_regime",
    "coexistence_scan",
    "derive_coefficients",
    "envelope_coefficients",
    "fixed_points",
    "loop_analysis",
    "simulate_envelope",
    "slowflow_from_circuit",
    "slowflow_jacobian",
    "slowflow_rhs",
    "subharmonic_reduction",
    "__version__",
]
