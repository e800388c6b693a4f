"""Fidelity of time-bin GHZ and linear-cluster states from a quantum emitter."""
from .model import (
    BranchingParams,
    CollectionParams,
    DetectionProbs,
    EmitterParams,
    FidelityReport,
    NumericalAccuracyError,
    ParameterSet,
    PostselectionError,
    Target,
    TargetState,
    TbfidError,
    ValidationError,
    branching_ratio,
    derive_detection_probs,
)
from .kernel import Kernel, kernel_fidelity, kernel_overhauser, kernel_phonon, phonon_fidelity
from .excitation import (
    DetectionFactors,
    ExcitationAmplitudes,
    PulseSpec,
    detection_factors,
    excitation_amplitudes,
    excitation_fidelity,
    excitation_fidelity_first_order,
    solve_two_level,
)
from .branching import (
    TransferMatrix,
    branching_fidelity,
    branching_first_order,
    success_probability,
    transfer_matrix,
)
from .sweep import combined_fidelity, combined_first_order, curves

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
