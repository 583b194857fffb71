"""Continuous-time quantum error correction with feedback: full and reduced filters."""

from .codes import CodeSpec, bit_flip_code, build_syndrome_space, encoded_zero, five_qubit_code, load_code
from .full_filter import FullFilter, ModelParams
from .pauli import PauliString
from .reduced_filter import (
    CoefficientBasis,
    ReducedFilter,
    WonhamFilter,
    build_closure,
    truncate_first_level,
    truncate_minimal,
    untruncated_basis,
)

__version__ = "0.1.0"
