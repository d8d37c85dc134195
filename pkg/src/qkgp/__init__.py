"""Gaussian-process regression with coherent-state kernels simulated on
truncated Fock spaces and on qubit registers."""

from .fock import InvalidTruncation, TruncationLeakage
from .gp import (Dataset, GPModel, NonPSDError, OptimizationError, Posterior,
                 log_marginal_likelihood, optimize, posterior, r2_score)
from .kernels import GramMatrix, Hyperparams, KernelError, KernelSpec, cross_gram, gram
from .pauli import PauliSum, PauliTerm, echo_probability, pauli_decompose

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "GPModel",
    "GramMatrix",
    "Hyperparams",
    "InvalidTruncation",
    "KernelError",
    "KernelSpec",
    "NonPSDError",
    "OptimizationError",
    "PauliSum",
    "PauliTerm",
    "Posterior",
    "TruncationLeakage",
    "cross_gram",
    "echo_probability",
    "gram",
    "log_marginal_likelihood",
    "optimize",
    "pauli_decompose",
    "posterior",
    "r2_score",
]
