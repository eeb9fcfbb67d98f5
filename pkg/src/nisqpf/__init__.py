"""Variational quantum power flow on a statevector simulator."""
from .driver import QpfConfig, QpfResult, precompute_basis_solutions, qpf_solve
from .io import load_case, parse_case
from .powerflow import NetworkCase, classical_fdlf, newton_raphson
from .sim import BELEM, NOISELESS, NoiseModel
from .stochastic import correlated_distribution, run_stochastic

__version__ = "0.1.0"

__all__ = [
    "BELEM",
    "NOISELESS",
    "NetworkCase",
    "NoiseModel",
    "QpfConfig",
    "QpfResult",
    "classical_fdlf",
    "correlated_distribution",
    "load_case",
    "newton_raphson",
    "parse_case",
    "precompute_basis_solutions",
    "qpf_solve",
    "run_stochastic",
]
