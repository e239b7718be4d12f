"""Averaging toolkit for weakly dissipative planar SDEs with a flattened Hamiltonian."""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .model import (Harmonic, ModelSpec, SigmaModel, TestFunction, builtin_specs,  # noqa: F401
                    bracket_apply, eval_coefficients, eval_hamiltonian, generator_apply, time_average)
