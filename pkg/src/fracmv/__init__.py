"""Numerics for McKean-Vlasov equations driven by fractional noise.

Fractional operators, fBM sampling, empirical measures, a Picard solver for
the distribution-dependent equation, entropy-cost (Harnack) checks and
Bismut-type estimators for Lions derivatives.
"""

from .errors import (ConfigError, DegeneracyError, FracMVError, HypothesisViolation,
                     ParameterError)
from .grid import HurstPair, TimeGrid
from .model import DegenerateSpec, InitialLaw, LinearMeanFieldModel
from .scenario import load_scenario
from .solver import simulate_ensemble, solve_picard

__version__ = "0.1.0"
