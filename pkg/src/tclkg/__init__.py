"""Time-local projected dynamics with generalized Kawasaki-Gunton projectors."""

from .ansatz import (
    bloch_linear_ansatz,
    gibbs_ansatz,
    linear_ansatz,
    renyi_ansatz,
    sqrt_two_level_ansatz,
    two_level_ansatz,
)
from .kg_dynamics import first_order_rhs, second_order_rhs, solve_mean
from .models import resonance_fluorescence
from .projectors import argyres_kelley, constant_family, kg_nonlinear, kg_parametric, kg_time_dependent
from .propagator import dyson_terms, propagate, transport
from .tcl import compositions, exact_coefficients, perturbative_coefficients

__version__ = "0.1.0"
