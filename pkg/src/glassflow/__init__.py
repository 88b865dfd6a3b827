"""Replica Glauber dynamics of the SK spin glass and its mean-field flow."""
from .model import (Atom, ConstantRate, EmpiricalMeasure, GlauberRate, ModelParams, ParameterError,
                    RateFunction, glauber_rate, rate_assumption_check, validate_params)
from .couplings import CouplingMatrix, field, field_flip_update, operator_norm_scaled, sample_couplings
from .kernels import BACKEND

__version__ = "0.1.0"
