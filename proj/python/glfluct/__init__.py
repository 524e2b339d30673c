"""Trace-polynomial fluctuations of (r,s)-Brownian motions on GL_N."""

from ._core import (
    TracePoly,
    apply_D,
    apply_L,
    exact_fluctuation_moment,
    expand_increments,
    gamma,
    heat_expectation,
    parse,
    sample_gaussian_field,
    sigma_closed_poly,
    sigma_direct,
    sigma_free,
    simulate_and_estimate,
    to_string,
    wick_moment,
)

__all__ = [
    "TracePoly",
    "apply_D",
    "apply_L",
    "exact_fluctuation_moment",
    "expand_increments",
    "gamma",
    "heat_expectation",
    "parse",
    "sample_gaussian_field",
    "sigma_closed_poly",
    "sigma_direct",
    "sigma_free",
    "simulate_and_estimate",
    "to_string",
    "wick_moment",
]
