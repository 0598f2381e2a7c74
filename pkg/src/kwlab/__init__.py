"""kwlab: a numerical laboratory for fifth-order dispersive waves.

Periodic pseudo-spectral solver, the smoothed-energy correction
hierarchy, dyadic space-time norms, and samplers that turn the
quantitative estimates of the theory into desk-scale measurements.
"""

from .spectral import (
    GridSpec,
    RealField,
    SpectralField,
    dispersion_symbol,
    forward_transform,
    inverse_transform,
    scale_field,
    semigroup_apply,
    sobolev_norm,
)
from .solver import SolverConfig, Trajectory, conserved_l2, nonlinearity, simulate, step, traveling_wave
from .imethod import (
    IMultiplier,
    MultiplierSymbol,
    apply_I,
    drift_experiment,
    e2,
    e3,
    e4,
    gwp_schedule,
    lambda_k,
    m_eval,
    resonance_denominator,
    sigma3,
    sigma4,
    symmetrize,
)
from .bourgain import (
    ModeCloud,
    NormSpec,
    SpaceTimeField,
    algebraic_relation_gap,
    bilinear_lhs,
    mixed_norm,
    modulation,
    norm,
    region_classify,
    spacetime_transform,
)
from .samplers import (
    RatioReport,
    bilinear_ratio_test,
    hh_low_ratios,
    improved_bilinear_check,
    smoothing_check,
)

__version__ = "0.1.0"
