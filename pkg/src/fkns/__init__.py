"""Numerical laboratory for the periodically forced, degenerately noised 2D
stochastic vorticity equation: weighted-operator eigen-triples, pressure
functions, and occupation-measure large-deviation estimates at finite
spectral truncation."""

from .spectral import (
    SpectralField,
    TorusSpec,
    VelocityField,
    biot_savart,
    inner,
    nonlinear_term,
    sobolev_norm,
    symmetrized_bracket,
)
from .sde import (
    BlowUpError,
    ForcingSpec,
    NoisePath,
    NoiseSpec,
    SimulationParams,
    TimeSymbol,
    beta,
    homogenized_step,
    solve,
    step,
)
from .hormander import BracketClosure, bracket_closure, exact_bracket
from .feynman_kac import (
    FKEstimate,
    HProfile,
    PotentialDictionary,
    PotentialSpec,
    PotentialTerm,
    WeightedEnsemble,
    cocycle_residual,
    fk_apply,
    fk_measure_apply,
)
from .eigen import (
    DoobOperator,
    EigenTripleEstimate,
    SymbolGrid,
    build_eigen_triple,
    doob_apply,
    eigen_residuals,
    eigenfunction_kb,
    eigenmeasure_pullback,
    eigenvalue,
    eigenvalue_cocycle_residual,
)
from .ldp import (
    OccupationRecord,
    PressureCurve,
    RateFunctionEstimate,
    SpectralPressureOracle,
    clt_diagnostic,
    deviation_probability,
    legendre,
    occupation,
    pressure_direct,
    pressure_properties,
    pressure_spectral,
)

__version__ = "0.1.0"
