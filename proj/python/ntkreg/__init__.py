"""NTK regression, kernel ridge regression and label-noise bounds."""

from ._ntkreg import (
    DivergenceError,
    Error,
    NumericalError,
    SingularityError,
    UsageError,
    ValidationError,
    analytic_ntk,
    analytic_ntk_cross,
    bound_additive,
    bound_binary,
    bound_multiclass,
    corrupt_labels,
    empirical_ntk,
    krr_fit,
    krr_predict,
    lemma1_bound,
    lemma2_bound,
    linearized_equivalence,
    ramp_loss,
    rkhs_norm,
    synth_sphere,
)

__all__ = [name for name in dir() if not name.startswith("_")]
