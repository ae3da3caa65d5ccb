"""Extended latent Gaussian models for spatial peaks-over-threshold extremes."""
from .errors import (
    ConvergenceError,
    DegenerateSiteError,
    ExlgmError,
    InvalidInputError,
    NotPositiveDefiniteError,
    OutOfHullError,
    TooFewExceedancesError,
)
from .evt import PPParameters, ExceedanceSet
from .link import TransformedParameters, h, h_inverse, link_forward, link_inverse

__version__ = "0.1.0"
