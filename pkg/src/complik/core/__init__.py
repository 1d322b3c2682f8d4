from .distributions import (
    bvn_cdf,
    chisq_quantile,
    chisq_sf,
    norm_cdf,
    norm_ppf,
    weighted_chisq_quantile,
    weighted_chisq_sf,
)
from .linalg import NotPositiveDefiniteError, pencil_eigvals, repair_psd, sym_inverse, symmetrize
from .model import CompositeModel, Reparameterized, fd_step
from .params import PartitionedParams
from .rng import RngStream, as_generator

__all__ = [
    "CompositeModel",
    "NotPositiveDefiniteError",
    "PartitionedParams",
    "Reparameterized",
    "RngStream",
    "as_generator",
    "bvn_cdf",
    "chisq_quantile",
    "chisq_sf",
    "fd_step",
    "norm_cdf",
    "norm_ppf",
    "pencil_eigvals",
    "repair_psd",
    "sym_inverse",
    "symmetrize",
    "weighted_chisq_quantile",
    "weighted_chisq_sf",
]
