"""Composite likelihood inference with adjusted likelihood ratio statistics."""

__version__ = "0.1.0"

from .fit import FitResult, constrained_mcle, mcle, mle_full
from .godambe import GodambeEstimate, assemble_godambe, estimate_godambe
from .grf import GrfDesign, GrfFullModel, GrfModel
from .probit import ProbitDesign, ProbitModel
from .stats import SuiteOptions, TestResult, TestSuiteResult, test_suite

__all__ = [
    "FitResult",
    "GodambeEstimate",
    "GrfDesign",
    "GrfFullModel",
    "GrfModel",
    "ProbitDesign",
    "ProbitModel",
    "SuiteOptions",
    "TestResult",
    "TestSuiteResult",
    "assemble_godambe",
    "constrained_mcle",
    "estimate_godambe",
    "mcle",
    "mle_full",
    "test_suite",
]
