"""Multi-fidelity spatio-temporal Gaussian processes with Vecchia likelihoods.

The LF field is a latent space-time GP; the HF field is a spatially scaled
copy of it plus an independent discrepancy GP.  Both latent processes get
sparse Vecchia factors, and the joint likelihood is recovered exactly from
them through a Woodbury identity.
"""
from .inference import FitResult, MfProblem, Prediction, baseline_fit_predict, fit, nlml, predict
from .kernels import KernelParams
from .meanmodel import GlsKind, GlsMode
from .mfstruct import NoiseModel
from .model import MfData, MfHyperParams, ModelConfig
from .rho import RhoKind, RhoModel, constant, linear, quadratic
from .vecchia import Conditioning, Ordering, OrderingStrategy

__version__ = "0.1.0"

__all__ = [
    "Conditioning",
    "FitResult",
    "GlsKind",
    "GlsMode",
    "KernelParams",
    "MfData",
    "MfHyperParams",
    "MfProblem",
    "ModelConfig",
    "NoiseModel",
    "Ordering",
    "OrderingStrategy",
    "Prediction",
    "RhoKind",
    "RhoModel",
    "baseline_fit_predict",
    "constant",
    "fit",
    "linear",
    "nlml",
    "predict",
    "quadratic",
]
