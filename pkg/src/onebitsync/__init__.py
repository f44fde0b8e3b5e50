"""Two-stage CFO and channel estimation from one-bit quantized MIMO observations."""

__version__ = "0.1.0"

from .cfo import CfoEstimate, CfoSearchConfig, estimate_cfo
from .channels import GaussianChannelParams, MmWaveChannelParams
from .gamp import BernoulliGaussianPrior, GampConfig, GaussianPrior, estimate_channel
from .model import ComplexModelInstance, SystemDims, TrainingBlock

__all__ = [
    "__version__",
    "BernoulliGaussianPrior",
    "CfoEstimate",
    "CfoSearchConfig",
    "ComplexModelInstance",
    "GampConfig",
    "GaussianChannelParams",
    "GaussianPrior",
    "MmWaveChannelParams",
    "SystemDims",
    "TrainingBlock",
    "estimate_cfo",
    "estimate_channel",
]
