"""Multi-view feature augmentation classifier built on a small autodiff engine."""

from .backbone import BackboneConfig
from .config import TrainConfig
from .estimator import MVFeaAugClassifier
from .model import Model

__version__ = "0.1.0"

__all__ = ["BackboneConfig", "TrainConfig", "MVFeaAugClassifier", "Model",
           "__version__"]
