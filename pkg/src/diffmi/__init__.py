"""Mutual information estimation from the scores of diffusion processes."""
from .estimators import EstimatorVariant, McConfig, MiEstimate, entropy, estimate_mi, kl_divergence
from .score_models import CondScoreModel, JointScoreModel, ScoreArch, TrainConfig, train
from .sde import TimeSampler, VpSchedule

__version__ = "0.1.0"

__all__ = [
    "EstimatorVariant", "McConfig", "MiEstimate", "entropy", "estimate_mi", "kl_divergence",
    "CondScoreModel", "JointScoreModel", "ScoreArch", "TrainConfig", "train",
    "TimeSampler", "VpSchedule",
]
