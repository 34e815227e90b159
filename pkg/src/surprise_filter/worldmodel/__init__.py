from .model import (
    VAR_FLOOR,
    CalibStats,
    GaussianBelief,
    LatentState,
    WorldModel,
    decode,
    decode_flat,
    encode,
    kl_surprise,
    posterior,
    predict_reward,
    prior,
    rejection_score,
    sequence_step,
)
from .fitting import Augmentation, Episode, filter_rollout, fit, ridge_fit
from .smoother import LinearSystem, rts_smooth
from . import io

__all__ = [
    "VAR_FLOOR",
    "Augmentation",
    "CalibStats",
    "Episode",
    "GaussianBelief",
    "LatentState",
    "LinearSystem",
    "WorldModel",
    "decode",
    "decode_flat",
    "encode",
    "filter_rollout",
    "fit",
    "io",
    "kl_surprise",
    "posterior",
    "predict_reward",
    "prior",
    "rejection_score",
    "ridge_fit",
    "rts_smooth",
    "sequence_step",
]
