from .augment import AugmentConfig, augment_pair
from .encoder import ViTEncoderConfig, encode, extract_features, init_encoder, project
from .losses import (
    AugmentedViews,
    StudentTeacherState,
    ema_update_teacher,
    loss_cls,
    loss_mim,
    total_loss,
)
from .masking import MaskSpec, blockwise_mask
from .pretrain import PretrainConfig, load_encoder, pretrain, save_encoder

__all__ = [
    "AugmentConfig", "augment_pair", "ViTEncoderConfig", "encode", "extract_features",
    "init_encoder", "project", "AugmentedViews", "StudentTeacherState", "ema_update_teacher",
    "loss_cls", "loss_mim", "total_loss", "MaskSpec", "blockwise_mask", "PretrainConfig",
    "load_encoder", "pretrain", "save_encoder",
]
