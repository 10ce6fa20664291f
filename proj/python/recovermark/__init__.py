"""Robust saliency-recovery watermarking.

Images are float arrays of shape (H, W, 3) in [0, 1]; masks are boolean
(H, W) arrays with True marking the protected region.
"""

from ._core import (
    AttackError,
    CheckpointError,
    ConfigError,
    DimensionError,
    Model,
    UntrainedModelError,
    attack,
    composite,
    f1_auc,
    load_image,
    load_mask,
    localize,
    ms_ssim,
    ncc,
    psnr,
    save_image,
    schedule,
    segment,
    synthetic_dataset,
)

__all__ = [name for name in dir() if not name.startswith("_")]
