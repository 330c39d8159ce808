"""Dilated dual-attention U-Net: thin python surface over the C++ core."""

from ._core import (
    Model,
    bce_loss,
    bilinear_upsample,
    compute_metrics,
    conv2d,
    count_params_flops,
    dice_loss,
    equivalent_kernel_size,
    global_avg_pool,
    load_model,
    max_pool2d,
    seg_loss,
    selftest,
    sigmoid,
    theoretical_receptive_field,
)

__all__ = [
    "Model",
    "bce_loss",
    "bilinear_upsample",
    "compute_metrics",
    "conv2d",
    "count_params_flops",
    "dice_loss",
    "equivalent_kernel_size",
    "global_avg_pool",
    "load_model",
    "max_pool2d",
    "seg_loss",
    "selftest",
    "sigmoid",
    "theoretical_receptive_field",
]
