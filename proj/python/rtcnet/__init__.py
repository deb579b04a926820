"""Blind super-resolution with hierarchical texture codebooks."""

import torch as _torch  # noqa: F401  shared libtorch must load before _core

from ._core import (
    confusion_analysis,
    degrade,
    generate_patches,
    infer,
    psnr,
    quantize,
    ssim,
    train,
)

__all__ = [
    "confusion_analysis",
    "degrade",
    "generate_patches",
    "infer",
    "psnr",
    "quantize",
    "ssim",
    "train",
]
