"""K-space transformer for undersampled MRI reconstruction (C++ core)."""

from ._kst import (
    Checkpoint,
    FormatError,
    NumericalError,
    acceleration,
    cost_hierarchical,
    cost_standard,
    default_config,
    fft2_centered,
    gaussian_2d_mask,
    ifft2_centered,
    phantom,
    psnr,
    ssim,
    train,
    uniform_1d_mask,
)

__all__ = [
    "Checkpoint",
    "FormatError",
    "NumericalError",
    "acceleration",
    "cost_hierarchical",
    "cost_standard",
    "default_config",
    "fft2_centered",
    "gaussian_2d_mask",
    "ifft2_centered",
    "phantom",
    "psnr",
    "ssim",
    "train",
    "uniform_1d_mask",
]
