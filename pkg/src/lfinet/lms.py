"""Laplacian multi-scale separation of an image into frequency bands.

The Gaussian pyramid blurs with a fixed 3x3 binomial kernel (reflect padding)
and halves resolution with 2x2 average pooling. Each high-frequency level is a
pyramid level minus the bilinearly upsampled next-coarser level, so the bands
telescope back to the input exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import functional as F
from .tensor import Tensor, as_tensor

GAUSSIAN_KERNEL = np.array([[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]]) / 16.0
N_LEVELS = 3
SIZE_MULTIPLE = 2**N_LEVELS


@dataclass
class FrequencyDecomposition:
    """High-frequency levels at H, H/2, H/4 and the low-frequency base at H/8."""

    levels: list[Tensor]
    base: Tensor

    def check_ladder(self):
        if len(self.levels) != N_LEVELS:
            raise ValueError(f"expected {N_LEVELS} high-frequency levels, got {len(self.levels)}")
        h, w = self.levels[0].shape[2:]
        for i, t in enumerate([*self.levels[1:], self.base], start=1):
            want = (h >> i, w >> i)
            if t.shape[2:] != want or h % (1 << i) or w % (1 << i):
                name = "base" if i == N_LEVELS else f"L{i}"
                raise ValueError(f"{name} has spatial size {t.shape[2:]}, expected {want}")


def as_image_batch(image) -> Tensor:
    """Promote (H, W) or (C, H, W) input to an (N, C, H, W) tensor."""
    t = as_tensor(image)
    if t.ndim == 2:
        return t.reshape(1, 1, *t.shape)
    if t.ndim == 3:
        return t.reshape(1, *t.shape)
    if t.ndim != 4:
        raise ValueError(f"image must be 2-, 3- or 4-D, got shape {t.shape}")
    return t


def check_size(h: int, w: int, multiple: int = SIZE_MULTIPLE):
    if h % multiple or w % multiple:
        raise ValueError(f"image height and width must be multiples of {multiple}, got ({h}, {w})")


def gaussian_blur(x: Tensor) -> Tensor:
    c = x.shape[1]
    kernel = np.broadcast_to(GAUSSIAN_KERNEL, (c, 1, 3, 3)).astype(x.dtype)
    return F.conv2d(F.pad2d(x, 1, "reflect"), kernel, groups=c)


def gaussian_pyramid(image, levels: int = N_LEVELS + 1) -> list[Tensor]:
    """Return ``levels`` images, each the blurred and 2x2-pooled version of the previous one."""
    x = as_image_batch(image)
    check_size(*x.shape[2:], multiple=2 ** (levels - 1))
    pyramid = [x]
    for _ in range(levels - 1):
        pyramid.append(F.avg_pool2x2(gaussian_blur(pyramid[-1])))
    return pyramid


def laplacian_decompose(image) -> FrequencyDecomposition:
    pyr = gaussian_pyramid(image)
    levels = [pyr[l] - F.bilinear_upsample(pyr[l + 1], 2) for l in range(N_LEVELS)]
    return FrequencyDecomposition(levels=levels, base=pyr[N_LEVELS])


def laplacian_reconstruct(d: FrequencyDecomposition) -> Tensor:
    d.check_ladder()
    x = d.base
    for level in reversed(d.levels):
        x = level + F.bilinear_upsample(x, 2)
    return x


def pad_to_multiple(image: np.ndarray, multiple: int = SIZE_MULTIPLE) -> tuple[np.ndarray, tuple[int, int]]:
    """Zero-pad the bottom/right of the last two axes up to ``multiple``; returns (padded, (pad_h, pad_w))."""
    h, w = image.shape[-2:]
    ph, pw = (-h) % multiple, (-w) % multiple
    if not (ph or pw):
        return image, (0, 0)
    widths = [(0, 0)] * (image.ndim - 2) + [(0, ph), (0, pw)]
    return np.pad(image, widths), (ph, pw)


def crop_padding(image: np.ndarray, pad: tuple[int, int]) -> np.ndarray:
    ph, pw = pad
    h, w = image.shape[-2:]
    return image[..., : h - ph, : w - pw]


def visualize_level(level: np.ndarray, scale: float = 255.0) -> np.ndarray:
    """Map a signed band to [0, 1] for viewing: clamp(128 + 4 * v * scale) / 255."""
    return np.clip(128.0 + 4.0 * level * scale, 0.0, 255.0) / 255.0
