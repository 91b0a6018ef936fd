"""Handcrafted multi-resolution feature pyramid.

Census bits, zero-mean sparse patch samples and image-gradient channels
of a lightly blurred image stand in for a learned backbone. The stride-1
descriptor map is mean-pooled 2x2 down to strides 4, 8, 16 and 32,
linearly projected to ``dim`` channels and L2-normalized.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.ndimage import gaussian_filter

from otstereo.imageio import as_plane

STRIDES = (4, 8, 16, 32)
MIN_SIZE = 32


@dataclass
class DescriptorConfig:
    window: int = 5
    census_weight: float = 0.05
    # patch_window 0 disables the patch channels
    patch_window: int = 7
    patch_dilation: int = 3
    gradients: bool = True
    gradient_scale: float = 4.0
    # constant channel, keeps textureless vectors normalizable
    bias: float = 0.05
    # Gaussian pre-blur; rounds the correlation peak for sub-pixel fits
    prefilter_sigma: float = 2.0
    dim: int = 80
    projection: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.patch_window and (self.patch_window < 3 or self.patch_window % 2 == 0):
            raise ValueError(f"patch window must be 0 or an odd int >= 3, got {self.patch_window}")
        if self.patch_dilation < 1:
            raise ValueError("patch dilation must be >= 1")
        if self.prefilter_sigma < 0:
            raise ValueError("prefilter sigma must be >= 0")

    @property
    def raw_dim(self) -> int:
        return (self.window * self.window - 1 + self.patch_window ** 2
                + (2 if self.gradients else 0) + 1)


@dataclass
class FeaturePyramid:
    """Feature maps of shape ``(H_s, W_s, C)`` for each stride in :data:`STRIDES`."""

    levels: List[np.ndarray]
    strides: tuple = field(default=STRIDES)

    def __post_init__(self):
        if len(self.levels) != len(self.strides):
            raise ValueError("one feature map per stride is required")

    def level(self, stride: int) -> np.ndarray:
        return self.levels[self.strides.index(stride)]

    @property
    def dim(self) -> int:
        return self.levels[0].shape[-1]


def census_descriptor(image, window: int = 5) -> np.ndarray:
    """Census bits of every pixel: 1 where a window neighbor is brighter than the center.

    Returns an ``(H, W, window**2 - 1)`` float32 map. Neighbors are ordered
    row-major over the window with the center skipped; borders replicate
    edge pixels.
    """
    if window not in (3, 5, 7):
        raise ValueError(f"census window must be 3, 5 or 7, got {window}")
    img = as_plane(image, channels=1)
    r = window // 2
    h, w = img.shape
    padded = np.pad(img, r, mode="edge")
    bits = []
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if dy == 0 and dx == 0:
                continue
            nb = padded[r + dy : r + dy + h, r + dx : r + dx + w]
            bits.append(nb > img)
    return np.stack(bits, axis=-1).astype(np.float32)


def patch_descriptor(image, window: int = 7, dilation: int = 3) -> np.ndarray:
    """Intensities on a dilated ``window x window`` grid minus their mean.

    Returns an ``(H, W, window**2)`` map; borders replicate edge pixels.
    Removing the mean makes the samples invariant to local brightness.
    """
    img = as_plane(image, channels=1).astype(np.float64)
    r = (window // 2) * dilation
    h, w = img.shape
    padded = np.pad(img, r, mode="edge")
    offsets = range(-r, r + 1, dilation)
    samples = np.stack(
        [padded[r + dy : r + dy + h, r + dx : r + dx + w] for dy in offsets for dx in offsets],
        axis=-1,
    )
    return (samples - samples.mean(axis=-1, keepdims=True)).astype(np.float32)


def _gradients(img: np.ndarray) -> np.ndarray:
    padded = np.pad(img, 1, mode="edge")
    gx = 0.5 * (padded[1:-1, 2:] - padded[1:-1, :-2])
    gy = 0.5 * (padded[2:, 1:-1] - padded[:-2, 1:-1])
    return np.stack([gx, gy], axis=-1)


def stride1_descriptor(image, cfg: DescriptorConfig) -> np.ndarray:
    img = as_plane(image, channels=1)
    if cfg.prefilter_sigma > 0:
        img = gaussian_filter(img, cfg.prefilter_sigma, mode="nearest")
    # centered to +-1 so unrelated pixels correlate near zero after pooling
    parts = [cfg.census_weight * (2.0 * census_descriptor(img, cfg.window) - 1.0)]
    if cfg.patch_window:
        parts.append(patch_descriptor(img, cfg.patch_window, cfg.patch_dilation))
    if cfg.gradients:
        parts.append(cfg.gradient_scale * _gradients(img))
    parts.append(np.full(img.shape + (1,), cfg.bias, dtype=np.float32))
    return np.concatenate(parts, axis=-1).astype(np.float32)


def mean_pool2(fmap: np.ndarray) -> np.ndarray:
    """2x2 mean pooling with ceil output size (odd edges are replicated)."""
    h, w = fmap.shape[:2]
    ph, pw = h % 2, w % 2
    if ph or pw:
        fmap = np.pad(fmap, ((0, ph), (0, pw), (0, 0)), mode="edge")
    return 0.25 * (
        fmap[0::2, 0::2] + fmap[1::2, 0::2] + fmap[0::2, 1::2] + fmap[1::2, 1::2]
    )


def descriptor_levels(image, cfg: DescriptorConfig) -> List[np.ndarray]:
    """Pre-projection descriptor maps at strides 4, 8, 16 and 32."""
    img = as_plane(image, channels=1)
    if min(img.shape) < MIN_SIZE:
        raise ValueError(f"image must be at least {MIN_SIZE}x{MIN_SIZE}, got {img.shape}")
    fmap = stride1_descriptor(img, cfg)
    levels = []
    stride = 1
    while stride < STRIDES[-1]:
        fmap = mean_pool2(fmap)
        stride *= 2
        if stride in STRIDES:
            levels.append(fmap)
    return levels


def projection_matrix(cfg: DescriptorConfig) -> np.ndarray:
    if cfg.projection is not None:
        proj = np.asarray(cfg.projection, dtype=np.float32)
        if proj.shape != (cfg.raw_dim, cfg.dim):
            raise ValueError(
                f"projection must have shape {(cfg.raw_dim, cfg.dim)}, got {proj.shape}"
            )
        return proj
    if cfg.raw_dim > cfg.dim:
        raise ValueError(
            f"descriptor has {cfg.raw_dim} channels but dim={cfg.dim}; "
            "supply a projection matrix or raise dim"
        )
    return np.eye(cfg.raw_dim, cfg.dim, dtype=np.float32)


def l2_normalize(fmap: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    norm = np.sqrt(np.sum(fmap.astype(np.float64) ** 2, axis=-1, keepdims=True))
    return (fmap / np.maximum(norm, eps)).astype(np.float32)


def build_pyramid(image, cfg: Optional[DescriptorConfig] = None) -> FeaturePyramid:
    cfg = cfg or DescriptorConfig()
    proj = projection_matrix(cfg)
    levels = [l2_normalize(lv @ proj) for lv in descriptor_levels(image, cfg)]
    return FeaturePyramid(levels)
