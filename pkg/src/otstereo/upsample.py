"""Full-resolution recovery: 4x convex upsampling and an edge-guided filter."""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np

from otstereo.imageio import as_plane
from otstereo.pyramid import mean_pool2

SCALE = 4
# 3x3 quarter-resolution neighborhood, row-major
OFFSETS = [(a, b) for a in (-1, 0, 1) for b in (-1, 0, 1)]


def _check_dims(qshape, guide_shape):
    h, w = guide_shape
    if (-(-h // SCALE), -(-w // SCALE)) != tuple(qshape):
        raise ValueError(
            f"guide {guide_shape} is not {SCALE}x the quarter-res map {tuple(qshape)}"
        )


def upsample_weights(guide, qshape, sigma_space: float = 0.5,
                     sigma_guide: float = 0.05) -> np.ndarray:
    """Convex weights ``(H, W, 9)`` over each pixel's 3x3 quarter-res neighbors.

    The affinity of neighbor ``q`` for pixel ``p`` adds the squared distance
    from ``p`` to the center of block ``q`` (in quarter-res pixels) and the
    gap between ``guide[p]`` and the mean guide over block ``q``; weights
    are a softmax of the negative affinity over in-range neighbors.
    """
    g = as_plane(guide, channels=1).astype(np.float64)
    _check_dims(qshape, g.shape)
    h, w = g.shape
    qh, qw = qshape
    block_mean = mean_pool2(mean_pool2(g[..., None]))[..., 0]
    ys, xs = np.mgrid[0:h, 0:w]
    py, px = ys // SCALE, xs // SCALE
    logits = np.empty((h, w, len(OFFSETS)))
    for k, (a, b) in enumerate(OFFSETS):
        qy, qx = py + a, px + b
        inside = (qy >= 0) & (qy < qh) & (qx >= 0) & (qx < qw)
        cy = (SCALE * qy + (SCALE - 1) / 2.0 - ys) / SCALE
        cx = (SCALE * qx + (SCALE - 1) / 2.0 - xs) / SCALE
        gq = block_mean[np.clip(qy, 0, qh - 1), np.clip(qx, 0, qw - 1)]
        aff = (cy ** 2 + cx ** 2) / (2.0 * sigma_space ** 2)
        if np.isfinite(sigma_guide):
            aff = aff + np.abs(g - gq) / sigma_guide
        logits[..., k] = np.where(inside, -aff, -np.inf)
    logits -= logits.max(axis=-1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=-1, keepdims=True)


def apply_upsample(qmap, weights: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """Combine quarter-res values with ``weights`` from :func:`upsample_weights`."""
    q = np.asarray(qmap, dtype=np.float64)
    h, w = weights.shape[:2]
    qh, qw = q.shape
    ys, xs = np.mgrid[0:h, 0:w]
    py, px = ys // SCALE, xs // SCALE
    out = np.zeros((h, w))
    for k, (a, b) in enumerate(OFFSETS):
        qy = np.clip(py + a, 0, qh - 1)
        qx = np.clip(px + b, 0, qw - 1)
        out += weights[..., k] * q[qy, qx]
    return out * scale


def weighted_upsample(disparity, guide, weights: Optional[np.ndarray] = None,
                      sigma_space: float = 0.5, sigma_guide: float = 0.05) -> np.ndarray:
    """Quarter-res disparity to full resolution, values rescaled to full-res pixels.

    ``weights`` may be supplied externally with shape ``(H, W, 9)``; rows
    must be convex combinations.
    """
    d = np.asarray(disparity, dtype=np.float64)
    g = as_plane(guide, channels=1)
    if weights is None:
        weights = upsample_weights(g, d.shape, sigma_space, sigma_guide)
    else:
        _check_dims(d.shape, g.shape)
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != g.shape + (len(OFFSETS),):
            raise ValueError(f"weights must have shape {g.shape + (len(OFFSETS),)}")
    return apply_upsample(d, weights, scale=SCALE)


def warp_right(right, disparity) -> Tuple[np.ndarray, np.ndarray]:
    """Sample ``right[i, j - D[i, j]]`` with linear interpolation.

    Returns the warped image and a mask of samples that fell inside the
    right image; invalid samples are set to 0.
    """
    r = as_plane(right, channels=1).astype(np.float64)
    d = np.asarray(disparity, dtype=np.float64)
    if d.shape != r.shape:
        raise ValueError(f"disparity {d.shape} does not match image {r.shape}")
    h, w = r.shape
    src = np.arange(w)[None, :] - d
    valid = (src >= 0) & (src <= w - 1)
    s = np.clip(src, 0, w - 1)
    x0 = np.floor(s).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    t = s - x0
    rows = np.arange(h)[:, None]
    out = (1.0 - t) * r[rows, x0] + t * r[rows, x1]
    return np.where(valid, out, 0.0), valid


def edge_guided_filter(disparity, left, warped_right, valid=None, radius: int = 4,
                       sigma_color: float = 0.1, sigma_space: float = 2.0) -> np.ndarray:
    """Joint-bilateral smoothing of ``disparity`` guided by two images.

    The range distance between ``p`` and ``q`` is the smaller of the
    left-image and warped-right-image intensity gaps; where either warped
    sample is invalid only the left gap is used.
    """
    d = np.asarray(disparity, dtype=np.float64)
    lft = as_plane(left, channels=1).astype(np.float64)
    wr = np.asarray(warped_right, dtype=np.float64)
    if not d.shape == lft.shape == wr.shape:
        raise ValueError("disparity, left and warped right must have the same size")
    valid = np.ones(d.shape, bool) if valid is None else np.asarray(valid, bool)
    h, w = d.shape
    r = radius
    pad = ((r, r), (r, r))
    dp = np.pad(d, pad)
    lp = np.pad(lft, pad)
    wp = np.pad(wr, pad)
    vp = np.pad(valid, pad)
    inside = np.pad(np.ones((h, w), bool), pad)
    num = np.zeros((h, w))
    den = np.zeros((h, w))
    inv_c = 0.0 if np.isinf(sigma_color) else 1.0 / (2.0 * sigma_color ** 2)
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            sl = (slice(r + dy, r + dy + h), slice(r + dx, r + dx + w))
            dl = np.abs(lft - lp[sl])
            dw = np.abs(wr - wp[sl])
            both = valid & vp[sl]
            gap = np.where(both, np.minimum(dl, dw), dl)
            k = np.exp(-(dy * dy + dx * dx) / (2.0 * sigma_space ** 2) - gap * gap * inv_c)
            k = np.where(inside[sl], k, 0.0)
            num += k * dp[sl]
            den += k
    return num / den
