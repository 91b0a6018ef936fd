"""Quarter-resolution refinement.

Two stages: confidence-weighted propagation of disparity into unreliable
pixels, followed by a fixed number of local residual updates. The local
rule refits a parabola to the correlation slice centered on the nearest
integer disparity, takes a damped capped step toward its vertex and
re-reads occlusion and confidence from the transport plan.
Every step reads only the previous maps (Jacobi updates).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from otstereo.otmatch import MatchMaps, window_mass


@dataclass(frozen=True)
class RefineConfig:
    iterations: int = 3
    radius: int = 7
    confidence_floor: float = 0.5
    step_cap: float = 0.5
    # fraction of the parabola step taken per update
    damping: float = 0.7
    spatial_sigma: float = 3.5
    feature_sigma: float = 0.1
    # scale of the correlation-fit term; inf disables it
    fit_sigma: float = 0.05
    confidence_radius: int = 2

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.radius < 1:
            raise ValueError("propagation radius must be >= 1")
        if not 0 < self.confidence_floor < 1:
            raise ValueError("confidence floor must lie in (0, 1)")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")


def _shifted(a: np.ndarray, dy: int, dx: int, fill):
    """``a[y + dy, x + dx]`` with out-of-range positions set to ``fill``."""
    h, w = a.shape[:2]
    out = np.full(a.shape, fill, dtype=a.dtype)
    if abs(dy) >= h or abs(dx) >= w:
        return out
    ys, yd = slice(max(dy, 0), h + min(dy, 0)), slice(max(-dy, 0), h + min(-dy, 0))
    xs, xd = slice(max(dx, 0), w + min(dx, 0)), slice(max(-dx, 0), w + min(-dx, 0))
    out[yd, xd] = a[ys, xs]
    return out


def slice_at(volume, disparity) -> np.ndarray:
    """Correlation of each pixel at a fractional disparity, linearly interpolated.

    Disparities outside ``[0, j]`` for column ``j`` read as -1.
    """
    vol = np.asarray(volume, dtype=np.float64)
    h, n, _ = vol.shape
    d = np.asarray(disparity, dtype=np.float64)
    jj = np.broadcast_to(np.arange(n)[None, :], (h, n))
    ii = np.broadcast_to(np.arange(h)[:, None], (h, n))
    src = jj - d
    ok = (src >= 0) & (d >= 0)
    s = np.clip(src, 0, n - 1)
    w0 = np.floor(s).astype(np.int64)
    w1 = np.minimum(w0 + 1, n - 1)
    t = s - w0
    val = (1.0 - t) * vol[ii, jj, w0] + t * vol[ii, jj, w1]
    return np.where(ok, val, -1.0)


def global_propagate(maps: MatchMaps, features, cfg: Optional[RefineConfig] = None,
                     volume=None) -> MatchMaps:
    """Fill pixels with confidence below the floor from confident neighbors.

    The new disparity is the mean of confident neighbors' disparities,
    weighted by confidence, feature similarity
    ``exp(-(1 - <f_p, f_q>) / feature_sigma)`` and a spatial Gaussian.
    With a correlation ``volume``, each neighbor's disparity is also
    weighted by how well it fits the target pixel:
    ``exp((c_p(D_q) - max c_p) / fit_sigma)``.
    Confident pixels, occlusion and confidence are returned untouched.
    """
    cfg = cfg or RefineConfig()
    d = np.asarray(maps.disparity, dtype=np.float64)
    g = np.asarray(maps.confidence, dtype=np.float64)
    f = np.asarray(features, dtype=np.float64)
    if f.shape[:2] != d.shape:
        raise ValueError(f"features {f.shape[:2]} do not match maps {d.shape}")
    low = g < cfg.confidence_floor
    src_w = np.where(low, 0.0, g)
    use_fit = volume is not None and np.isfinite(cfg.fit_sigma)
    if use_fit:
        vol = np.asarray(volume, dtype=np.float64)
        if vol.shape[:2] != d.shape:
            raise ValueError(f"volume {vol.shape[:2]} does not match maps {d.shape}")
        peak = vol.max(axis=-1)
    num = np.zeros_like(d)
    den = np.zeros_like(d)
    r = cfg.radius
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            spatial = np.exp(-(dy * dy + dx * dx) / (2.0 * cfg.spatial_sigma ** 2))
            fq = _shifted(f, dy, dx, 0.0)
            wq = _shifted(src_w, dy, dx, 0.0)
            dq = _shifted(d, dy, dx, 0.0)
            sim = np.exp(-(1.0 - np.sum(f * fq, axis=-1)) / cfg.feature_sigma)
            k = spatial * sim * wq
            if use_fit:
                k = k * np.exp((slice_at(vol, dq) - peak) / cfg.fit_sigma)
            num += k * dq
            den += k
    fill = low & (den > 0)
    out = d.copy()
    out[fill] = num[fill] / den[fill]
    return MatchMaps(out, maps.occlusion.copy(), maps.confidence.copy())


def parabola_offset(a, b, c):
    """Vertex of the parabola through ``(-1, a), (0, b), (1, c)``; NaN unless it is a maximum."""
    a, b, c = (np.asarray(x, dtype=np.float64) for x in (a, b, c))
    curv = a - 2.0 * b + c
    safe = np.where(curv < 0, curv, -1.0)
    return np.where(curv < 0, (a - c) / (2.0 * safe), np.nan)


def local_step(maps: MatchMaps, volume, plans, cfg: Optional[RefineConfig] = None) -> MatchMaps:
    """One residual update of disparity, occlusion and confidence.

    ``volume[i, j, w]`` is the correlation of left column ``j`` with right
    column ``w``, so disparity ``d`` reads ``volume[i, j, j - d]``.
    """
    cfg = cfg or RefineConfig()
    vol = np.asarray(volume, dtype=np.float64)
    h, n, _ = vol.shape
    d = np.asarray(maps.disparity, dtype=np.float64)
    jj = np.broadcast_to(np.arange(n)[None, :], (h, n))
    ii = np.broadcast_to(np.arange(h)[:, None], (h, n))
    base = np.rint(d).astype(np.int64)
    cols = jj[..., None] - (base[..., None] + np.array([-1, 0, 1]))
    inside = np.all((cols >= 0) & (cols < n), axis=-1)
    cols = np.clip(cols, 0, n - 1)
    vals = vol[ii[..., None], jj[..., None], cols]
    off = parabola_offset(vals[..., 0], vals[..., 1], vals[..., 2])
    ok = inside & np.isfinite(off)
    target = np.where(ok, base + np.where(ok, off, 0.0), d)
    delta = np.clip(cfg.damping * (target - d), -cfg.step_cap, cfg.step_cap)
    new_d = np.clip(d + delta, 0.0, n - 1)

    real = np.asarray(plans, dtype=np.float64)[:, :n, :n]
    center = jj - np.rint(new_d).astype(np.int64)
    visible = center >= 0
    new_g = np.where(visible, window_mass(real, center, cfg.confidence_radius), 0.0)
    new_o = np.where(visible, real.sum(axis=-1), 0.0)
    return MatchMaps(new_d, np.clip(new_o, 0.0, 1.0), np.clip(new_g, 0.0, 1.0))


UpdateRule = Callable[[MatchMaps, np.ndarray, np.ndarray, RefineConfig], MatchMaps]


def run_refinement(maps: MatchMaps, volume, plans, features,
                   cfg: Optional[RefineConfig] = None,
                   update: UpdateRule = local_step) -> MatchMaps:
    """Propagate once, then apply ``update`` ``cfg.iterations`` times."""
    cfg = cfg or RefineConfig()
    out = global_propagate(maps, features, cfg, volume)
    for _ in range(cfg.iterations):
        out = update(out, volume, plans, cfg)
    return out
