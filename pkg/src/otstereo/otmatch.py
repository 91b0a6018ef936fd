"""Global matching: epipolar correlation volume, Sinkhorn with dustbins, map extraction.

For quarter-resolution row ``i`` the plan ``T[i]`` has shape ``(W'+1, W'+1)``:
entry ``[j, w]`` is the mass matching left column ``j`` to right column
``w``; the last row and column are dustbins. The candidate disparity of
``[j, w]`` is ``j - w``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from otstereo.errors import ValidationError
from otstereo.pyramid import FeaturePyramid


@dataclass(frozen=True)
class SinkhornConfig:
    """Entropic OT knobs.

    ``anderson`` > 0 extrapolates the column potential from the last
    ``anderson`` Sinkhorn sweeps (Anderson mixing); 0 gives plain
    alternating updates. Each iteration is one full row + column sweep
    either way.
    """

    temperature: float = 0.1
    iterations: int = 20
    dustbin_score: float = -1.0
    tol: float = 1e-4
    anderson: int = 5

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.anderson < 0:
            raise ValueError("anderson memory must be >= 0")


@dataclass
class MatchMaps:
    """Disparity (quarter- or full-res pixels), matched-probability and confidence maps."""

    disparity: np.ndarray
    occlusion: np.ndarray
    confidence: np.ndarray

    def copy(self) -> "MatchMaps":
        return MatchMaps(self.disparity.copy(), self.occlusion.copy(), self.confidence.copy())


def correlation_volume(f_left, f_right) -> np.ndarray:
    """All-pairs row correlation ``C[i, j, w] = <f_left[i, j], f_right[i, w]>``."""
    fl = np.asarray(f_left, dtype=np.float64)
    fr = np.asarray(f_right, dtype=np.float64)
    if fl.shape != fr.shape or fl.ndim != 3:
        raise ValueError(f"feature maps differ in shape: {fl.shape} vs {fr.shape}")
    return np.matmul(fl, fr.transpose(0, 2, 1))


def _logsumexp(x: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def _augment(costs: np.ndarray, cfg: SinkhornConfig) -> np.ndarray:
    b, n, _ = costs.shape
    z = np.full((b, n + 1, n + 1), cfg.dustbin_score, dtype=np.float64)
    z[:, :n, :n] = costs
    return z / cfg.temperature


def _log_marginals(n: int) -> np.ndarray:
    out = np.zeros(n + 1)
    out[n] = np.log(n)
    return out


def marginal_residual(plans: np.ndarray) -> np.ndarray:
    """Per-plan worst deviation of the real-bin row/column sums from 1."""
    n = plans.shape[-1] - 1
    rows = plans[..., :n, :].sum(axis=-1)
    cols = plans[..., :, :n].sum(axis=-2)
    return np.maximum(np.abs(rows - 1.0).max(axis=-1), np.abs(cols - 1.0).max(axis=-1))


def _sweep(z, v, log_mu):
    u = log_mu - _logsumexp(z + v[:, None, :], axis=2)
    return u, log_mu - _logsumexp(z + u[:, :, None], axis=1)


def _anderson_step(xs, fs):
    """Extrapolate from fixed-point iterates ``xs`` with residuals ``fs``.

    Reductions are written out elementwise so each row's result is
    independent of the batch it is computed in.
    """
    x = np.stack(xs, axis=2)
    f = np.stack(fs, axis=2)
    dx = np.diff(x, axis=2)
    df = np.diff(f, axis=2)
    gram = (df[:, :, :, None] * df[:, :, None, :]).sum(axis=1)
    k = gram.shape[-1]
    scale = np.trace(gram, axis1=1, axis2=2)[:, None, None] / k
    gram = gram + (1e-10 * scale + 1e-300) * np.eye(k)
    rhs = (df * f[:, :, -1:]).sum(axis=1)
    gamma = np.linalg.solve(gram, rhs[..., None])[..., 0]
    return x[:, :, -1] - (dx * gamma[:, None, :]).sum(axis=2)


def _sinkhorn_batch(costs: np.ndarray, cfg: SinkhornConfig):
    z = _augment(costs, cfg)
    b, m, _ = z.shape
    n = m - 1
    log_mu = _log_marginals(n)
    u = np.zeros((b, m))
    v = np.zeros((b, m))
    resid = np.full(b, np.inf)
    active = np.arange(b)
    # per-row histories for Anderson mixing: sweep outputs and their residuals
    hist_x, hist_f = [], []
    v_in = v.copy()
    for _ in range(cfg.iterations):
        za = z[active]
        ua, va = _sweep(za, v_in[active], log_mu)
        u[active], v[active] = ua, va
        # columns are exact after the v-update; the row sums carry the residual
        rows = np.exp(_logsumexp(za + ua[:, :, None] + va[:, None, :], axis=2))
        err = np.abs(rows[:, :n] - 1.0).max(axis=1)
        resid[active] = err
        if cfg.anderson:
            hist_x.append(va)
            hist_f.append(va - v_in[active])
            hist_x, hist_f = hist_x[-cfg.anderson:], hist_f[-cfg.anderson:]
        keep = err >= cfg.tol
        active = active[keep]
        if active.size == 0:
            break
        hist_x = [h[keep] for h in hist_x]
        hist_f = [h[keep] for h in hist_f]
        nxt = v[active]
        if len(hist_x) > 1:
            cand = _anderson_step(hist_x, hist_f)
            good = np.all(np.isfinite(cand), axis=1)
            nxt = np.where(good[:, None], cand, nxt)
        v_in[active] = nxt
    plans = np.exp(z + u[:, :, None] + v[:, None, :])
    return plans, resid


def sinkhorn_rows(costs, cfg: Optional[SinkhornConfig] = None, threads: int = 1,
                  return_residual: bool = False):
    """Log-domain Sinkhorn with dustbins for a stack of ``(W', W')`` cost rows.

    Every real bin carries mass 1 and each dustbin mass ``W'``. Rows stop
    iterating individually once their marginal residual drops below
    ``cfg.tol``, so the result for a row never depends on how rows are split
    across ``threads``.
    """
    cfg = cfg or SinkhornConfig()
    costs = np.asarray(costs, dtype=np.float64)
    if costs.ndim != 3 or costs.shape[1] != costs.shape[2]:
        raise ValueError(f"cost rows must have shape (H, W, W), got {costs.shape}")
    if not np.all(np.isfinite(costs)):
        raise ValidationError("cost volume contains non-finite values")
    b = costs.shape[0]
    threads = max(1, min(int(threads), b))
    if threads == 1:
        plans, resid = _sinkhorn_batch(costs, cfg)
    else:
        chunks = np.array_split(np.arange(b), threads)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda idx: _sinkhorn_batch(costs[idx], cfg), chunks))
        plans = np.concatenate([p for p, _ in parts])
        resid = np.concatenate([r for _, r in parts])
    return (plans, resid) if return_residual else plans


def sinkhorn_dustbin(row_costs, cfg: Optional[SinkhornConfig] = None) -> np.ndarray:
    """Transport plan with dustbins for a single ``(W', W')`` cost matrix."""
    row_costs = np.asarray(row_costs, dtype=np.float64)
    if row_costs.ndim != 2 or row_costs.shape[0] != row_costs.shape[1]:
        raise ValueError(f"expected a square cost matrix, got {row_costs.shape}")
    return sinkhorn_rows(row_costs[None], cfg)[0]


def _real(plans: np.ndarray) -> np.ndarray:
    plans = np.asarray(plans, dtype=np.float64)
    if plans.ndim == 2:
        plans = plans[None]
    n = plans.shape[-1] - 1
    return plans[:, :n, :n]


def candidate_disparities(n: int) -> np.ndarray:
    """``p[j, w] = j - w`` for left column ``j`` and right column ``w``."""
    idx = np.arange(n, dtype=np.float64)
    return idx[:, None] - idx[None, :]


def extract_disparity(plans, clamp_negative: bool = True, min_mass: float = 1e-8) -> np.ndarray:
    real = _real(plans)
    mass = real.sum(axis=-1)
    num = (real * candidate_disparities(real.shape[-1])).sum(axis=-1)
    ok = mass >= min_mass
    disp = np.where(ok, num / np.where(ok, mass, 1.0), 0.0)
    if clamp_negative:
        disp = np.maximum(disp, 0.0)
    return disp


def extract_occlusion(plans) -> np.ndarray:
    """Probability that each left pixel is matched (1 = visible in both views)."""
    mass = _real(plans).sum(axis=-1)
    return np.where(mass < 1e-8, 0.0, np.clip(mass, 0.0, 1.0))


def window_mass(real: np.ndarray, center: np.ndarray, radius: int) -> np.ndarray:
    """Sum of ``real[i, j, w]`` over ``|w - center[i, j]| <= radius`` (real bins only)."""
    w = np.arange(real.shape[-1])
    mask = np.abs(w[None, None, :] - center[..., None]) <= radius
    return np.where(mask, real, 0.0).sum(axis=-1)


def extract_confidence(plans, radius: int = 2) -> np.ndarray:
    """Mass within ``radius`` bins of each pixel's peak; ties go to the smaller bin."""
    if radius < 0:
        raise ValueError("confidence radius must be >= 0")
    real = _real(plans)
    peak = np.argmax(real, axis=-1)
    conf = window_mass(real, peak, radius)
    return np.where(real.sum(axis=-1) < 1e-8, 0.0, np.clip(conf, 0.0, 1.0))


@dataclass(frozen=True)
class MatchConfig:
    sinkhorn: SinkhornConfig = SinkhornConfig()
    confidence_radius: int = 2
    threads: int = 1


def global_match(left: FeaturePyramid, right: FeaturePyramid,
                 cfg: Optional[MatchConfig] = None) -> Tuple[MatchMaps, np.ndarray, np.ndarray]:
    """Match stride-4 features row by row; returns maps, cost volume and plans."""
    cfg = cfg or MatchConfig()
    volume = correlation_volume(left.level(4), right.level(4))
    plans = sinkhorn_rows(volume, cfg.sinkhorn, threads=cfg.threads)
    maps = MatchMaps(
        disparity=extract_disparity(plans),
        occlusion=extract_occlusion(plans),
        confidence=extract_confidence(plans, cfg.confidence_radius),
    )
    return maps, volume, plans


def sinkhorn_unrolled(costs, cfg: Optional[SinkhornConfig] = None):
    """Plain alternating Sinkhorn for exactly ``cfg.iterations`` sweeps, keeping a tape.

    Meant for differentiating small rows with :func:`sinkhorn_backward`;
    ignores ``tol`` and ``anderson``.
    """
    cfg = cfg or SinkhornConfig()
    costs = np.asarray(costs, dtype=np.float64)
    z = _augment(costs, cfg)
    b, m, _ = z.shape
    log_mu = _log_marginals(m - 1)
    v = np.zeros((b, m))
    tape = []
    for _ in range(cfg.iterations):
        v_prev = v
        u, v = _sweep(z, v_prev, log_mu)
        tape.append((u, v_prev, v))
    plans = np.exp(z + u[:, :, None] + v[:, None, :])
    return plans, (z, tape, plans, cfg)


def sinkhorn_backward(tape, grad_plans) -> np.ndarray:
    """Gradient of a scalar loss w.r.t. the real-bin costs, given ``dL/dT``."""
    z, steps, plans, cfg = tape
    n = z.shape[-1] - 1
    log_mu = _log_marginals(n)
    g_log = np.asarray(grad_plans, dtype=np.float64) * plans
    gz = g_log.copy()
    gu = g_log.sum(axis=2)
    gv = g_log.sum(axis=1)
    for u, v_prev, v in reversed(steps):
        # v = log_mu - LSE over rows of (z + u): column-wise softmax
        pc = np.exp(z + u[:, :, None] + (v - log_mu)[:, None, :])
        t = pc * gv[:, None, :]
        gz -= t
        gu = gu - t.sum(axis=2)
        # u = log_mu - LSE over columns of (z + v_prev): row-wise softmax
        pr = np.exp(z + (u - log_mu)[:, :, None] + v_prev[:, None, :])
        t = pr * gu[:, :, None]
        gz -= t
        gv = -t.sum(axis=1)
        gu = np.zeros_like(gu)
    return gz[:, :n, :n] / cfg.temperature
