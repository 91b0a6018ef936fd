"""Training objective: L1 map losses plus probabilistic mode concentration (PMC).

PMC rewards transport-plan mass that falls within ``delta`` bins of any
ground-truth disparity present in a pixel's 4x4 full-resolution block.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from otstereo.otmatch import MatchMaps, candidate_disparities

BLOCK = 4
MAX_CANDIDATES = BLOCK * BLOCK


@dataclass(frozen=True)
class PmcConfig:
    delta: float = 1.0
    margin: float = 0.05
    max_candidates: int = MAX_CANDIDATES

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("delta must be >= 0")
        if not 0 <= self.margin < 0.5:
            raise ValueError("margin must lie in [0, 0.5)")
        if not 1 <= self.max_candidates <= MAX_CANDIDATES:
            raise ValueError(f"max_candidates must lie in [1, {MAX_CANDIDATES}]")


@dataclass(frozen=True)
class LossWeights:
    disparity: float = 1.0
    occlusion: float = 0.3
    confidence: float = 0.3
    pmc: float = 0.5

    def __post_init__(self):
        vals = (self.disparity, self.occlusion, self.confidence, self.pmc)
        if any(v < 0 for v in vals):
            raise ValueError(f"loss weights must be non-negative, got {vals}")
        if not any(v > 0 for v in vals):
            raise ValueError("at least one loss weight must be positive")


@dataclass
class Candidates:
    """Per quarter-res pixel: sorted candidate disparities (NaN padded) and the visible mask."""

    values: np.ndarray
    count: np.ndarray
    omega: np.ndarray


def _blocks(a: np.ndarray, fill) -> np.ndarray:
    """Reshape ``(H, W)`` into ``(ceil(H/4), ceil(W/4), 16)`` blocks."""
    h, w = a.shape
    ph, pw = -h % BLOCK, -w % BLOCK
    a = np.pad(a, ((0, ph), (0, pw)), constant_values=fill)
    qh, qw = a.shape[0] // BLOCK, a.shape[1] // BLOCK
    return a.reshape(qh, BLOCK, qw, BLOCK).transpose(0, 2, 1, 3).reshape(qh, qw, -1)


def candidates_from_gt(gt_disparity, gt_occlusion) -> Candidates:
    """Distinct visible ground-truth disparities of each 4x4 block, in quarter-res units."""
    d = _blocks(np.asarray(gt_disparity, dtype=np.float64), 0.0)
    vis = _blocks(np.asarray(gt_occlusion, dtype=np.float64), 0.0) == 1
    vals = np.where(vis, np.round(d / BLOCK, 3), np.nan)
    vals = np.sort(vals, axis=-1)
    dup = np.zeros(vals.shape, bool)
    dup[..., 1:] = vals[..., 1:] == vals[..., :-1]
    vals = np.sort(np.where(dup, np.nan, vals), axis=-1)
    count = np.sum(np.isfinite(vals), axis=-1)
    return Candidates(values=vals, count=count, omega=count > 0)


def candidate_union(cands: Candidates, width: int, delta: float) -> np.ndarray:
    """Boolean ``(H', W', W')``: bin ``w`` of pixel ``(i, j)`` lies within ``delta`` of a candidate."""
    p = candidate_disparities(width)
    gap = np.abs(p[None, :, None, :] - cands.values[:, :, :, None])
    with np.errstate(invalid="ignore"):
        near = gap <= delta
    return np.any(near, axis=2)


@dataclass
class PmcResult:
    value: float
    grad: np.ndarray
    mass: np.ndarray
    empty_omega: bool = False


def pmc_loss(plans, cands: Candidates, cfg: Optional[PmcConfig] = None) -> PmcResult:
    """Hinge on the plan mass inside the candidate union, averaged over visible pixels.

    ``grad`` has the shape of ``plans`` (dustbins included, always 0) and is
    the subgradient that picks 0 at the hinge point.
    """
    cfg = cfg or PmcConfig()
    plans = np.asarray(plans, dtype=np.float64)
    n = plans.shape[-1] - 1
    if cands.values.shape[:2] != (plans.shape[0], n):
        raise ValueError("candidate grid does not match the plans")
    vals = cands.values[..., : cfg.max_candidates]
    union = candidate_union(Candidates(vals, cands.count, cands.omega), n, cfg.delta)
    real = plans[:, :n, :n]
    mass = np.where(union, real, 0.0).sum(axis=-1)
    grad = np.zeros_like(plans)
    omega = cands.omega
    size = int(omega.sum())
    if size == 0:
        warnings.warn("no visible pixels: PMC loss is 0", RuntimeWarning, stacklevel=2)
        return PmcResult(0.0, grad, mass, empty_omega=True)
    # (1 - eps) - S keeps "zero iff S >= 1 - eps" exact in floating point
    hinge = (1.0 - cfg.margin) - mass
    value = float(np.where(omega, np.maximum(hinge, 0.0), 0.0).sum() / size)
    active = omega & (hinge > 0)
    grad[:, :n, :n] = np.where(active[..., None] & union, -1.0 / size, 0.0)
    return PmcResult(value, grad, mass)


def downsample_gt(gt_disparity, gt_occlusion):
    """Quarter-res targets: mean visible disparity / 4, visible fraction, and the visible mask."""
    d = _blocks(np.asarray(gt_disparity, dtype=np.float64), 0.0)
    vis = _blocks(np.asarray(gt_occlusion, dtype=np.float64), 0.0) == 1
    cnt = vis.sum(axis=-1)
    h, w = np.asarray(gt_disparity).shape
    total = _blocks(np.ones((h, w)), 0.0).sum(axis=-1)
    disp = np.where(cnt > 0, np.where(vis, d, 0.0).sum(axis=-1) / np.maximum(cnt, 1), 0.0)
    return disp / BLOCK, cnt / total, cnt > 0


def l1_losses(pred: MatchMaps, gt_disparity, gt_occlusion, omega):
    """``(L_D, L_O, L_C)`` at the resolution of ``pred``.

    The confidence target is 1 where the predicted disparity is within one
    pixel of the ground truth, else 0.
    """
    if gt_disparity is None or gt_occlusion is None or omega is None:
        raise ValueError("L1 losses need ground-truth disparity, occlusion and mask")
    omega = np.asarray(omega, bool)
    if not omega.any():
        raise ValueError("empty visible region")
    err = np.abs(np.asarray(pred.disparity, np.float64) - gt_disparity)
    conf_gt = (err <= 1.0).astype(np.float64)
    l_d = float(err[omega].mean())
    l_o = float(np.abs(np.asarray(pred.occlusion, np.float64) - gt_occlusion).mean())
    l_c = float(np.abs(np.asarray(pred.confidence, np.float64) - conf_gt)[omega].mean())
    return l_d, l_o, l_c


@dataclass
class LossReport:
    l_d: float
    l_o: float
    l_c: float
    l_pmc: float
    total: float
    weights: LossWeights = field(default_factory=LossWeights)
    mass: Optional[np.ndarray] = None
    grad: Optional[np.ndarray] = None

    def to_record(self) -> dict:
        rec = {
            "L_D": self.l_d,
            "L_O": self.l_o,
            "L_C": self.l_c,
            "L_PMC": self.l_pmc,
            "total": self.total,
            "lambda_D": self.weights.disparity,
            "lambda_O": self.weights.occlusion,
            "lambda_C": self.weights.confidence,
            "lambda_PMC": self.weights.pmc,
        }
        if self.mass is not None:
            rec["mean_S"] = float(np.mean(self.mass))
        return rec

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True)


def total_loss(l_d: float, l_o: float, l_c: float, l_pmc: float,
               weights: Optional[LossWeights] = None, **extra) -> LossReport:
    weights = weights or LossWeights()
    parts = (l_d, l_o, l_c, l_pmc)
    if not all(np.isfinite(parts)):
        raise ValueError(f"loss parts must be finite, got {parts}")
    total = (weights.disparity * l_d + weights.occlusion * l_o
             + weights.confidence * l_c + weights.pmc * l_pmc)
    return LossReport(l_d, l_o, l_c, l_pmc, total, weights, **extra)
