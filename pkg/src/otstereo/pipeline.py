"""End-to-end matching: pyramid, MRT, optimal-transport matching, refinement, upsampling."""

from __future__ import annotations

import dataclasses
import os
import time
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from otstereo.config import dump_dataclass, parse_key_values, update_dataclass
from otstereo.errors import ConvergenceError
from otstereo.imageio import as_plane
from otstereo.loss import (LossReport, LossWeights, PmcConfig, candidates_from_gt,
                           downsample_gt, l1_losses, pmc_loss, total_loss)
from otstereo.metrics import REGIONS, average_precision, disparity_metrics, region_mask
from otstereo.mrt import MrtWeights, generate_weights, load_weights, mrt_forward
from otstereo.otmatch import (MatchMaps, SinkhornConfig, correlation_volume,
                              extract_confidence, extract_disparity, extract_occlusion,
                              marginal_residual, sinkhorn_rows)
from otstereo.pyramid import DescriptorConfig, FeaturePyramid, build_pyramid
from otstereo.refine import RefineConfig, run_refinement
from otstereo.upsample import apply_upsample, edge_guided_filter, upsample_weights, warp_right

THREADS_ENV = "OTSTEREO_THREADS"


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class PipelineConfig:
    # descriptors
    census_window: int = 5
    census_weight: float = 0.05
    patch_window: int = 7
    patch_dilation: int = 3
    gradients: bool = True
    gradient_scale: float = 4.0
    descriptor_bias: float = 0.05
    prefilter_sigma: float = 2.0
    feature_dim: int = 80
    # transformer; an empty weights path means seeded random weights
    weights: str = ""
    mrt_blocks: int = 1
    mrt_seed: int = 0
    mrt_scale: float = 0.01
    mrt_gate_bias: float = 4.0
    # optimal transport
    temperature: float = 0.02
    sinkhorn_iterations: int = 50
    dustbin_score: float = 0.7
    sinkhorn_tol: float = 1e-4
    anderson: int = 5
    fail_residual: float = 0.05
    confidence_radius: int = 2
    # refinement
    refine_iterations: int = 3
    propagate_radius: int = 4
    confidence_floor: float = 0.8
    step_cap: float = 0.5
    damping: float = 0.7
    propagate_spatial_sigma: float = 3.5
    propagate_feature_sigma: float = 0.5
    propagate_fit_sigma: float = 0.1
    # upsampling and final filter
    upsample_sigma_space: float = 0.5
    upsample_sigma_guide: float = 0.05
    filter_radius: int = 4
    filter_sigma_color: float = 0.1
    filter_sigma_space: float = 2.0
    # loss
    pmc_delta: float = 1.0
    pmc_margin: float = 0.05
    lambda_d: float = 1.0
    lambda_o: float = 0.3
    lambda_c: float = 0.3
    lambda_pmc: float = 0.5
    threads: int = 1

    @classmethod
    def from_text(cls, text: str, base: Optional["PipelineConfig"] = None) -> "PipelineConfig":
        return update_dataclass(base or cls(), parse_key_values(text))

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        with open(path) as f:
            return cls.from_text(f.read())

    def to_text(self) -> str:
        return dump_dataclass(self)

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    @property
    def descriptor(self) -> DescriptorConfig:
        return DescriptorConfig(window=self.census_window,
                                census_weight=self.census_weight,
                                patch_window=self.patch_window,
                                patch_dilation=self.patch_dilation, gradients=self.gradients,
                                gradient_scale=self.gradient_scale,
                                bias=self.descriptor_bias,
                                prefilter_sigma=self.prefilter_sigma, dim=self.feature_dim)

    @property
    def sinkhorn(self) -> SinkhornConfig:
        return SinkhornConfig(temperature=self.temperature,
                              iterations=self.sinkhorn_iterations,
                              dustbin_score=self.dustbin_score, tol=self.sinkhorn_tol,
                              anderson=self.anderson)

    @property
    def refine(self) -> RefineConfig:
        return RefineConfig(iterations=self.refine_iterations, radius=self.propagate_radius,
                            confidence_floor=self.confidence_floor, step_cap=self.step_cap,
                            damping=self.damping,
                            spatial_sigma=self.propagate_spatial_sigma,
                            feature_sigma=self.propagate_feature_sigma,
                            fit_sigma=self.propagate_fit_sigma,
                            confidence_radius=self.confidence_radius)

    def mrt_weights(self) -> MrtWeights:
        if self.weights:
            return load_weights(self.weights)
        return generate_weights(dim=self.feature_dim, blocks=self.mrt_blocks,
                                seed=self.mrt_seed, scale=self.mrt_scale,
                                gate_bias=self.mrt_gate_bias)


@dataclass
class MatchStage:
    """Quarter-resolution outputs of global matching, reused by refinement sweeps."""

    left: np.ndarray
    right: np.ndarray
    features_left: FeaturePyramid
    features_right: FeaturePyramid
    volume: np.ndarray
    plans: np.ndarray
    initial: MatchMaps
    residual: float


@dataclass
class PipelineResult:
    match: MatchStage
    refined: MatchMaps
    full: MatchMaps
    timings: Dict[str, float] = field(default_factory=dict)

    @property
    def disparity(self) -> np.ndarray:
        return self.full.disparity


def match_stage(left, right, cfg: PipelineConfig, weights: Optional[MrtWeights] = None,
                timings: Optional[dict] = None) -> MatchStage:
    timings = {} if timings is None else timings
    left = as_plane(left, channels=1)
    right = as_plane(right, channels=1)
    if left.shape != right.shape:
        raise ValueError(f"left {left.shape} and right {right.shape} differ in size")

    t = time.perf_counter()
    weights = cfg.mrt_weights() if weights is None else weights
    desc = cfg.descriptor
    if weights.projection is not None:
        desc = dataclasses.replace(desc, projection=weights.projection)
    pyr_l, pyr_r = build_pyramid(left, desc), build_pyramid(right, desc)
    timings["pyramid"] = time.perf_counter() - t

    t = time.perf_counter()
    pyr_l, pyr_r = mrt_forward(pyr_l, pyr_r, weights)
    timings["mrt"] = time.perf_counter() - t

    t = time.perf_counter()
    volume = correlation_volume(pyr_l.level(4), pyr_r.level(4))
    plans = sinkhorn_rows(volume, cfg.sinkhorn, threads=cfg.threads)
    residual = float(marginal_residual(plans).max())
    if residual > cfg.fail_residual:
        raise ConvergenceError(
            f"Sinkhorn marginal residual {residual:.3g} exceeds {cfg.fail_residual:g}"
        )
    initial = MatchMaps(extract_disparity(plans), extract_occlusion(plans),
                        extract_confidence(plans, cfg.confidence_radius))
    timings["matching"] = time.perf_counter() - t
    return MatchStage(left, right, pyr_l, pyr_r, volume, plans, initial, residual)


def finish(stage: MatchStage, cfg: PipelineConfig,
           timings: Optional[dict] = None) -> PipelineResult:
    """Refine the quarter-res maps and bring them to full resolution."""
    timings = {} if timings is None else timings
    t = time.perf_counter()
    refined = run_refinement(stage.initial, stage.volume, stage.plans,
                             stage.features_left.level(4), cfg.refine)
    timings["refinement"] = time.perf_counter() - t

    t = time.perf_counter()
    weights = upsample_weights(stage.left, refined.disparity.shape,
                               cfg.upsample_sigma_space, cfg.upsample_sigma_guide)
    disp = apply_upsample(refined.disparity, weights, scale=4.0)
    occ = apply_upsample(refined.occlusion, weights)
    conf = apply_upsample(refined.confidence, weights)
    warped, valid = warp_right(stage.right, disp)
    disp = edge_guided_filter(disp, stage.left, warped, valid, cfg.filter_radius,
                              cfg.filter_sigma_color, cfg.filter_sigma_space)
    timings["upsampling"] = time.perf_counter() - t
    full = MatchMaps(disp.astype(np.float32), occ.astype(np.float32), conf.astype(np.float32))
    return PipelineResult(stage, refined, full, timings)


def run_pipeline(left, right, cfg: Optional[PipelineConfig] = None,
                 weights: Optional[MrtWeights] = None) -> PipelineResult:
    cfg = cfg or PipelineConfig()
    timings: Dict[str, float] = {}
    stage = match_stage(left, right, cfg, weights, timings)
    return finish(stage, cfg, timings)


def wta_parabola_baseline(left, right, cfg: Optional[PipelineConfig] = None) -> np.ndarray:
    """Winner-take-all over non-negative disparities of the raw descriptor
    correlation, parabola sub-pixel fit, nearest 4x upsampling."""
    cfg = cfg or PipelineConfig()
    left = as_plane(left, channels=1)
    fl = build_pyramid(left, cfg.descriptor).level(4)
    fr = build_pyramid(as_plane(right, channels=1), cfg.descriptor).level(4)
    vol = correlation_volume(fl, fr)
    h, n, _ = vol.shape
    j = np.arange(n)
    d = j[:, None] - j[None, :]
    masked = np.where(d[None] >= 0, vol, -np.inf)
    w_best = np.argmax(masked, axis=-1)
    ii, jj = np.mgrid[0:h, 0:n]
    best = vol[ii, jj, w_best]
    lo = vol[ii, jj, np.clip(w_best + 1, 0, n - 1)]   # disparity - 1
    hi = vol[ii, jj, np.clip(w_best - 1, 0, n - 1)]   # disparity + 1
    curv = lo - 2 * best + hi
    ok = (w_best + 1 < n) & (w_best - 1 >= 0) & (curv < 0)
    off = np.where(ok, (lo - hi) / (2 * np.where(ok, curv, -1.0)), 0.0)
    dq = jj - w_best + np.clip(off, -0.5, 0.5)
    full = np.repeat(np.repeat(dq, 4, axis=0), 4, axis=1)[: left.shape[0], : left.shape[1]]
    return 4.0 * full


def _ap_or_none(scores, labels) -> Optional[float]:
    labels = np.asarray(labels, bool)
    if labels.all() or not labels.any():
        return None
    return average_precision(scores, labels)


def scene_reports(result: PipelineResult, gt_disparity, gt_occlusion,
                  scene: Optional[str] = None, **extra) -> list:
    """Non-occluded and all-pixel MetricReports with occlusion and confidence AP.

    AP is ``None`` when its labels are all positive or all negative.
    """
    gt = np.asarray(gt_disparity, dtype=np.float64)
    occ = np.asarray(gt_occlusion, dtype=np.float64)
    correct = np.abs(result.disparity - gt) <= 1.0
    occ_ap = _ap_or_none(result.full.occlusion, occ == 1)
    reports = []
    for region in REGIONS:
        rep = disparity_metrics(result.disparity, gt, occ, region)
        mask = region_mask(occ, region, gt.shape)
        rep.occ_ap = occ_ap
        rep.conf_ap = _ap_or_none(result.full.confidence[mask], correct[mask])
        rep.scene = scene
        rep.extra.update(extra)
        reports.append(rep)
    return reports


def loss_report(result: PipelineResult, gt_disparity, gt_occlusion,
                cfg: Optional[PipelineConfig] = None) -> LossReport:
    """Training objective of the quarter-resolution refined maps against ground truth."""
    cfg = cfg or PipelineConfig()
    gd, go, omega = downsample_gt(gt_disparity, gt_occlusion)
    l_d, l_o, l_c = l1_losses(result.refined, gd, go, omega)
    pmc = pmc_loss(result.match.plans, candidates_from_gt(gt_disparity, gt_occlusion),
                   PmcConfig(delta=cfg.pmc_delta, margin=cfg.pmc_margin))
    weights = LossWeights(cfg.lambda_d, cfg.lambda_o, cfg.lambda_c, cfg.lambda_pmc)
    return total_loss(l_d, l_o, l_c, pmc.value, weights, mass=pmc.mass)
