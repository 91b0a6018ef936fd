"""Disparity error metrics and average precision."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional

import numpy as np

BAD_THRESHOLDS = (0.5, 1.0, 2.0, 4.0)
REGIONS = ("non_occluded", "all")


@dataclass
class MetricReport:
    """EPE/RMS in pixels, Bad-p in percent (strict ``|err| > p``), AP in [0, 1]."""

    epe: float
    rms: float
    bad: Dict[float, float]
    region: str = "non_occluded"
    occ_ap: Optional[float] = None
    conf_ap: Optional[float] = None
    scene: Optional[str] = None
    extra: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        rec = asdict(self)
        rec["bad"] = {f"{p:g}": v for p, v in self.bad.items()}
        extra = rec.pop("extra")
        rec.update(extra)
        return rec

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True)


def region_mask(gt_occlusion, region: str, shape) -> np.ndarray:
    if region not in REGIONS:
        raise ValueError(f"region must be one of {REGIONS}, got {region!r}")
    if region == "all" or gt_occlusion is None:
        if region == "non_occluded" and gt_occlusion is None:
            raise ValueError("non_occluded region needs a ground-truth occlusion map")
        return np.ones(shape, bool)
    return np.asarray(gt_occlusion) == 1


def disparity_metrics(pred, gt, gt_occlusion=None, region: str = "non_occluded",
                      thresholds=BAD_THRESHOLDS) -> MetricReport:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    mask = region_mask(gt_occlusion, region, gt.shape)
    if not mask.any():
        raise ValueError(f"region {region!r} is empty")
    err = np.abs(pred - gt)[mask]
    bad = {float(p): float(100.0 * np.mean(err > p)) for p in thresholds}
    return MetricReport(
        epe=float(err.mean()),
        rms=float(np.sqrt(np.mean(err ** 2))),
        bad=bad,
        region=region,
    )


def average_precision(scores, labels) -> float:
    """Area under the precision-recall curve, rank-then-accumulate.

    Equal scores form one block: the block's positives all enter at the
    precision measured after the whole block is included.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in size")
    npos = int(y.sum())
    if npos == 0 or npos == y.size:
        raise ValueError("average precision needs both positive and negative labels")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last = np.r_[s[1:] != s[:-1], True]
    tp = np.cumsum(y)[last]
    seen = np.flatnonzero(last) + 1
    new_tp = np.diff(np.r_[0, tp])
    return float(np.sum(new_tp * (tp / seen)) / npos)
