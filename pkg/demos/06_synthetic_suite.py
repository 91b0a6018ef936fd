# %% [markdown]
# End-to-end run on a generated suite with metrics and a figure.

# %%
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from otstereo.metrics import disparity_metrics
from otstereo.pipeline import PipelineConfig, run_pipeline, scene_reports, wta_parabola_baseline
from otstereo.scenes import SuiteSpec, generate_scene

cfg = PipelineConfig()
rows = []
for spec in SuiteSpec(scenes=3).build():
    pair = generate_scene(spec)
    res = run_pipeline(pair.left, pair.right, cfg)
    noc, _ = scene_reports(res, pair.gt_disparity, pair.gt_occlusion, spec.name)
    base = disparity_metrics(wta_parabola_baseline(pair.left, pair.right, cfg),
                             pair.gt_disparity, pair.gt_occlusion)
    rows.append((spec.name, noc.epe, noc.bad[2.0], noc.conf_ap, base.epe))
    print(f"{spec.name}: EPE {noc.epe:.3f}  Bad-2 {noc.bad[2.0]:.2f}%  "
          f"conf AP {noc.conf_ap:.3f}  baseline EPE {base.epe:.3f}")

# %%
fig, ax = plt.subplots(1, 4, figsize=(14, 3.5))
for a, img, title in zip(ax, (pair.left, pair.gt_disparity, res.disparity, res.full.confidence),
                         ("left", "ground truth", "prediction", "confidence")):
    a.imshow(img, cmap="gray" if title in ("left", "confidence") else "turbo")
    a.set_title(title)
    a.axis("off")
out = Path(__file__).with_name("suite_last_scene.png")
fig.savefig(out, dpi=80, bbox_inches="tight")
print("figure written to", out)
