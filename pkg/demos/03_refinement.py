# %% [markdown]
# Alternating global propagation and local parabola steps on the quarter-res maps.

# %%
import numpy as np

from otstereo.pipeline import PipelineConfig, match_stage
from otstereo.refine import parabola_offset, run_refinement
from otstereo.scenes import SuiteSpec, generate_scene

# %% The sub-pixel step is the vertex of a parabola through three scores.
print("vertex offset of (0.2, 0.5, 0.6):", parabola_offset(0.2, 0.5, 0.6))

# %%
cfg = PipelineConfig()
spec = SuiteSpec(scenes=1, seed=3).build()[0]
pair = generate_scene(spec)
stage = match_stage(pair.left, pair.right, cfg)
gt4 = pair.gt_disparity[::4, ::4] / 4.0
vis = pair.gt_occlusion[::4, ::4] == 1

for it in range(4):
    maps = run_refinement(stage.initial, stage.volume, stage.plans,
                          stage.features_left.level(4), cfg.replace(refine_iterations=it).refine)
    err = np.abs(maps.disparity - gt4)[vis].mean() * 4
    print(f"iterations {it}: EPE {err:.3f} full-res px, mean confidence "
          f"{maps.confidence.mean():.4f}")
