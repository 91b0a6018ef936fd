# %% [markdown]
# Bringing quarter-res disparity to full resolution with an image-guided kernel,
# then cleaning edges with a photometric joint bilateral filter.

# %%
import numpy as np

from otstereo.pipeline import run_pipeline
from otstereo.scenes import SceneSpec, generate_scene
from otstereo.upsample import edge_guided_filter, warp_right, weighted_upsample

pair = generate_scene(SceneSpec(width=128, height=96, seed=2, background=2, noise=0.01,
                                layers=[(40, 20, 90, 70, 12)]))
coarse = run_pipeline(pair.left, pair.right).refined.disparity

# %% Nearest-neighbour replication versus the guided kernel and the final filter.
nearest = 4.0 * np.repeat(np.repeat(coarse, 4, 0), 4, 1)
guided = weighted_upsample(coarse, pair.left)
warped, valid = warp_right(pair.right, guided)
filtered = edge_guided_filter(guided, pair.left, warped, valid)

vis = pair.gt_occlusion == 1
for name, d in (("nearest", nearest), ("guided", guided), ("filtered", filtered)):
    print(f"{name:<9} EPE {np.abs(d - pair.gt_disparity)[vis].mean():.3f}")
