# %% [markdown]
# Soft matching of one epipolar row with optimal transport.
#
# Every left pixel sends one unit of mass to right pixels or to a dustbin.
# Mass that lands in the dustbin marks the pixel as occluded.

# %%
import numpy as np

from otstereo.otmatch import (SinkhornConfig, extract_confidence, extract_disparity,
                              extract_occlusion, marginal_residual, sinkhorn_dustbin)

# %% A row of 12 pixels whose right view is shifted by 3; the first 3 left pixels
# have no partner.
n, shift = 12, 3
scores = np.full((n, n), -1.0)
for j in range(shift, n):
    scores[j, j - shift] = 1.0

cfg = SinkhornConfig(temperature=0.05, iterations=100, dustbin_score=0.0)
plan = sinkhorn_dustbin(scores, cfg)
print("row sums     ", np.round(plan.sum(axis=1)[:n], 4))
print("max residual ", float(marginal_residual(plan[None]).max()))

# %% Disparity is the expected shift, occlusion the real mass, confidence the
# mass near the peak.
print("disparity    ", np.round(extract_disparity(plan)[0], 2))
print("visible mass ", np.round(extract_occlusion(plan)[0], 2))
print("confidence   ", np.round(extract_confidence(plan, radius=1)[0], 2))

# %% Lower temperatures make the plan sharper.
for tau in (0.5, 0.1, 0.02):
    p = sinkhorn_dustbin(scores, SinkhornConfig(temperature=tau, iterations=200,
                                                dustbin_score=0.0))
    print(f"tau={tau:<5} peak mass {p[shift:n].max(axis=1).mean():.3f}")
