"""
Loss weighting, the lambda ramp and label refinement
====================================================
"""

import numpy as np

from iterseg.distance import distance_to_surface
from iterseg.labeling import refine_labels, regression_to_distribution, sequence_likelihood
from iterseg.loss import LossConfig, lambda_schedule, make_targets, total_loss, weight_map

cfg = LossConfig()

# weight as a function of distance to the target surface
for d in (0, 2, 4, 6, 8, 12):
    print(f"d={d:2d} mm  w={float(weight_map(np.array(float(d)), cfg)):.4f}")

#%% a ball target: weights are highest on its surface
t = np.zeros((24, 24, 24), bool)
zz, yy, xx = np.indices(t.shape) - 12
t[xx ** 2 + yy ** 2 + zz ** 2 <= 36] = True
d = distance_to_surface(t)
print("max interior distance", d[t].max())
targets = make_targets(t, 14, True, cfg=cfg)
print("weights along a line through the centre:")
print(np.round(targets.weights[12, 12, :], 2))

#%% false positives are cheap early in training, full price at the end
ramp = LossConfig(n_max=2000)
print([round(float(lambda_schedule(n, ramp)), 3) for n in range(0, 2001, 250)])

p = np.clip(t + 0.3 * (~t), 0, 1)   # every background voxel at 0.3
for n in (0, 1000, 2000):
    b, _ = total_loss(p, 14.0, 0.9, targets, n, ramp)
    print(n, f"fp={b.fp_soft:.0f} fn={b.fn_soft:.0f} lambda={b.lam:.3f} total={b.total:.0f}")

#%% label values as distributions over neighbouring integers
print(regression_to_distribution(22.8))
print(regression_to_distribution(24.6))

# noisy per-instance values; one outlier does not break a contiguous labelling
values = [8.2, 9.1, 12.6, 10.9, 12.3]
print("rounded", [int(round(v)) for v in values])
best = refine_labels(values)
print("refined", best, "likelihood", round(sequence_likelihood(values, best[0]), 3))
