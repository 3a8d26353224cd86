"""
Synthetic chains and the oracle traversal
=========================================

Build a phantom, walk it with the ground-truth segmentor and look at the
trace, the records and the evaluation report.
"""

import numpy as np

from iterseg.benchmark import oracle_phantom_config
from iterseg.metrics import evaluate_scan
from iterseg.phantom import generate
from iterseg.pipeline import apply_label_refinement
from iterseg.segmentor import OracleSegmentor
from iterseg.traversal import TraversalConfig, run

# six ellipsoids stacked along z, the top one cut by the volume border
cfg = oracle_phantom_config(6, "crop_last", seed=7, label_start=15)
image, reference = generate(cfg)
print("dims", image.dims, "instances", reference.instance_ids())
for iid, rec in reference.records.items():
    print(f"  id {iid}: label {rec.label:2d} complete={rec.complete} voxels={(reference.ids == iid).sum()}")

# a z profile of the mask shows the gaps between instances
occupied = (reference.ids > 0).any(axis=(0, 1))
print("".join("#" if o else "." for o in occupied))

#%% bottom-up traversal
tcfg = TraversalConfig(patch_size=(32, 32, 32), v_min=20, direction="up")
result = apply_label_refinement(run(image, OracleSegmentor(reference), tcfg), "up")
print("iterations", result.iterations)
for entry in result.trace[:12]:
    print(entry)

for r in result.records:
    print(r.instance_id, r.final_label, r.complete, r.converged_center, r.n_iterations)

# the clipped top instance went into memory but not into the output
print("output ids", result.mask.instance_ids(), "detected", result.detections.instance_ids())

#%% evaluation
report = evaluate_scan(reference, result.mask, result.records, result.detections)
for k, v in report.aggregates.items():
    print(f"{k:32s} {v}")

#%% top-down gives the same partition
down = apply_label_refinement(
    run(image, OracleSegmentor(reference), TraversalConfig(patch_size=(32, 32, 32), v_min=20,
                                                          direction="down")), "down")
print([r.final_label for r in down.records])
print("same voxels:", np.array_equal(down.detections.ids > 0, result.detections.ids > 0))
