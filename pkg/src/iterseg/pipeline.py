"""End-to-end segmentation of one scan: resample, traverse, relabel, resample back."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .labeling import N_LABELS, refine_labels
from .traversal import TraversalConfig, TraversalResult, run
from .volume import (InstanceMask, InstanceRecord, VoxelGrid, resample_mask_to_grid,
                     resample_to_isotropic)

log = logging.getLogger(__name__)


@dataclass
class SegmentationOutput:
    mask: InstanceMask            # on the input grid
    result: TraversalResult       # on the working grid
    working_image: VoxelGrid


def apply_label_refinement(result: TraversalResult, direction: str) -> TraversalResult:
    """Assign ``final_label`` to every record and relabel the output masks."""
    records = result.records
    if not records:
        return result
    ordered = records if direction == "up" else records[::-1]
    if len(ordered) > N_LABELS:
        log.warning("%d instances detected; keeping unrefined labels", len(ordered))
        for rec in records:
            rec.final_label = int(np.clip(round(rec.raw_label_value), 1, N_LABELS))
    else:
        for rec, label in zip(ordered, refine_labels([r.raw_label_value for r in ordered])):
            rec.final_label = label
    final = {r.instance_id: r.final_label for r in records}

    def relabel(mask: InstanceMask) -> InstanceMask:
        recs = {i: InstanceRecord(final[i], r.complete) for i, r in mask.records.items()}
        return replace(mask, records=recs)

    return replace(result, mask=relabel(result.mask), detections=relabel(result.detections))


def segment_image(image: VoxelGrid, segmentor_factory, cfg: TraversalConfig,
                  working_spacing: float = 1.0) -> SegmentationOutput:
    """Run the whole pipeline on ``image``.

    ``segmentor_factory`` receives the working-resolution image and returns
    the segmentor, so that an oracle can be aligned with it.
    """
    working = resample_to_isotropic(image, working_spacing, "trilinear")
    segmentor = segmentor_factory(working)
    result = apply_label_refinement(run(working, segmentor, cfg), cfg.direction)
    mask = resample_mask_to_grid(result.mask, image)
    return SegmentationOutput(mask, result, working)
