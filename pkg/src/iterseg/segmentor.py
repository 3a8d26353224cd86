"""
Patch segmentors: given an image patch and the matching memory patch,
segment the first not-yet-segmented instance in the traversal direction and
report its label value and completeness probability.
"""

from __future__ import annotations

from typing import Protocol

import numpy as np

from .network import Prediction, TinyFCN
from .volume import InstanceMask, PatchSpec, extract_array

DIRECTIONS = ("up", "down")
MEMORY_OVERLAP = 0.5


def check_direction(direction: str) -> str:
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be 'up' or 'down', got {direction!r}")
    return direction


class Segmentor(Protocol):
    def predict(self, image_patch: np.ndarray, memory_patch: np.ndarray,
                spec: PatchSpec, direction: str) -> Prediction: ...


def _validate_inputs(image_patch, memory_patch):
    image_patch = np.asarray(image_patch)
    memory_patch = np.asarray(memory_patch)
    if image_patch.shape != memory_patch.shape:
        raise ValueError(f"image patch {image_patch.shape} and memory patch "
                         f"{memory_patch.shape} differ")
    if not np.all((memory_patch == 0) | (memory_patch == 1)):
        raise ValueError("memory patch must be binary")
    return image_patch, memory_patch.astype(bool)


def first_unsegmented(ids_patch: np.ndarray, memory_patch: np.ndarray, direction: str):
    """Id of the first instance in ``ids_patch`` not already in memory, or ``None``.

    An instance counts as in memory when more than half of its in-patch voxels
    are flagged. Up-traversal picks the instance reaching lowest in z,
    down-traversal the one reaching highest; ties go to the smaller id.
    """
    best, best_key = None, None
    for iid in np.unique(ids_patch):
        if iid == 0:
            continue
        vox = ids_patch == iid
        if memory_patch[vox].mean() > MEMORY_OVERLAP:
            continue
        zs = np.nonzero(vox.any(axis=(0, 1)))[0]
        key = (zs[0], iid) if direction == "up" else (-zs[-1], iid)
        if best_key is None or key < best_key:
            best, best_key = int(iid), key
    return best


class OracleSegmentor:
    """Emulates a perfectly trained network using the reference mask."""

    def __init__(self, reference: InstanceMask):
        self.reference = reference

    def predict(self, image_patch, memory_patch, spec: PatchSpec, direction: str) -> Prediction:
        check_direction(direction)
        image_patch, memory_patch = _validate_inputs(image_patch, memory_patch)
        ids = extract_array(self.reference.ids, PatchSpec(spec.center, spec.size, 0))
        target = first_unsegmented(ids, memory_patch, direction)
        if target is None:
            return Prediction(np.zeros(spec.size), 0.0, 0.0)
        rec = self.reference.records[target]
        return Prediction((ids == target).astype(np.float64), float(rec.label),
                          1.0 if rec.complete else 0.0)


class NetworkSegmentor:
    """Adapter exposing a trained :class:`TinyFCN` through the segmentor interface."""

    def __init__(self, net: TinyFCN, direction: str = "up"):
        self.net = net
        self.direction = check_direction(direction)

    def predict(self, image_patch, memory_patch, spec: PatchSpec, direction: str) -> Prediction:
        if direction != self.direction:
            raise ValueError(f"network was trained for direction {self.direction!r}")
        image_patch, memory_patch = _validate_inputs(image_patch, memory_patch)
        return self.net.predict(image_patch, memory_patch.astype(np.float64))
