"""
Instance-by-instance traversal.

A patch slides over the volume until the segmentor reports a large enough
fragment; the patch is then re-centred on the fragment's bounding box until
its position stops changing. The converged instance is written into the
memory (and, if classified complete, into the output mask) and the same
patch is analysed again to pick up the next instance in the chain. When no
fragment is found there, sliding resumes where it left off.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .distance import surface
from .segmentor import Segmentor, check_direction
from .volume import (InstanceMask, InstanceRecord, PatchSpec, VoxelGrid, extract_array,
                     patch_to_volume)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TraversalConfig:
    patch_size: tuple[int, int, int] = (32, 32, 32)
    v_min: int = 1000
    delta_max: int = 2
    max_iter_per_vertebra: int = 10
    step: tuple[int, int, int] | None = None
    direction: str = "up"
    binarize_threshold: float = 0.5
    hu_surface_threshold: float | None = None
    keep_incomplete_in_output: bool = False
    pad_value: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "patch_size", tuple(int(s) for s in self.patch_size))
        if self.step is None:
            object.__setattr__(self, "step", tuple(max(1, s // 2) for s in self.patch_size))
        else:
            object.__setattr__(self, "step", tuple(int(s) for s in self.step))
        check_direction(self.direction)
        if self.v_min < 1:
            raise ValueError("v_min must be >= 1")
        if self.delta_max < 0:
            raise ValueError("delta_max must be >= 0")
        if self.max_iter_per_vertebra < 2:
            raise ValueError("max_iter_per_vertebra must be >= 2")
        if min(self.step) < 1 or min(self.patch_size) < 1:
            raise ValueError("step and patch size components must be >= 1")


def scaled_v_min(v_min_at_1mm: int, working_spacing: float) -> int:
    """Keep the physical fragment volume fixed when working at another resolution."""
    return max(1, int(round(v_min_at_1mm * (1.0 / working_spacing) ** 3)))


@dataclass
class VertebraRecord:
    instance_id: int
    raw_label_value: float
    completeness_prob: float
    complete: bool
    converged_center: tuple[int, int, int]
    n_iterations: int
    forced_midpoint: bool
    in_output: bool
    final_label: int | None = None


@dataclass
class TraversalResult:
    mask: InstanceMask
    records: list[VertebraRecord]
    trace: list[dict]
    # every accepted instance, including those gated out of ``mask``
    detections: InstanceMask
    diagnostic: str | None = None

    @property
    def iterations(self) -> int:
        return len(self.trace)


def write_trace(trace: list[dict], path) -> None:
    with open(path, "w") as fh:
        for entry in trace:
            fh.write(json.dumps(entry) + "\n")


def round_half_away(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return (np.sign(x) * np.floor(np.abs(x) + 0.5)).astype(np.int64)


def _axis_centers(n: int, size: int, step: int) -> list[int]:
    half = size // 2
    if n <= size:
        return [n // 2]
    first, last = half, n - size + half
    # a stride longer than the patch would leave unvisited slabs
    centers = list(range(first, last + 1, min(step, size)))
    if centers[-1] != last:
        centers.append(last)
    return centers


def sliding_positions(dims, patch_size, step, direction: str = "up") -> list[tuple[int, int, int]]:
    """Window centres covering the volume, ordered z-major then y then x.

    z runs upwards for ``"up"`` and downwards for ``"down"``.
    """
    check_direction(direction)
    xs, ys, zs = (_axis_centers(int(dims[a]), int(patch_size[a]), int(step[a])) for a in range(3))
    if direction == "down":
        zs = zs[::-1]
    return [(x, y, z) for z in zs for y in ys for x in xs]


def clamp_center(center, dims) -> tuple[int, int, int]:
    return tuple(int(np.clip(c, 0, n - 1)) for c, n in zip(center, dims))


def fragment_bbox_center(binary_patch, spec: PatchSpec, dims=None) -> tuple[int, int, int]:
    """Rounded volume-space centre of the bounding box of the detected voxels."""
    idx = np.argwhere(np.asarray(binary_patch, dtype=bool))
    if len(idx) == 0:
        raise ValueError("fragment_bbox_center needs at least one detected voxel")
    mid = (idx.min(axis=0) + idx.max(axis=0)) / 2.0 + spec.lower
    center = tuple(int(c) for c in round_half_away(mid))
    return clamp_center(center, dims) if dims is not None else center


def surface_refine_ct(binary_patch, image_patch, threshold: float) -> np.ndarray:
    """Peel surface voxels darker than ``threshold`` until nothing changes."""
    mask = np.asarray(binary_patch, dtype=bool).copy()
    dark = np.asarray(image_patch) < threshold
    while True:
        peel = surface(mask) & dark
        if not peel.any():
            return mask
        mask &= ~peel


class _Engine:
    def __init__(self, image: VoxelGrid, segmentor: Segmentor, cfg: TraversalConfig):
        self.image = image
        self.values = np.asarray(image.values)
        self.segmentor = segmentor
        self.cfg = cfg
        self.dims = image.dims
        self.memory = np.zeros(self.dims, dtype=bool)
        self.output = InstanceMask.empty_like(image)
        self.detections = InstanceMask.empty_like(image)
        self.records: list[VertebraRecord] = []
        self.trace: list[dict] = []
        self.next_id = 1

    def probe(self, center, phase):
        """Predict at ``center``; returns (spec, image patch, detected voxels, prediction)."""
        cfg = self.cfg
        spec = PatchSpec(center, cfg.patch_size, cfg.pad_value)
        image_patch = extract_array(self.values, spec)
        memory_patch = extract_array(self.memory, PatchSpec(center, cfg.patch_size, 0))
        pred = self.segmentor.predict(image_patch, memory_patch.astype(np.float64), spec,
                                      cfg.direction)
        detected = (np.asarray(pred.S) >= cfg.binarize_threshold) & ~memory_patch
        # drop detections in the padded region outside the volume
        inside = extract_array(np.ones(self.dims, dtype=bool), PatchSpec(center, cfg.patch_size, 0))
        detected &= inside
        v = int(detected.sum())
        self.trace.append({"t": len(self.trace), "x": list(center), "v_t": v, "phase": phase,
                           "converged": False, "forced_midpoint": False,
                           "memory_voxels": int(self.memory.sum())})
        return spec, image_patch, detected, pred

    def accept(self, spec, image_patch, detected, pred, n_iter, forced):
        cfg = self.cfg
        if cfg.hu_surface_threshold is not None:
            detected = surface_refine_ct(detected, image_patch, cfg.hu_surface_threshold)
        region = patch_to_volume(detected, spec, self.dims) & ~self.memory
        self.memory |= region
        iid = self.next_id
        self.next_id += 1
        complete = pred.C >= 0.5
        provisional = int(np.clip(round_half_away(pred.L), 1, 24))
        record = InstanceRecord(provisional, bool(complete))
        in_output = bool(complete or cfg.keep_incomplete_in_output)
        ids = self.detections.ids.copy()
        ids[region] = iid
        self.detections = InstanceMask(ids, {**self.detections.records, iid: record},
                                       self.image.spacing, self.image.origin)
        if in_output:
            ids = self.output.ids.copy()
            ids[region] = iid
            self.output = InstanceMask(ids, {**self.output.records, iid: record},
                                       self.image.spacing, self.image.origin)
        self.records.append(VertebraRecord(
            iid, float(pred.L), float(pred.C), bool(complete), tuple(spec.center),
            n_iter, forced, in_output))
        self.trace[-1]["converged"] = True
        self.trace[-1]["forced_midpoint"] = forced
        self.trace[-1]["memory_voxels"] = int(self.memory.sum())
        log.debug("instance %d accepted at %s after %d iterations", iid, spec.center, n_iter)

    def run(self) -> TraversalResult:
        cfg = self.cfg
        positions = sliding_positions(self.dims, cfg.patch_size, cfg.step, cfg.direction)
        cap = len(positions) + 25 * cfg.max_iter_per_vertebra
        cursor = 0
        rescan = None
        diagnostic = None
        while True:
            if len(self.trace) >= cap:
                diagnostic = f"iteration cap of {cap} reached; traversal aborted"
                log.warning(diagnostic)
                break
            if rescan is not None:
                x, phase, rescan = rescan, "rescan", None
            elif cursor < len(positions):
                x, phase = positions[cursor], "sliding"
                cursor += 1
            else:
                break
            spec, _, detected, _ = self.probe(x, phase)
            if detected.sum() < cfg.v_min:
                continue
            rescan = self._converge(x, fragment_bbox_center(detected, spec, self.dims), cap)
        return TraversalResult(self.output, self.records, self.trace, self.detections,
                               diagnostic)

    def _converge(self, x_prev, x, cap):
        """Follow one fragment to convergence; returns the centre to rescan, if any."""
        cfg = self.cfg
        n_iter = 1
        while len(self.trace) < cap:
            spec, image_patch, detected, pred = self.probe(x, "converging")
            n_iter += 1
            if detected.sum() < cfg.v_min:
                return None
            if np.max(np.abs(np.subtract(x, x_prev))) <= cfg.delta_max:
                self.accept(spec, image_patch, detected, pred, n_iter, False)
                return x
            if n_iter >= cfg.max_iter_per_vertebra:
                mid = clamp_center(round_half_away((np.asarray(x) + np.asarray(x_prev)) / 2),
                                   self.dims)
                spec, image_patch, detected, pred = self.probe(mid, "midpoint")
                n_iter += 1
                if not detected.any():
                    return None
                self.accept(spec, image_patch, detected, pred, n_iter, True)
                return mid
            x_prev, x = x, fragment_bbox_center(detected, spec, self.dims)
        return None


def run(image: VoxelGrid, segmentor: Segmentor, cfg: TraversalConfig = TraversalConfig()
        ) -> TraversalResult:
    """Segment every instance of the chain in ``image`` (at working resolution)."""
    return _Engine(image, segmentor, cfg).run()
