"""
Dense 3D grids, instance masks, resampling and patch access.

Arrays are indexed ``[x, y, z]``; z is the cranio-caudal axis along which
instances are chained. On disk the x index varies fastest (see ``nrrd_io``).

Grid geometry follows a box convention: voxel ``i`` covers the physical
interval ``[origin + i*spacing, origin + (i+1)*spacing)``. Resampling maps
voxel centers through this convention, so up/down sampling by integer
factors is exactly aligned.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class VoxelGrid:
    """A dense scalar field with spacing (mm/voxel) and origin (mm)."""

    values: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 3:
            raise ValueError(f"expected a 3D array, got {values.ndim}D")
        if min(values.shape) < 1:
            raise ValueError(f"grid dims must be positive, got {values.shape}")
        _check_spacing(self.spacing)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.values.shape)

    def with_values(self, values: np.ndarray) -> VoxelGrid:
        return replace(self, values=values)


@dataclass(frozen=True)
class InstanceRecord:
    label: int
    complete: bool = True


@dataclass(frozen=True)
class InstanceMask:
    """Per-voxel instance ids (0 = background) plus per-instance records."""

    ids: np.ndarray
    records: dict[int, InstanceRecord] = field(default_factory=dict)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        ids = np.asarray(self.ids)
        if ids.ndim != 3:
            raise ValueError(f"expected a 3D array, got {ids.ndim}D")
        if not np.issubdtype(ids.dtype, np.integer):
            raise ValueError(f"instance ids must be integers, got {ids.dtype}")
        if ids.size and ids.min() < 0:
            raise ValueError("instance ids must be non-negative")
        _check_spacing(self.spacing)
        present = set(np.unique(ids).tolist()) - {0}
        missing = present - set(self.records)
        if missing:
            raise ValueError(f"instance ids without a record: {sorted(missing)}")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.ids.shape)

    @classmethod
    def empty_like(cls, grid: VoxelGrid | InstanceMask) -> InstanceMask:
        return cls(np.zeros(grid.dims, dtype=np.int32), {}, grid.spacing, grid.origin)

    def instance_ids(self) -> list[int]:
        """Ids with a record, in ascending order."""
        return sorted(self.records)

    def voxels(self, instance_id: int) -> np.ndarray:
        return self.ids == instance_id


@dataclass(frozen=True)
class PatchSpec:
    """Patch placement. Voxel ``(i, j, k)`` of the patch sits at grid index
    ``center - size // 2 + (i, j, k)``."""

    center: tuple[int, int, int]
    size: tuple[int, int, int]
    pad_value: float = 0.0

    def __post_init__(self):
        if len(self.size) != 3 or min(self.size) < 1:
            raise ValueError(f"patch size components must be >= 1, got {self.size}")
        object.__setattr__(self, "center", tuple(int(c) for c in self.center))
        object.__setattr__(self, "size", tuple(int(s) for s in self.size))

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.center) - np.asarray(self.size) // 2


def _check_spacing(spacing):
    s = np.asarray(spacing, dtype=float)
    if s.shape != (3,):
        raise ValueError(f"spacing must have 3 components, got {spacing}")
    if not np.all(np.isfinite(s)):
        raise ValueError(f"spacing must be finite, got {spacing}")
    if np.any(s <= 0):
        raise ValueError(f"spacing must be positive, got {spacing}")


def _nearest_indices(n_out, out_spacing, out_origin, n_in, in_spacing, in_origin):
    """Input index whose box contains each output voxel center, clamped."""
    centers = out_origin + (np.arange(n_out) + 0.5) * out_spacing
    idx = np.floor((centers - in_origin) / in_spacing).astype(np.int64)
    return np.clip(idx, 0, n_in - 1)


def resample_to_isotropic(grid: VoxelGrid, target_spacing: float,
                          mode: str = "trilinear") -> VoxelGrid:
    """Resample ``grid`` to ``(t, t, t)`` spacing.

    Output dims are ``round(dims * spacing / t)`` (at least 1); the origin
    is kept. ``mode`` is ``"trilinear"`` or ``"nearest"``.
    """
    t = float(target_spacing)
    if not np.isfinite(t) or t <= 0:
        raise ValueError(f"target spacing must be positive and finite, got {target_spacing}")
    if mode not in ("trilinear", "nearest"):
        raise ValueError(f"unknown interpolation mode {mode!r}")
    spacing = np.asarray(grid.spacing)
    dims = np.asarray(grid.dims)
    out_dims = np.maximum(1, np.round(dims * spacing / t).astype(int))
    if np.all(spacing == t):
        return grid

    if mode == "nearest":
        axes = [_nearest_indices(out_dims[a], t, 0.0, dims[a], spacing[a], 0.0)
                for a in range(3)]
        values = grid.values[np.ix_(*axes)]
    else:
        # continuous input index of each output voxel center
        scale = t / spacing
        offset = 0.5 * scale - 0.5
        values = ndimage.affine_transform(
            grid.values.astype(np.float64), np.diag(scale), offset=offset,
            output_shape=tuple(out_dims), order=1, mode="nearest")
    return VoxelGrid(values, (t, t, t), grid.origin)


def resample_mask_to_grid(mask: InstanceMask,
                          reference: VoxelGrid | InstanceMask) -> InstanceMask:
    """Nearest-neighbour resampling of ``mask`` onto the geometry of ``reference``.

    Records are carried over unchanged. Instances left without voxels keep
    their record and are reported through :mod:`warnings`.
    """
    axes = [_nearest_indices(reference.dims[a], reference.spacing[a], reference.origin[a],
                             mask.dims[a], mask.spacing[a], mask.origin[a])
            for a in range(3)]
    ids = mask.ids[np.ix_(*axes)]
    out = InstanceMask(ids, dict(mask.records), reference.spacing, reference.origin)
    vanished = sorted(set(mask.records) - set(np.unique(ids).tolist()))
    if vanished:
        warnings.warn(f"instances vanished during resampling: {vanished}", stacklevel=2)
    return out


def _patch_slices(shape, spec: PatchSpec):
    """Matching (source, destination) slices for the in-bounds part of a patch."""
    lo = spec.lower
    src, dst = [], []
    for a in range(3):
        start, stop = lo[a], lo[a] + spec.size[a]
        s0, s1 = max(start, 0), min(stop, shape[a])
        if s1 <= s0:
            return None
        src.append(slice(s0, s1))
        dst.append(slice(s0 - start, s1 - start))
    return tuple(src), tuple(dst)


def extract_array(values: np.ndarray, spec: PatchSpec) -> np.ndarray:
    """Raw-array version of :func:`extract_patch`, keeping the input dtype."""
    out = np.full(spec.size, spec.pad_value, dtype=values.dtype)
    sl = _patch_slices(values.shape, spec)
    if sl is not None:
        out[sl[1]] = values[sl[0]]
    return out


def extract_patch(grid: VoxelGrid, spec: PatchSpec) -> VoxelGrid:
    """Cut a ``spec.size`` patch out of ``grid``; out-of-bounds voxels get ``pad_value``."""
    values = np.full(spec.size, spec.pad_value, dtype=np.result_type(grid.values, np.float32))
    sl = _patch_slices(grid.dims, spec)
    if sl is not None:
        values[sl[1]] = grid.values[sl[0]]
    lo = spec.lower
    origin = tuple(o + l * s for o, l, s in zip(grid.origin, lo, grid.spacing))
    return VoxelGrid(values, grid.spacing, origin)


def paste_array(dst: np.ndarray, patch: np.ndarray, spec: PatchSpec) -> None:
    """OR a boolean patch into ``dst`` in place, dropping out-of-bounds voxels."""
    sl = _patch_slices(dst.shape, spec)
    if sl is None:
        return
    dst[sl[0]] |= patch[sl[1]]


def patch_to_volume(binary_patch: np.ndarray, spec: PatchSpec, dims) -> np.ndarray:
    """Place a boolean patch into an all-false volume of ``dims``."""
    out = np.zeros(dims, dtype=bool)
    paste_array(out, np.asarray(binary_patch, dtype=bool), spec)
    return out


def paste_instance(dst: InstanceMask, binary_patch, spec: PatchSpec, instance_id: int,
                   record: InstanceRecord) -> InstanceMask:
    """Write ``instance_id`` into ``dst`` wherever the patch is 1 and ``dst`` is background.

    Voxels owned by another instance are never overwritten; patch voxels
    outside the grid are dropped.
    """
    if instance_id <= 0:
        raise ValueError(f"instance id must be positive, got {instance_id}")
    if instance_id in dst.records:
        raise ValueError(f"instance id {instance_id} already present")
    patch = binary_patch.values if isinstance(binary_patch, VoxelGrid) else binary_patch
    patch = np.asarray(patch)
    if not np.all((patch == 0) | (patch == 1)):
        raise ValueError("binary patch must contain only 0 and 1")
    if patch.shape != spec.size:
        raise ValueError(f"patch shape {patch.shape} does not match spec size {spec.size}")
    region = patch_to_volume(patch.astype(bool), spec, dst.dims)
    ids = dst.ids.copy()
    ids[region & (ids == 0)] = instance_id
    records = dict(dst.records)
    records[instance_id] = record
    return InstanceMask(ids, records, dst.spacing, dst.origin)
