"""
Seeded synthetic "spines": ellipsoidal instances stacked along z on a
sinusoidally displaced centerline, with an exact reference mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .volume import InstanceMask, InstanceRecord, VoxelGrid

CROP_POLICIES = ("none", "crop_first", "crop_last", "crop_both")
COMPLETENESS_TOLERANCE = 0.02


class PhantomConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PhantomConfig:
    dims: tuple[int, int, int] = (64, 64, 64)
    n_instances: int = 5
    label_start: int = 1
    instance_half_axes: tuple[float, float, float] = (9.0, 7.0, 4.0)
    gap: float = 2.0
    column_curvature: float = 3.0
    foreground_intensity: float = 1.0
    background_intensity: float = 0.2
    noise_sigma: float = 0.05
    crop_policy: str = "none"
    seed: int = 0
    # fraction of the cropped instance's z extent that falls outside the volume
    crop_fraction: float = 0.5
    # added to the foreground intensity per label step; 0 gives uniform instances
    label_intensity_step: float = 0.0

    def validate(self):
        if self.n_instances < 1:
            raise PhantomConfigError("n_instances must be >= 1")
        if not 1 <= self.label_start <= 24:
            raise PhantomConfigError("label_start must be in 1..24")
        if self.label_start + self.n_instances - 1 > 24:
            raise PhantomConfigError("labels would exceed 24")
        if min(self.instance_half_axes) <= 0:
            raise PhantomConfigError("instance half-axes must be positive")
        if self.gap < 0:
            raise PhantomConfigError("gap must be non-negative")
        if self.crop_policy not in CROP_POLICIES:
            raise PhantomConfigError(f"unknown crop policy {self.crop_policy!r}")
        if not 0 <= self.crop_fraction < 1:
            raise PhantomConfigError("crop_fraction must be in [0, 1)")
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise PhantomConfigError("dims must be 3 positive integers")


def _z_centers(cfg: PhantomConfig) -> np.ndarray:
    """Bottom-up instance centers along z (voxel index coordinates)."""
    n = cfg.n_instances
    hz = cfg.instance_half_axes[2]
    nz = cfg.dims[2]
    extent = 2 * hz
    pitch = extent + cfg.gap
    height = n * extent + (n - 1) * cfg.gap
    # voxel centers live on [0, nz-1]; an instance fits when its extent does
    lo_limit, hi_limit = -0.5, nz - 0.5
    overhang = cfg.crop_fraction * extent

    policy = cfg.crop_policy
    if policy == "none":
        bottom = lo_limit + (nz - height) / 2
        if height > nz:
            raise PhantomConfigError(f"{n} instances of height {extent} do not fit in {nz} slices")
    elif policy == "crop_first":
        bottom = lo_limit - overhang
        if bottom + height > hi_limit:
            raise PhantomConfigError("instances do not fit above the cropped first instance")
    elif policy == "crop_last":
        bottom = hi_limit + overhang - height
        if bottom < lo_limit:
            raise PhantomConfigError("instances do not fit below the cropped last instance")
    else:
        if n < 2:
            raise PhantomConfigError("crop_both needs at least two instances")
        bottom = lo_limit - overhang
        stretched = (nz + 2 * overhang - n * extent) / (n - 1)
        if stretched < cfg.gap:
            raise PhantomConfigError("instances do not fit between the cropped ends")
        pitch = extent + stretched
    return bottom + hz + pitch * np.arange(n)


def generate(cfg: PhantomConfig) -> tuple[VoxelGrid, InstanceMask]:
    """Build the phantom image and its noise-free reference mask."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    nx, ny, nz = cfg.dims
    ax, ay, az = cfg.instance_half_axes
    zc = _z_centers(cfg)
    phase = rng.uniform(0, 2 * np.pi)

    def centerline(z):
        w = 2 * np.pi * z / nz + phase
        return ((nx - 1) / 2 + cfg.column_curvature * np.sin(w),
                (ny - 1) / 2 + 0.5 * cfg.column_curvature * np.cos(w))

    x = np.arange(nx)[:, None, None]
    y = np.arange(ny)[None, :, None]
    ids = np.zeros(cfg.dims, dtype=np.int32)
    intensity = np.full(cfg.dims, cfg.background_intensity, dtype=np.float64)
    records = {}
    for k, zk in enumerate(zc):
        cx, cy = centerline(zk)
        # ellipsoid over the z range it actually spans, including outside slices
        z0, z1 = int(np.ceil(zk - az)), int(np.floor(zk + az))
        z = np.arange(z0, z1 + 1)[None, None, :]
        inside = ((x - cx) / ax) ** 2 + ((y - cy) / ay) ** 2 + ((z - zk) / az) ** 2 <= 1.0
        full = int(inside.sum())
        keep = (z[0, 0] >= 0) & (z[0, 0] < nz)
        kept = inside[:, :, keep]
        in_volume = int(kept.sum())
        if in_volume == 0:
            raise PhantomConfigError(f"instance {k + 1} lies entirely outside the volume")
        zs = np.arange(z0, z1 + 1)[keep]
        block = ids[:, :, zs[0]:zs[-1] + 1]
        if np.any(block[kept] != 0):
            raise PhantomConfigError("instances overlap; increase gap")
        label = cfg.label_start + k
        block[kept] = k + 1
        intensity[:, :, zs[0]:zs[-1] + 1][kept] = (
            cfg.foreground_intensity + cfg.label_intensity_step * label)
        removed = 1.0 - in_volume / full
        records[k + 1] = InstanceRecord(label, removed <= COMPLETENESS_TOLERANCE)

    if cfg.noise_sigma > 0:
        intensity = intensity + rng.normal(0.0, cfg.noise_sigma, size=cfg.dims)
    image = VoxelGrid(intensity.astype(np.float32))
    return image, InstanceMask(ids, records)


def ellipsoid_volume(cfg: PhantomConfig) -> float:
    ax, ay, az = cfg.instance_half_axes
    return 4.0 / 3.0 * np.pi * ax * ay * az
