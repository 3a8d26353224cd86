"""Exact Euclidean distance transform and six-connected surfaces."""

from __future__ import annotations

import numba
import numpy as np
from scipy import ndimage

_SIX = ndimage.generate_binary_structure(3, 1)


def surface(mask: np.ndarray) -> np.ndarray:
    """Voxels of ``mask`` with at least one six-connected background neighbour.

    Neighbours outside the array count as background.
    """
    mask = np.asarray(mask, dtype=bool)
    return mask & ~ndimage.binary_erosion(mask, _SIX, border_value=0)


@numba.njit(cache=True)
def _envelope_1d(f, out, v, z):
    # lower envelope of parabolas y = f[q] + (x - q)^2
    n = f.shape[0]
    k = -1
    for q in range(n):
        if f[q] == np.inf:
            continue
        if k < 0:
            k = 0
            v[0] = q
            z[0] = -np.inf
            z[1] = np.inf
            continue
        while True:
            p = v[k]
            s = ((f[q] + q * q) - (f[p] + p * p)) / (2.0 * q - 2.0 * p)
            if s <= z[k]:
                k -= 1
                if k < 0:
                    break
            else:
                break
        k += 1
        v[k] = q
        z[k] = -np.inf if k == 0 else s
        z[k + 1] = np.inf
    if k < 0:
        for i in range(n):
            out[i] = np.inf
        return
    j = 0
    for i in range(n):
        while z[j + 1] < i:
            j += 1
        d = i - v[j]
        out[i] = d * d + f[v[j]]


@numba.njit(cache=True)
def _transform_axis0(g):
    n = g.shape[0]
    out = np.empty_like(g)
    v = np.empty(n, dtype=np.int64)
    z = np.empty(n + 1, dtype=np.float64)
    col = np.empty(n, dtype=np.float64)
    res = np.empty(n, dtype=np.float64)
    for j in range(g.shape[1]):
        for k in range(g.shape[2]):
            for i in range(n):
                col[i] = g[i, j, k]
            _envelope_1d(col, res, v, z)
            for i in range(n):
                out[i, j, k] = res[i]
    return out


def squared_edt(sites: np.ndarray, spacing=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Squared distance (in physical units) from every voxel to the nearest ``True`` site.

    Separable over the three axes; each pass takes the lower envelope of
    the parabolas rooted at the previous pass's values. Anisotropic spacing
    is handled by rescaling each axis' values before and after its pass.
    With no sites every entry is ``inf``.
    """
    sites = np.asarray(sites, dtype=bool)
    g = np.where(sites, 0.0, np.inf)
    for axis in range(3):
        s2 = float(spacing[axis]) ** 2
        moved = np.ascontiguousarray(np.moveaxis(g, axis, 0)) / s2
        moved = _transform_axis0(moved) * s2
        g = np.moveaxis(moved, 0, axis)
    return np.ascontiguousarray(g)


def distance_to_surface(target: np.ndarray, spacing=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Unsigned distance from every voxel (inside or outside) to the surface of ``target``.

    An empty target gives ``inf`` everywhere.
    """
    sp = np.asarray(spacing, dtype=float)
    if not np.allclose(sp, sp[0]):
        raise ValueError(f"distance_to_surface needs isotropic spacing, got {tuple(sp)}")
    return np.sqrt(squared_edt(surface(target), spacing))
