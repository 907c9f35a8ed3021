"""Spacing conversion of volumes via four interpolation methods.

Grid convention: input voxel center i sits at origin + i*spacing. The
physical domain corner is origin - spacing/2; the resampled grid has
dims ceil(n * spacing / target) and voxel center k at
corner + (k + 0.5) * target, so the field of view is preserved to
within one voxel. Out-of-domain lookups clamp to the border.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nrrd import Volume

METHODS = ("nearest", "trilinear", "bspline3", "gaussian")

# pole of the cubic B-spline prefilter
_BSPLINE_POLE = math.sqrt(3.0) - 2.0


@dataclass
class ResampleSpec:
    target_spacing: tuple = (2.0, 2.0, 2.0)
    method: str = "trilinear"
    gaussian_sigma_factor: float = 0.5  # sigma = factor * target spacing, per axis

    def __post_init__(self):
        self.target_spacing = tuple(float(s) for s in self.target_spacing)
        if any(s <= 0 for s in self.target_spacing):
            raise ValueError(f"target spacing must be positive, got {self.target_spacing}")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}, expected one of {METHODS}")


def _nearest_indices(u, n):
    # ties at the midpoint resolve to the lower index
    idx = np.ceil(u - 0.5).astype(np.int64)
    return np.clip(idx, 0, n - 1)


def _cubic_weights(t):
    t2 = t * t
    t3 = t2 * t
    w0 = (1.0 - 3.0 * t + 3.0 * t2 - t3) / 6.0
    w1 = (4.0 - 6.0 * t2 + 3.0 * t3) / 6.0
    w2 = (1.0 + 3.0 * t + 3.0 * t2 - 3.0 * t3) / 6.0
    w3 = t3 / 6.0
    return w0, w1, w2, w3


def bspline_prefilter(data, axis):
    """In-place causal/anticausal recursive filter along one axis so that
    cubic B-spline evaluation interpolates the original samples.
    Mirror boundary handling."""
    z = _BSPLINE_POLE
    c = np.moveaxis(data, axis, 0)
    n = c.shape[0]
    if n == 1:
        return data
    c *= 6.0
    horizon = int(math.ceil(math.log(1e-16) / math.log(abs(z))))
    period = 2 * n - 2
    c0 = c[0].copy()
    zk = 1.0
    for k in range(1, horizon):
        zk *= z
        m = k % period
        idx = m if m < n else period - m  # mirror extension
        c0 += zk * c[idx]
    c[0] = c0
    for k in range(1, n):
        c[k] += z * c[k - 1]
    c[n - 1] = (z / (z * z - 1.0)) * (c[n - 1] + z * c[n - 2])
    for k in range(n - 2, -1, -1):
        c[k] = z * (c[k + 1] - c[k])
    return data


def _interp_axis_linear(data, u, axis):
    n = data.shape[axis]
    i0 = np.clip(np.floor(u).astype(np.int64), 0, n - 1)
    i1 = np.clip(i0 + 1, 0, n - 1)
    t = np.clip(u - i0, 0.0, 1.0)
    shape = [1, 1, 1]
    shape[axis] = len(u)
    t = t.reshape(shape)
    a = np.take(data, i0, axis=axis)
    b = np.take(data, i1, axis=axis)
    return a * (1.0 - t) + b * t


def _interp_axis_cubic(coeff, u, axis):
    n = coeff.shape[axis]
    base = np.floor(u).astype(np.int64)
    t = u - base
    ws = _cubic_weights(t)
    shape = [1, 1, 1]
    shape[axis] = len(u)
    out = None
    for off, w in zip((-1, 0, 1, 2), ws):
        idx = np.clip(base + off, 0, n - 1)
        term = np.take(coeff, idx, axis=axis) * w.reshape(shape)
        out = term if out is None else out + term
    return out


def _interp_axis_gaussian(data, u, axis, sigma_vox):
    n = data.shape[axis]
    radius = max(1, int(math.ceil(3.0 * sigma_vox)))
    base = np.rint(u).astype(np.int64)
    shape = [1, 1, 1]
    shape[axis] = len(u)
    out = None
    wsum = None
    for off in range(-radius, radius + 1):
        idx = base + off
        d = idx - u
        w = np.exp(-0.5 * (d / sigma_vox) ** 2)
        w[(idx < 0) | (idx > n - 1)] = 0.0  # border renormalization
        idx = np.clip(idx, 0, n - 1)
        term = np.take(data, idx, axis=axis) * w.reshape(shape)
        out = term if out is None else out + term
        wsum = w if wsum is None else wsum + w
    return out / wsum.reshape(shape)


def _continuous_indices(volume, target_spacing):
    """Per-axis fractional input indices of the output voxel centers."""
    coords = []
    dims_out = []
    for a in range(3):
        n_in = volume.dims[a]
        s_in = volume.spacing[a]
        s_out = target_spacing[a]
        n_out = int(math.ceil(n_in * s_in / s_out))
        corner = volume.origin[a] - 0.5 * s_in
        centers = corner + (np.arange(n_out) + 0.5) * s_out
        coords.append((centers - volume.origin[a]) / s_in)
        dims_out.append(n_out)
    return coords, tuple(dims_out)


def resample(volume, spec):
    """Resample a volume onto the target spacing grid.

    Masks must use nearest-neighbor interpolation; anything else on a
    mask raises. Nearest output values are a subset of the input values.
    """
    if volume.kind == "mask" and spec.method != "nearest":
        raise ValueError(
            f"masks must be resampled with nearest-neighbor interpolation, "
            f"got {spec.method!r}")

    coords, dims_out = _continuous_indices(volume, spec.target_spacing)
    out_origin = tuple(
        volume.origin[a] - 0.5 * volume.spacing[a] + 0.5 * spec.target_spacing[a]
        for a in range(3))

    if spec.method == "nearest":
        ix = _nearest_indices(coords[0], volume.dims[0])
        iy = _nearest_indices(coords[1], volume.dims[1])
        iz = _nearest_indices(coords[2], volume.dims[2])
        out = volume.data[np.ix_(ix, iy, iz)]
    else:
        data = volume.data.astype(np.float64)
        if spec.method == "trilinear":
            for a in range(3):
                data = _interp_axis_linear(data, coords[a], a)
        elif spec.method == "bspline3":
            for a in range(3):
                bspline_prefilter(data, a)
            for a in range(3):
                data = _interp_axis_cubic(data, coords[a], a)
        else:  # gaussian
            for a in range(3):
                sigma_vox = (spec.gaussian_sigma_factor
                             * spec.target_spacing[a] / volume.spacing[a])
                data = _interp_axis_gaussian(data, coords[a], a, sigma_vox)
        out = data.astype(np.float32)

    return Volume(data=out, spacing=spec.target_spacing, origin=out_origin,
                  kind=volume.kind, space=volume.space)


def interpolate_at(volume, point_mm, method, gaussian_sigma_mm=None):
    """Evaluate the volume at one physical point with the given method.

    Points outside the domain clamp to the border (never an error). For
    'gaussian' the per-axis sigma defaults to half the volume's spacing.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    u = np.array([(point_mm[a] - volume.origin[a]) / volume.spacing[a]
                  for a in range(3)])

    if method == "nearest":
        idx = tuple(int(_nearest_indices(np.array([u[a]]), volume.dims[a])[0])
                    for a in range(3))
        return float(volume.data[idx])

    data = volume.data.astype(np.float64)
    if method == "bspline3":
        for a in range(3):
            bspline_prefilter(data, a)
        for a in range(3):
            data = _interp_axis_cubic(data, u[a:a + 1], a)
    elif method == "trilinear":
        for a in range(3):
            data = _interp_axis_linear(data, u[a:a + 1], a)
    else:
        for a in range(3):
            sigma = (gaussian_sigma_mm[a] if gaussian_sigma_mm is not None
                     else 0.5 * volume.spacing[a]) / volume.spacing[a]
            data = _interp_axis_gaussian(data, u[a:a + 1], a, sigma)
    return float(data.reshape(()))
