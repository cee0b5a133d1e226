"""Differentiable forward model: disparity-shifted view sampling.

The center view at pixel x is predicted from view (u,v) sampled at
x + delta*d(x), delta = (u-u0, v-v0) in grid steps. Samples carry the exact
derivative of the interpolated value w.r.t. the disparity scalar so losses
can chain through the warp. Out-of-bounds samples are excluded (value and
derivative zero, in_bounds false) rather than clamped.
"""

from dataclasses import dataclass

import numpy as np

from . import backend


@dataclass
class WarpSample:
    """One bilinear sample with its coordinate derivatives."""
    value: np.ndarray          # (C,)
    in_bounds: bool
    d_value_d_col: np.ndarray  # (C,)
    d_value_d_row: np.ndarray  # (C,)


@dataclass
class WarpBatch:
    """Per-view batch of disparity-shifted samples."""
    value: np.ndarray                 # (n, C)
    in_bounds: np.ndarray             # (n,) bool
    d_value_d_disparity: np.ndarray   # (n, C)


def bilinear_sample(img, p):
    """Sample img at continuous pixel coordinate p = (col, row).

    The value is the bilinear blend of the four surrounding pixels; the
    derivative is the blend's piecewise-linear slope, taking the right-limit
    cell at interior lattice points (the left cell only at the far border,
    where no right cell exists).
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    if img.size == 0:
        raise ValueError("empty image")
    vals, dcol, drow, inb = backend.sample_grad(
        np.ascontiguousarray(img),
        np.asarray(p, dtype=np.float64).reshape(1, 2))
    return WarpSample(vals[0], bool(inb[0]), dcol[0], drow[0])


def warp_view(lf, vc, xs, d):
    """Sample view vc at xs + delta*d for center-frame pixel coordinates xs.

    xs: (n, 2) (col, row); d: (n,) disparities. The returned
    d_value_d_disparity already carries the chain-rule factor delta.
    """
    xs = np.ascontiguousarray(xs, dtype=np.float64).reshape(-1, 2)
    d = np.ascontiguousarray(d, dtype=np.float64).reshape(-1)
    if xs.shape[0] != d.shape[0]:
        raise ValueError("xs and d must have matching lengths")
    view = lf.views[vc.v, vc.u][None]
    delta = np.array([[vc.u - lf.center.u, vc.v - lf.center.v]],
                     dtype=np.float64)
    vals, dvdd, inb = backend.warp_views(np.ascontiguousarray(view), delta,
                                         xs, d)
    return WarpBatch(vals[0], inb[0], dvdd[0])


def warp_all_views(lf, xs, d):
    """Warp every non-center view at once.

    Returns (values (V,n,C), d_value_d_disparity (V,n,C), in_bounds (V,n),
    deltas (V,2)); V follows row-major grid order with the center skipped.
    """
    stack, deltas, _ = lf.offcenter_stack
    xs = np.ascontiguousarray(xs, dtype=np.float64).reshape(-1, 2)
    d = np.ascontiguousarray(d, dtype=np.float64).reshape(-1)
    vals, dvdd, inb = backend.warp_views(stack, deltas, xs, d)
    return vals, dvdd, inb, deltas


def aggregate_center(values, masks):
    """Mask-weighted mean of warped view values per pixel: the synthesized
    center view of the forward model.

    values: (V, n, C); masks: (V, n) booleans (selection AND in-bounds).
    Returns (mean (n, C), valid (n,)); pixels with no contributing view are
    flagged invalid and must be excluded from losses downstream.
    """
    values = np.asarray(values, dtype=np.float64)
    masks = np.asarray(masks, dtype=bool)
    counts = masks.sum(axis=0)
    valid = counts > 0
    weighted = (values * masks[..., None]).sum(axis=0)
    mean = np.zeros_like(weighted)
    mean[valid] = weighted[valid] / counts[valid, None]
    return mean, valid
