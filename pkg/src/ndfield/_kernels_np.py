"""Pure-numpy implementations of the hot kernels.

The compiled extension ``ndfield._core`` exposes the same four entry points
with identical semantics; ``ndfield.backend`` picks one at import time.
Everything here is vectorized, deterministic, and float64.
"""

import numpy as np

# Multipliers for the 2D spatial corner hash (uint32 wrap-around arithmetic).
HASH_P1 = 1
HASH_P2 = 2654435761


def _corner_slots(cx, cy, resolution, dense, table_size):
    """Map integer corner coordinates to feature-table slots.

    Dense row-major indexing when the (N+1)^2 corner grid fits in the table,
    otherwise the xor spatial hash. table_size must be a power of two.
    """
    if dense:
        return cy * (resolution + 1) + cx
    h = (cx.astype(np.uint32) * np.uint32(HASH_P1)) ^ (
        cy.astype(np.uint32) * np.uint32(HASH_P2)
    )
    return (h & np.uint32(table_size - 1)).astype(np.int64)


def hash_encode(tables, resolutions, dense, xs):
    """Multiresolution grid lookup with bilinear corner blending.

    tables      : (L, T, F) float64 feature tables
    resolutions : (L,) int grid resolutions
    dense       : (L,) bool, dense corner indexing vs spatial hash
    xs          : (n, 2) coordinates, clamped here to [0,1]^2

    Returns (feats (n, L*F), corners (n, L, 4) int64, weights (n, L, 4)).
    Corner order is (x0,y0), (x1,y0), (x0,y1), (x1,y1).
    """
    L, T, F = tables.shape
    n = xs.shape[0]
    feats = np.empty((n, L * F))
    corners = np.empty((n, L, 4), dtype=np.int64)
    weights = np.empty((n, L, 4))
    x = np.clip(xs[:, 0], 0.0, 1.0)
    y = np.clip(xs[:, 1], 0.0, 1.0)
    for lev in range(L):
        N = int(resolutions[lev])
        px = x * N
        py = y * N
        # Anchor the cell so x=1 lands in the last cell with weight on its
        # far corner; keeps every index inside the (N+1)^2 corner grid.
        cx0 = np.minimum(np.floor(px).astype(np.int64), N - 1)
        cy0 = np.minimum(np.floor(py).astype(np.int64), N - 1)
        fx = px - cx0
        fy = py - cy0
        cx1 = cx0 + 1
        cy1 = cy0 + 1
        corners[:, lev, 0] = _corner_slots(cx0, cy0, N, dense[lev], T)
        corners[:, lev, 1] = _corner_slots(cx1, cy0, N, dense[lev], T)
        corners[:, lev, 2] = _corner_slots(cx0, cy1, N, dense[lev], T)
        corners[:, lev, 3] = _corner_slots(cx1, cy1, N, dense[lev], T)
        weights[:, lev, 0] = (1.0 - fx) * (1.0 - fy)
        weights[:, lev, 1] = fx * (1.0 - fy)
        weights[:, lev, 2] = (1.0 - fx) * fy
        weights[:, lev, 3] = fx * fy
        gathered = tables[lev][corners[:, lev, :]]  # (n, 4, F)
        feats[:, lev * F:(lev + 1) * F] = np.einsum(
            "nkf,nk->nf", gathered, weights[:, lev, :]
        )
    return feats, corners, weights


def hash_scatter(grad_tables, corners, weights, cot_feats):
    """Accumulate feature-table gradients from per-point cotangents.

    grad_tables : (L, T, F), accumulated in place
    corners     : (n, L, 4) slots from hash_encode
    weights     : (n, L, 4) blend weights from hash_encode
    cot_feats   : (n, L*F) adjoints of the concatenated features
    """
    L, T, F = grad_tables.shape
    for lev in range(L):
        idx = corners[:, lev, :].ravel()
        for f in range(F):
            contrib = weights[:, lev, :] * cot_feats[:, lev * F + f][:, None]
            grad_tables[lev, :, f] += np.bincount(
                idx, weights=contrib.ravel(), minlength=T
            )


def warp_views(views, deltas, xs, d):
    """Sample every view at xs + delta*d with the disparity derivative.

    views  : (V, H, W, C) float64 image stack
    deltas : (V, 2) per-view (du, dv) baselines in grid steps
    xs     : (n, 2) pixel coordinates (col, row) in the reference frame
    d      : (n,) disparities

    Returns (values (V,n,C), d_value_d_disparity (V,n,C), in_bounds (V,n)).
    Out-of-bounds samples get value 0 and derivative 0.
    """
    V, H, W, C = views.shape
    n = xs.shape[0]
    px = xs[None, :, 0] + deltas[:, 0, None] * d[None, :]
    py = xs[None, :, 1] + deltas[:, 1, None] * d[None, :]
    inb = (px >= 0.0) & (px <= W - 1.0) & (py >= 0.0) & (py <= H - 1.0)

    pxc = np.clip(px, 0.0, W - 1.0)
    pyc = np.clip(py, 0.0, H - 1.0)
    if W >= 2:
        x0 = np.minimum(np.floor(pxc).astype(np.int64), W - 2)
        fx = pxc - x0
    else:
        x0 = np.zeros_like(pxc, dtype=np.int64)
        fx = np.zeros_like(pxc)
    if H >= 2:
        y0 = np.minimum(np.floor(pyc).astype(np.int64), H - 2)
        fy = pyc - y0
    else:
        y0 = np.zeros_like(pyc, dtype=np.int64)
        fy = np.zeros_like(pyc)

    flat = views.reshape(V * H * W, C)
    base = (np.arange(V, dtype=np.int64) * H * W)[:, None]
    i00 = base + y0 * W + x0
    dx = 1 if W >= 2 else 0
    dy = W if H >= 2 else 0
    g00 = flat[i00]
    g10 = flat[i00 + dx]
    g01 = flat[i00 + dy]
    g11 = flat[i00 + dx + dy]

    fx = fx[..., None]
    fy = fy[..., None]
    vals = ((1 - fx) * (1 - fy) * g00 + fx * (1 - fy) * g10
            + (1 - fx) * fy * g01 + fx * fy * g11)
    dvx = (1 - fy) * (g10 - g00) + fy * (g11 - g01)
    dvy = (1 - fx) * (g01 - g00) + fx * (g11 - g10)
    dvdd = deltas[:, 0, None, None] * dvx + deltas[:, 1, None, None] * dvy

    vals[~inb] = 0.0
    dvdd[~inb] = 0.0
    return vals, dvdd, inb


def sample_grad(img, ps):
    """Bilinear samples of one image with exact coordinate derivatives.

    img : (H, W, C) float64
    ps  : (n, 2) continuous pixel coordinates (col, row)

    Returns (values (n,C), d/dcol (n,C), d/drow (n,C), in_bounds (n,)).
    """
    H, W, C = img.shape
    px = ps[:, 0]
    py = ps[:, 1]
    inb = (px >= 0.0) & (px <= W - 1.0) & (py >= 0.0) & (py <= H - 1.0)

    pxc = np.clip(px, 0.0, W - 1.0)
    pyc = np.clip(py, 0.0, H - 1.0)
    if W >= 2:
        x0 = np.minimum(np.floor(pxc).astype(np.int64), W - 2)
        fx = (pxc - x0)[:, None]
    else:
        x0 = np.zeros_like(pxc, dtype=np.int64)
        fx = np.zeros((ps.shape[0], 1))
    if H >= 2:
        y0 = np.minimum(np.floor(pyc).astype(np.int64), H - 2)
        fy = (pyc - y0)[:, None]
    else:
        y0 = np.zeros_like(pyc, dtype=np.int64)
        fy = np.zeros((ps.shape[0], 1))

    flat = img.reshape(H * W, C)
    i00 = y0 * W + x0
    dx = 1 if W >= 2 else 0
    dy = W if H >= 2 else 0
    g00 = flat[i00]
    g10 = flat[i00 + dx]
    g01 = flat[i00 + dy]
    g11 = flat[i00 + dx + dy]

    vals = ((1 - fx) * (1 - fy) * g00 + fx * (1 - fy) * g10
            + (1 - fx) * fy * g01 + fx * fy * g11)
    dcol = (1 - fy) * (g10 - g00) + fy * (g11 - g01)
    drow = (1 - fx) * (g01 - g00) + fx * (g11 - g10)

    vals[~inb] = 0.0
    dcol[~inb] = 0.0
    drow[~inb] = 0.0
    return vals, dcol, drow, inb
