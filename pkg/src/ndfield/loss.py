"""Objective machinery: photometric terms, TV regularizer, view selection.

Per-view matching distance E = L1 + alpha*(1 - local SSIM); the training
loss sums E over the per-pixel half of views with smallest E (occlusion
robustness) plus a Charbonnier-smoothed TV penalty on the predicted
disparity. Every term is differentiable w.r.t. the predicted disparities;
the backward passes here are exact, which the finite-difference tests rely
on.

Windowed SSIM statistics are computed as P x P matrix products: the
reflect-padding and the Gaussian window along one axis fold into a single
(P, P) operator K, so blur(X) = K @ X @ K.T and its exact adjoint is
K.T @ Y @ K. Interior window centers (at least window//2 from the border)
are unaffected by the padding, which makes the scalar MSSIM match the
standard cropped-mean reference.
"""

from dataclasses import dataclass

import numpy as np

SSIM_C1 = 0.01 ** 2   # (K1 * data_range)^2 with data range fixed to 1
SSIM_C2 = 0.03 ** 2

_blur_cache = {}


@dataclass
class LossWeights:
    """Loss hyperparameters. alpha/beta are tuned per scene in the 1e-1..1e1
    range by default; ablations may zero them."""
    alpha: float = 1.0
    beta: float = 1.0
    mssim_window: int = 11
    mssim_sigma: float = 1.5
    charbonnier_eps: float = 1e-6

    def __post_init__(self):
        if self.mssim_window < 3 or self.mssim_window % 2 == 0:
            raise ValueError("mssim_window must be odd and >= 3")


@dataclass
class ViewSelection:
    """Per-pixel winners of the view-distance comparison."""
    selected: np.ndarray    # (V, ...) bool
    selection_size: int     # floor(V/2)

    @property
    def counts(self):
        return self.selected.sum(axis=0)


def gaussian_window(size, sigma):
    k = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * (k / sigma) ** 2)
    return g / g.sum()


def blur_operator(P, window, sigma):
    """(P, P) matrix applying reflect-pad + windowed Gaussian along one axis."""
    key = (P, window, sigma)
    if key in _blur_cache:
        return _blur_cache[key]
    if P < window:
        raise ValueError(f"patch side {P} smaller than the {window}-pixel "
                         "window")
    r = (window - 1) // 2
    g = gaussian_window(window, sigma)
    pad_idx = np.pad(np.arange(P), r, mode="symmetric")
    M = P + 2 * r
    pad_mat = np.zeros((M, P))
    pad_mat[np.arange(M), pad_idx] = 1.0
    conv = np.zeros((P, M))
    for i in range(P):
        conv[i, i:i + window] = g
    K = conv @ pad_mat
    _blur_cache[key] = K
    return K


def _blur(K, x):
    return np.matmul(K, np.matmul(x, K.T))


def _blur_adjoint(K, y):
    return np.matmul(K.T, np.matmul(y, K))


def ssim_reference_stats(a, K):
    """Window statistics of the fixed image a, reusable across views."""
    mu = _blur(K, a)
    e2 = _blur(K, a * a)
    return {"a": a, "mu": mu, "var": e2 - mu * mu}


def ssim_forward(ref, b, K):
    """Per-pixel SSIM map of b against the prepared reference.

    Works on (..., P, P) stacks; returns (S, cache) with everything the
    backward pass needs.
    """
    mu_b = _blur(K, b)
    eb2 = _blur(K, b * b)
    eab = _blur(K, ref["a"] * b)
    var_b = eb2 - mu_b * mu_b
    cov = eab - ref["mu"] * mu_b
    a1 = 2.0 * ref["mu"] * mu_b + SSIM_C1
    a2 = 2.0 * cov + SSIM_C2
    b1 = ref["mu"] ** 2 + mu_b ** 2 + SSIM_C1
    b2 = ref["var"] + var_b + SSIM_C2
    S = (a1 * a2) / (b1 * b2)
    cache = {"ref": ref, "b": b, "mu_b": mu_b, "a1": a1, "a2": a2,
             "b1": b1, "b2": b2, "S": S, "K": K}
    return S, cache


def ssim_backward(cache, cot):
    """Exact gradient of sum(cot * S) w.r.t. the second image."""
    ref = cache["ref"]
    K = cache["K"]
    mu_a, mu_b = ref["mu"], cache["mu_b"]
    a1, a2, b1, b2, S = (cache[k] for k in ("a1", "a2", "b1", "b2", "S"))
    denom = b1 * b2
    g_a1 = cot * a2 / denom
    g_a2 = cot * a1 / denom
    g_b1 = -cot * S / b1
    g_b2 = -cot * S / b2
    g_cov = 2.0 * g_a2
    g_var_b = g_b2
    g_mu_b = (2.0 * mu_a * g_a1 + 2.0 * mu_b * g_b1
              - mu_a * g_cov - 2.0 * mu_b * g_var_b)
    return (_blur_adjoint(K, g_mu_b)
            + 2.0 * cache["b"] * _blur_adjoint(K, g_var_b)
            + ref["a"] * _blur_adjoint(K, g_cov))


def _as_stack(img):
    """(H, W) or (H, W, C) image -> (C, H, W) float64."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    if img.ndim != 3:
        raise ValueError("expected a 2D or (H, W, C) image")
    return np.moveaxis(img, 2, 0)


def mssim_map(a, b, w):
    """Channel-averaged SSIM map plus the mean over valid window centers.

    Both patches must share shape, lie in [0,1], and be at least the window
    wide. Map border values come from reflect padding; the scalar averages
    only the interior where the full window fits (the standard reference
    convention).
    """
    sa, sb = _as_stack(a), _as_stack(b)
    if sa.shape != sb.shape:
        raise ValueError("patch shapes differ")
    P, Q = sa.shape[1:]
    win = w.mssim_window
    if min(P, Q) < win:
        raise ValueError(f"patch {P}x{Q} smaller than the {win}-pixel window")
    if P != Q:
        # blur_operator is per-axis square; rectangular patches just use two
        Krow = blur_operator(P, win, w.mssim_sigma)
        Kcol = blur_operator(Q, win, w.mssim_sigma)
        mu_a = Krow @ sa @ Kcol.T
        e2a = Krow @ (sa * sa) @ Kcol.T
        ref = {"a": sa, "mu": mu_a, "var": e2a - mu_a * mu_a}
        mu_b = Krow @ sb @ Kcol.T
        eb2 = Krow @ (sb * sb) @ Kcol.T
        eab = Krow @ (sa * sb) @ Kcol.T
        var_b = eb2 - mu_b * mu_b
        cov = eab - mu_a * mu_b
        S = ((2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)) / (
            (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (ref["var"] + var_b + SSIM_C2))
    else:
        K = blur_operator(P, win, w.mssim_sigma)
        S, _ = ssim_forward(ssim_reference_stats(sa, K), sb, K)
    smap = S.mean(axis=0)
    r = (win - 1) // 2
    mssim = float(smap[r:P - r, r:Q - r].mean())
    return smap, mssim


def tv_term(d, w):
    """Charbonnier-smoothed total variation of a disparity patch.

    Mean of sqrt(delta^2 + eps^2) - eps over the forward differences along
    both axes; even in d and differentiable everywhere.
    """
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 2 or min(d.shape) < 2:
        raise ValueError("TV needs a patch of at least 2x2")
    val, _ = _tv_forward_backward(d[None], w.charbonnier_eps)
    return float(val[0])


def _tv_forward_backward(d, eps):
    """TV values and gradients for a (B, P, Q) stack of patches."""
    B, P, Q = d.shape
    count = P * (Q - 1) + (P - 1) * Q
    dx = d[:, :, 1:] - d[:, :, :-1]
    dy = d[:, 1:, :] - d[:, :-1, :]
    rx = np.sqrt(dx * dx + eps * eps)
    ry = np.sqrt(dy * dy + eps * eps)
    vals = ((rx - eps).sum(axis=(1, 2)) + (ry - eps).sum(axis=(1, 2))) / count
    gx = dx / rx
    gy = dy / ry
    grads = np.zeros_like(d)
    grads[:, :, 1:] += gx
    grads[:, :, :-1] -= gx
    grads[:, 1:, :] += gy
    grads[:, :-1, :] -= gy
    grads /= count
    return vals, grads


def view_distance(center_patch, warped_patch, valid_mask, w):
    """Per-pixel matching distance E for one view (L1 + alpha*(1-SSIM)).

    Invalid pixels get an infinite sentinel so they are never selected.
    """
    sa, sb = _as_stack(center_patch), _as_stack(warped_patch)
    if sa.shape != sb.shape:
        raise ValueError("patch shapes differ")
    l1 = np.abs(sa - sb).mean(axis=0)
    smap, _ = mssim_map(center_patch, warped_patch, w)
    E = l1 + w.alpha * (1.0 - smap)
    valid = np.asarray(valid_mask, dtype=bool)
    E = np.where(valid, E, np.inf)
    return E


def select_views(E):
    """Keep, per pixel, the floor(V/2) views with smallest distance.

    E: (V, ...) with +inf marking invalid (view, pixel) pairs. Ties break
    toward the lower view index (stable sort over the row-major view axis).
    Pixels with fewer valid views than the target keep all their valid ones.
    """
    E = np.asarray(E)
    V = E.shape[0]
    if V < 2:
        raise ValueError("need at least two candidate views")
    half = V // 2
    n_valid = np.isfinite(E).sum(axis=0)
    n_sel = np.minimum(half, n_valid)
    order = np.argsort(E, axis=0, kind="stable")
    rank = np.empty_like(order)
    np.put_along_axis(rank, order,
                      np.broadcast_to(np.arange(V).reshape(
                          (V,) + (1,) * (E.ndim - 1)), E.shape).copy(),
                      axis=0)
    selected = rank < n_sel[None]
    return ViewSelection(selected=selected, selection_size=half)


# ---------------------------------------------------------------------------
# Fused batch path used by the training loop.

def batch_distances(batch, w):
    """E maps for every view of a PatchBatch, with reusable SSIM caches.

    Returns (E (V, B, P, P), cache dict).
    """
    a = batch.center            # (B, C, P, P)
    b = batch.warped            # (V, B, C, P, P)
    K = blur_operator(a.shape[-1], w.mssim_window, w.mssim_sigma)
    ref = ssim_reference_stats(a, K)
    S, ssim_cache = ssim_forward(ref, b, K)
    l1 = np.abs(a[None] - b).mean(axis=2)
    smean = S.mean(axis=2)
    E = l1 + w.alpha * (1.0 - smean)
    E = np.where(batch.in_bounds, E, np.inf)
    return E, {"ssim": ssim_cache, "S": S, "l1": l1}


def training_loss(batch, sel, w, cache=None):
    """Selected-view loss and its exact disparity cotangent.

    loss = mean over contributing pixels of sum_{selected} E
           + beta * mean over patches of TV(d_hat)

    The cotangent chains through the warp derivative, the SSIM windows
    (including window neighbors of selected pixels), and the TV term.
    Out-of-bounds samples carry zero derivative so no gradient leaks in.
    """
    if cache is None:
        _, cache = batch_distances(batch, w)
    a = batch.center
    b = batch.warped
    C = a.shape[1]
    B = a.shape[0]

    selected = sel.selected
    n_pix = int((selected.sum(axis=0) > 0).sum())
    if n_pix == 0:
        raise ValueError("no pixel has a selected view (degenerate batch)")
    wsel = selected / n_pix                            # (V, B, P, P)

    smean = cache["S"].mean(axis=2)
    phot = float((np.where(selected, cache["l1"]
                           + w.alpha * (1.0 - smean), 0.0)).sum() / n_pix)

    # L1 branch: d|a-b|/db = -sign(a-b), channel-averaged
    g_b = (-np.sign(a[None] - b) / C) * wsel[:, :, None]
    # SSIM branch: cot on the per-channel map is -alpha * wsel / C
    cot_S = (-w.alpha / C) * np.broadcast_to(
        wsel[:, :, None], cache["S"].shape)
    g_b += ssim_backward(cache["ssim"], cot_S)
    cot_d = (g_b * batch.d_value_d_disparity).sum(axis=(0, 2))  # (B, P, P)

    tv_vals, tv_grads = _tv_forward_backward(batch.dhat, w.charbonnier_eps)
    loss = phot + w.beta * float(tv_vals.mean())
    cot_d += (w.beta / B) * tv_grads
    return loss, cot_d


def objective_full(batch, w, sel=None):
    """Monitoring objective: full aggregated reconstruction error.

    L1 + alpha*(1 - MSSIM) between the center patch and the mask-weighted
    mean of the warped views, plus beta*TV. Pixels with no contributing view
    are excluded from the L1 mean and neutralized (filled with the center
    value) inside the SSIM windows. Not used for gradient steps.
    """
    a = batch.center                                    # (B, C, P, P)
    b = batch.warped                                    # (V, B, C, P, P)
    masks = sel.selected if sel is not None else batch.in_bounds
    counts = masks.sum(axis=0)                          # (B, P, P)
    valid = counts > 0
    agg = (b * masks[:, :, None]).sum(axis=0)
    agg = np.divide(agg, np.maximum(counts, 1)[:, None])
    agg = np.where(valid[:, None], agg, a)

    tv_vals, _ = _tv_forward_backward(batch.dhat, w.charbonnier_eps)
    value = w.beta * float(tv_vals.mean())
    if valid.any():
        l1 = np.abs(a - agg).mean(axis=1)
        value += float(l1[valid].mean())
        K = blur_operator(a.shape[-1], w.mssim_window, w.mssim_sigma)
        S, _ = ssim_forward(ssim_reference_stats(a, K), agg, K)
        r = (w.mssim_window - 1) // 2
        mssim = float(S[..., r:-r, r:-r].mean())
        value += w.alpha * (1.0 - mssim)
    return value
