"""Light-field containers, dataset I/O, and synthetic ground-truth scenes.

A light field is stored as a (rows, cols, H, W, C) stack of sub-aperture
views in [0,1]. Disparity maps travel as float32 (the PFM payload
precision), everything else is float64.
"""

import os
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .errors import DataError

# Generated scenes keep |disparity| * max|baseline| below this fraction of
# the image side so warped samples stay comfortably inside the frame.
MAX_SHIFT_FRACTION = 0.25

LUMA = np.array([0.2989, 0.5870, 0.1140])


@dataclass(frozen=True)
class ViewCoordinate:
    """Position in the view grid: u = column, v = row."""
    u: int
    v: int


@dataclass
class DisparityMap:
    """Disparity in pixels per unit view offset, with a validity mask."""
    values: np.ndarray          # (H, W) float32
    valid: np.ndarray = None    # (H, W) bool

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise ValueError("disparity values must be 2D")
        if self.valid is None:
            self.valid = np.isfinite(self.values)
        else:
            self.valid = np.asarray(self.valid, dtype=bool)
            if self.valid.shape != self.values.shape:
                raise ValueError("validity mask shape mismatch")
        if not np.all(np.isfinite(self.values[self.valid])):
            raise ValueError("non-finite disparity inside the valid region")

    @property
    def shape(self):
        return self.values.shape


@dataclass
class LightField:
    """4D two-plane light field: views[v, u] is an (H, W, C) image in [0,1]."""
    views: np.ndarray           # (rows, cols, H, W, C) float64
    center: ViewCoordinate
    disparity_scale: float = 1.0

    def __post_init__(self):
        self.views = np.ascontiguousarray(self.views, dtype=np.float64)
        if self.views.ndim != 5:
            raise ValueError("views must be a (rows, cols, H, W, C) stack")
        if self.views.shape[4] not in (1, 3):
            raise ValueError("views must have 1 or 3 channels")
        if self.views.min() < 0.0 or self.views.max() > 1.0:
            raise ValueError("view values must lie in [0, 1]")
        rows, cols = self.views.shape[:2]
        if not (0 <= self.center.u < cols and 0 <= self.center.v < rows):
            raise ValueError("center view outside the grid")

    @property
    def grid_rows(self):
        return self.views.shape[0]

    @property
    def grid_cols(self):
        return self.views.shape[1]

    @property
    def image_shape(self):
        return self.views.shape[2:]  # (H, W, C)

    @property
    def center_view(self):
        return self.views[self.center.v, self.center.u]

    @cached_property
    def offcenter_stack(self):
        """Non-center views as ((V,H,W,C) stack, (V,2) deltas, view coords).

        Views are ordered by row-major grid index with the center skipped;
        deltas are (u - u0, v - v0) in grid steps.
        """
        stack, deltas, coords = [], [], []
        for v in range(self.grid_rows):
            for u in range(self.grid_cols):
                if u == self.center.u and v == self.center.v:
                    continue
                stack.append(self.views[v, u])
                deltas.append((u - self.center.u, v - self.center.v))
                coords.append(ViewCoordinate(u, v))
        return (np.ascontiguousarray(stack),
                np.asarray(deltas, dtype=np.float64),
                coords)

    def to_grayscale(self):
        """Luma-converted copy; no-op for single-channel fields."""
        if self.views.shape[4] == 1:
            return self
        gray = np.tensordot(self.views, LUMA, axes=([4], [0]))[..., None]
        return LightField(np.clip(gray, 0.0, 1.0), self.center,
                          self.disparity_scale)


def view_image(lf, vc):
    """The stored (H, W, C) image at view coordinate vc."""
    if not (0 <= vc.u < lf.grid_cols and 0 <= vc.v < lf.grid_rows):
        raise IndexError(f"view ({vc.u}, {vc.v}) outside "
                         f"{lf.grid_rows}x{lf.grid_cols} grid")
    return lf.views[vc.v, vc.u]


# ---------------------------------------------------------------------------
# PFM I/O (grayscale "Pf" only; negative scale = little-endian, bottom-up rows)

def read_pfm(path):
    with open(path, "rb") as f:
        data = f.read()

    def next_token(pos):
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError(f"{path}: truncated PFM header")
        return data[start:pos], pos

    magic, pos = next_token(0)
    if magic == b"PF":
        raise DataError(f"{path}: color PFM is not supported")
    if magic != b"Pf":
        raise DataError(f"{path}: malformed PFM header {magic!r}")
    try:
        w_tok, pos = next_token(pos)
        h_tok, pos = next_token(pos)
        s_tok, pos = next_token(pos)
        width, height = int(w_tok), int(h_tok)
        scale = float(s_tok)
    except (ValueError, DataError) as exc:
        raise DataError(f"{path}: malformed PFM header ({exc})") from exc
    if width <= 0 or height <= 0 or not np.isfinite(scale) or scale == 0.0:
        raise DataError(f"{path}: malformed PFM header values")

    payload = data[pos + 1:]  # single whitespace byte separates header/body
    count = width * height
    if len(payload) < 4 * count:
        raise DataError(f"{path}: truncated PFM payload "
                        f"({len(payload)} bytes, need {4 * count})")
    dtype = "<f4" if scale < 0 else ">f4"
    values = np.frombuffer(payload[:4 * count], dtype=dtype)
    values = values.reshape(height, width).astype("<f4")
    return DisparityMap(np.flipud(values).copy())


def write_pfm(dmap, path):
    values = dmap.values
    if not np.all(np.isfinite(values[dmap.valid])):
        raise ValueError("refusing to write non-finite valid disparities")
    header = f"Pf\n{values.shape[1]} {values.shape[0]}\n-1.0\n".encode("ascii")
    body = np.flipud(values).astype("<f4").tobytes()
    with open(path, "wb") as f:
        f.write(header)
        f.write(body)


# ---------------------------------------------------------------------------
# View images (PNG, 8- or 16-bit, normalized to [0,1] on load)

def read_view_image(path):
    try:
        img = Image.open(path)
        img.load()
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise DataError(f"{path}: cannot decode image ({exc})") from exc
    if img.mode == "RGBA":
        img = img.convert("RGB")
    arr = np.asarray(img)
    if img.mode in ("I;16", "I"):
        arr = arr.astype(np.float64) / 65535.0
    elif arr.dtype == np.uint8:
        arr = arr.astype(np.float64) / 255.0
    else:
        raise DataError(f"{path}: unsupported image mode {img.mode}")
    if arr.ndim == 2:
        arr = arr[..., None]
    return np.clip(arr, 0.0, 1.0)


def write_view_image(arr, path):
    """Save an (H, W, 1|3) float image in [0,1]; 16-bit gray, 8-bit RGB."""
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        data = np.round(arr[:, :, 0] * 65535.0).astype(np.uint16)
        Image.fromarray(data).save(path)
    elif arr.ndim == 3 and arr.shape[2] == 3:
        data = np.round(arr * 255.0).astype(np.uint8)
        Image.fromarray(data, mode="RGB").save(path)
    else:
        raise ValueError("expected an (H, W, 1|3) image")


# ---------------------------------------------------------------------------
# Manifest-driven ingestion

MANIFEST_KEYS = {"grid_rows", "grid_cols", "views", "gt", "disparity_scale"}


def _parse_keyvalue(path, allowed):
    entries = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            key = key.strip()
            if key not in allowed:
                raise DataError(f"{path}:{lineno}: unknown key {key!r}")
            entries.append((key, value.strip()))
    return entries


def load_scene(manifest_path):
    """Load (LightField, ground truth or None) from a key-value manifest.

    Keys: grid_rows, grid_cols, views (comma-separated, may repeat; row-major
    order), optional gt (PFM path), optional disparity_scale. Paths are
    relative to the manifest.
    """
    entries = _parse_keyvalue(manifest_path, MANIFEST_KEYS)
    base = os.path.dirname(os.path.abspath(manifest_path))
    rows = cols = None
    scale = 1.0
    gt_path = None
    view_paths = []
    for key, value in entries:
        if key == "grid_rows":
            rows = int(value)
        elif key == "grid_cols":
            cols = int(value)
        elif key == "disparity_scale":
            scale = float(value)
        elif key == "gt":
            gt_path = os.path.join(base, value)
        elif key == "views":
            view_paths.extend(p.strip() for p in value.split(",") if p.strip())
    if rows is None or cols is None:
        raise DataError(f"{manifest_path}: grid_rows and grid_cols are required")
    if rows < 1 or cols < 1:
        raise DataError(f"{manifest_path}: grid dimensions must be positive")
    if len(view_paths) != rows * cols:
        raise DataError(f"{manifest_path}: {len(view_paths)} views declared "
                        f"for a {rows}x{cols} grid (need {rows * cols})")

    images = []
    shape = None
    for rel in view_paths:
        full = os.path.join(base, rel)
        if not os.path.exists(full):
            raise DataError(f"{manifest_path}: missing view file {full}")
        img = read_view_image(full)
        if shape is None:
            shape = img.shape
        elif img.shape != shape:
            raise DataError(f"{manifest_path}: view {rel} has shape "
                            f"{img.shape}, expected {shape}")
        images.append(img)

    stack = np.stack(images).reshape(rows, cols, *shape)
    center = ViewCoordinate((cols - 1) // 2, (rows - 1) // 2)
    lf = LightField(stack, center, scale)
    gt = read_pfm(gt_path) if gt_path else None
    if gt is not None and gt.shape != shape[:2]:
        raise DataError(f"{manifest_path}: ground truth shape {gt.shape} "
                        f"does not match views {shape[:2]}")
    return lf, gt


def load_lightfield(manifest_path):
    """Load just the LightField described by a manifest."""
    return load_scene(manifest_path)[0]


def save_lightfield(lf, gt, out_dir, manifest_name="manifest.txt"):
    """Write views + manifest (+ gt.pfm) so load_lightfield can read it back."""
    os.makedirs(out_dir, exist_ok=True)
    names = []
    for v in range(lf.grid_rows):
        for u in range(lf.grid_cols):
            name = f"view_{v:02d}_{u:02d}.png"
            write_view_image(lf.views[v, u], os.path.join(out_dir, name))
            names.append(name)
    lines = [f"grid_rows = {lf.grid_rows}", f"grid_cols = {lf.grid_cols}",
             f"disparity_scale = {lf.disparity_scale}"]
    lines += [f"views = {name}" for name in names]
    if gt is not None:
        write_pfm(gt, os.path.join(out_dir, "gt.pfm"))
        lines.append("gt = gt.pfm")
    path = os.path.join(out_dir, manifest_name)
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    return path


# ---------------------------------------------------------------------------
# Synthetic scenes with analytic ground truth

SCENE_KINDS = ("constant_plane", "slanted_plane", "step_occluder", "two_layer")


@dataclass
class SceneSpec:
    """Procedural test scene: smooth random texture over analytic disparity.

    Geometry parameters are in reference-view pixel units. rect/edge default
    to None and are placed relative to the image size at generation time.
    """
    kind: str
    d0: float = 0.0                      # constant_plane / slanted_plane base
    gradient: tuple = (0.0, 0.0)         # slanted_plane (gx, gy) per pixel
    fg: float = 1.5                      # near-layer disparity
    bg: float = 0.0                      # far-layer disparity
    rect: tuple = None                   # two_layer (x0, y0, x1, y1)
    edge: float = None                   # step_occluder column
    texture_seed: int = 0
    noise_sigma: float = 0.0
    texture_smoothness: float = 2.5      # gaussian blur sigma of the texture

    def __post_init__(self):
        if self.kind not in SCENE_KINDS:
            raise ValueError(f"unknown scene kind {self.kind!r}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")

    def disparity_range(self, H, W):
        """Declared [d_min, d_max] of the generated ground truth."""
        if self.kind == "constant_plane":
            return self.d0, self.d0
        if self.kind == "slanted_plane":
            gx, gy = self.gradient
            corners = [self.d0 + gx * px + gy * py
                       for px in (0, W - 1) for py in (0, H - 1)]
            return min(corners), max(corners)
        return min(self.fg, self.bg), max(self.fg, self.bg)


def _smooth_texture(rng, shape, sigma):
    """Band-limited random texture in [0.1, 0.9]."""
    tex = gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    lo, hi = tex.min(), tex.max()
    if hi - lo < 1e-12:
        return np.full(shape, 0.5)
    return 0.1 + 0.8 * (tex - lo) / (hi - lo)


def _sample_texture(tex, px, py, offset):
    """Bilinear lookup of a margin-padded texture at reference coordinates."""
    h, w = tex.shape
    x = px + offset
    y = py + offset
    x0 = np.clip(np.floor(x).astype(np.int64), 0, w - 2)
    y0 = np.clip(np.floor(y).astype(np.int64), 0, h - 2)
    fx = x - x0
    fy = y - y0
    return ((1 - fx) * (1 - fy) * tex[y0, x0] + fx * (1 - fy) * tex[y0, x0 + 1]
            + (1 - fx) * fy * tex[y0 + 1, x0] + fx * fy * tex[y0 + 1, x0 + 1])


def _fg_region(spec, px, py, H, W):
    if spec.kind == "step_occluder":
        edge = spec.edge if spec.edge is not None else W / 2.0
        return px >= edge
    rect = spec.rect if spec.rect is not None else (
        W / 4.0, H / 4.0, 3.0 * W / 4.0, 3.0 * H / 4.0)
    x0, y0, x1, y1 = rect
    return (px >= x0) & (px < x1) & (py >= y0) & (py < y1)


def scene_disparity(spec, H, W, out_H=None, out_W=None):
    """Analytic ground-truth disparity, optionally on a finer pixel grid.

    (H, W) is the reference resolution the scene geometry is expressed in;
    the map is evaluated at the pixel centers of an (out_H, out_W) grid
    mapped into the same normalized domain.
    """
    out_H = H if out_H is None else out_H
    out_W = W if out_W is None else out_W
    px = ((np.arange(out_W) + 0.5) * W / out_W - 0.5)[None, :]
    py = ((np.arange(out_H) + 0.5) * H / out_H - 0.5)[:, None]
    px, py = np.broadcast_arrays(px, py)
    if spec.kind == "constant_plane":
        d = np.full((out_H, out_W), spec.d0)
    elif spec.kind == "slanted_plane":
        gx, gy = spec.gradient
        d = spec.d0 + gx * px + gy * py
    else:
        d = np.where(_fg_region(spec, px, py, H, W), spec.fg, spec.bg)
    return DisparityMap(d.astype(np.float32))


def synth_lightfield(spec, H, W, rows, cols):
    """Generate a light field whose views exactly satisfy the warp relation.

    Each view is the center texture resampled through the inverse of
    y = x + delta*d(x): exact closed form for constant and slanted planes,
    depth-ordered two-layer compositing (nearer disparity wins) for the
    occluder scenes. Returns (LightField, center-view DisparityMap).
    """
    if rows % 2 == 0 or cols % 2 == 0:
        raise ValueError("view grid dimensions must be odd")
    if rows < 1 or cols < 1 or H < 2 or W < 2:
        raise ValueError("scene dimensions too small")

    u0, v0 = (cols - 1) // 2, (rows - 1) // 2
    max_delta = max(u0, v0, cols - 1 - u0, rows - 1 - v0)
    d_lo, d_hi = spec.disparity_range(H, W)
    max_shift = max(abs(d_lo), abs(d_hi)) * max_delta
    if max_shift > MAX_SHIFT_FRACTION * min(H, W):
        raise DataError(
            f"disparity x baseline shift {max_shift:.1f}px exceeds the "
            f"{MAX_SHIFT_FRACTION:.0%} margin of a {H}x{W} image")

    margin = int(np.ceil(max_shift)) + 2
    rng = np.random.default_rng(spec.texture_seed)
    tex_shape = (H + 2 * margin, W + 2 * margin)
    tex_bg = _smooth_texture(rng, tex_shape, spec.texture_smoothness)
    tex_fg = _smooth_texture(rng, tex_shape, spec.texture_smoothness)

    qx = np.arange(W, dtype=np.float64)[None, :]
    qy = np.arange(H, dtype=np.float64)[:, None]
    qx, qy = np.broadcast_arrays(qx, qy)

    views = np.empty((rows, cols, H, W, 1))
    for v in range(rows):
        for u in range(cols):
            du, dv = float(u - u0), float(v - v0)
            if spec.kind == "constant_plane":
                img = _sample_texture(tex_bg, qx - du * spec.d0,
                                      qy - dv * spec.d0, margin)
            elif spec.kind == "slanted_plane":
                gx, gy = spec.gradient
                det = 1.0 + du * gx + dv * gy
                if det <= 0.1:
                    raise DataError("slanted plane too steep for this grid")
                # invert y = (I + delta g^T) x + delta d0
                rx = qx - du * spec.d0
                ry = qy - dv * spec.d0
                sx = ((1.0 + dv * gy) * rx - du * gy * ry) / det
                sy = (-dv * gx * rx + (1.0 + du * gx) * ry) / det
                img = _sample_texture(tex_bg, sx, sy, margin)
            else:
                fx = qx - du * spec.fg
                fy = qy - dv * spec.fg
                in_fg = _fg_region(spec, fx, fy, H, W)
                fg_img = _sample_texture(tex_fg, fx, fy, margin)
                bg_img = _sample_texture(tex_bg, qx - du * spec.bg,
                                         qy - dv * spec.bg, margin)
                img = np.where(in_fg, fg_img, bg_img)
            views[v, u, :, :, 0] = img

    if spec.noise_sigma > 0:
        noise_rng = np.random.default_rng([spec.texture_seed, 0x6E6F6973])
        views = views + noise_rng.normal(0.0, spec.noise_sigma, views.shape)
    views = np.clip(views, 0.0, 1.0)

    lf = LightField(views, ViewCoordinate(u0, v0))
    return lf, scene_disparity(spec, H, W)
