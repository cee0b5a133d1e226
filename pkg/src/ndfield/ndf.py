"""The trainable disparity field: multiresolution hash grid + small MLP.

Normalized [0,1]^2 coordinates are encoded per level by bilinearly blending
the four surrounding corner features (dense corner indexing when the level's
corner grid fits in the table, spatial hash otherwise); the concatenated
features feed a LeakyReLU MLP with a single linear output. Forward,
reverse-mode backward, arbitrary-resolution rendering, and checkpointing
live here.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import DataError
from .lfdata import DisparityMap

CHECKPOINT_VERSION = 1
RENDER_CHUNK = 1 << 17


@dataclass
class HashGridLevel:
    resolution: int
    table: np.ndarray       # (T, F) view into the model's stacked tables
    level_index: int


@dataclass
class MLP:
    weights: list           # per layer, (fan_in, fan_out)
    biases: list            # per layer, (fan_out,)
    negative_slope: float = 0.01


@dataclass
class NDFModel:
    tables: np.ndarray      # (L, T, F) hash-grid features
    resolutions: np.ndarray  # (L,) int64
    dense: np.ndarray       # (L,) bool: dense corner indexing for that level
    mlp: MLP
    domain: tuple           # (H_ref, W_ref) training resolution
    seed: int
    output_scale: float = 1.0

    @property
    def levels(self):
        return [HashGridLevel(int(self.resolutions[i]), self.tables[i], i)
                for i in range(self.tables.shape[0])]

    def param_arrays(self):
        """Flat list of trainable arrays (tables first, then MLP layers)."""
        arrays = [self.tables]
        for w, b in zip(self.mlp.weights, self.mlp.biases):
            arrays.extend((w, b))
        return arrays


@dataclass
class ModelGrads:
    tables: np.ndarray
    weights: list
    biases: list

    def param_arrays(self):
        arrays = [self.tables]
        for w, b in zip(self.weights, self.biases):
            arrays.extend((w, b))
        return arrays


def level_resolutions(cfg):
    """Per-level grid resolutions: round(linspace(res_min, res_max, L))."""
    if cfg.levels < 1:
        raise ValueError("need at least one grid level")
    res = np.rint(np.linspace(cfg.res_min, cfg.res_max, cfg.levels))
    res = res.astype(np.int64)
    if cfg.levels > 1 and np.any(np.diff(res) <= 0):
        raise ValueError(f"level resolutions {res.tolist()} are not "
                         "strictly increasing")
    if res[0] < 1:
        raise ValueError("resolutions must be >= 1")
    return res


def init_model(cfg, domain):
    """Fresh model: tiny uniform hash features, fan-in-scaled MLP weights.

    The feature scale (1e-4) keeps initial predictions well inside |d| < 0.1
    so training starts from an effectively flat field.
    """
    res = level_resolutions(cfg)
    T = 1 << cfg.log2_table_size
    F = cfg.features
    dense = (res + 1) ** 2 <= T
    rng = np.random.default_rng(cfg.seed)
    tables = rng.uniform(-1e-4, 1e-4, size=(cfg.levels, T, F))

    dims = [cfg.levels * F, cfg.mlp_hidden, cfg.mlp_hidden, 1]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))

    return NDFModel(tables=tables, resolutions=res, dense=dense,
                    mlp=MLP(weights, biases), domain=tuple(domain),
                    seed=cfg.seed, output_scale=cfg.output_scale)


def param_count(model):
    return int(sum(a.size for a in model.param_arrays()))


def encode(model, xs):
    """Concatenated multiresolution features for normalized coordinates.

    Accepts a single (2,) point or an (n, 2) batch; coordinates outside
    [0,1]^2 are clamped.
    """
    xs = np.asarray(xs, dtype=np.float64)
    single = xs.ndim == 1
    feats, _, _ = backend.hash_encode(
        model.tables, model.resolutions, model.dense,
        xs.reshape(-1, 2))
    return feats[0] if single else feats


def _leaky(z, slope):
    return np.where(z >= 0.0, z, slope * z)


def forward(model, xs):
    """Predict disparities and keep every intermediate for the backward pass.

    Returns (d (n,), cache).
    """
    xs = np.ascontiguousarray(xs, dtype=np.float64)
    if not np.all(np.isfinite(xs)):
        raise ValueError("non-finite coordinates")
    feats, corners, weights = backend.hash_encode(
        model.tables, model.resolutions, model.dense, xs)
    slope = model.mlp.negative_slope
    w1, w2, w3 = model.mlp.weights
    b1, b2, b3 = model.mlp.biases
    z1 = feats @ w1 + b1
    a1 = _leaky(z1, slope)
    z2 = a1 @ w2 + b2
    a2 = _leaky(z2, slope)
    out = (a2 @ w3 + b3)[:, 0]
    d = out * model.output_scale
    cache = {"feats": feats, "corners": corners, "weights": weights,
             "z1": z1, "a1": a1, "z2": z2, "a2": a2}
    return d, cache


def predict(model, xs):
    """Disparity at normalized coordinates. Pure in (model, xs)."""
    xs = np.asarray(xs, dtype=np.float64)
    single = xs.ndim == 1
    d, _ = forward(model, xs.reshape(-1, 2))
    return d[0] if single else d


def backward(model, cache, cot):
    """Gradients of sum_i cot_i * d(x_i) w.r.t. every trainable parameter."""
    cot = np.asarray(cot, dtype=np.float64)
    if cot.shape != (cache["feats"].shape[0],):
        raise ValueError(f"cotangent shape {cot.shape} does not match the "
                         f"forward batch ({cache['feats'].shape[0]},)")
    slope = model.mlp.negative_slope
    w1, w2, w3 = model.mlp.weights
    feats, a1, a2 = cache["feats"], cache["a1"], cache["a2"]

    g_out = (cot * model.output_scale)[:, None]
    g_w3 = a2.T @ g_out
    g_b3 = g_out.sum(axis=0)
    g_a2 = g_out @ w3.T
    g_z2 = g_a2 * np.where(cache["z2"] >= 0.0, 1.0, slope)
    g_w2 = a1.T @ g_z2
    g_b2 = g_z2.sum(axis=0)
    g_a1 = g_z2 @ w2.T
    g_z1 = g_a1 * np.where(cache["z1"] >= 0.0, 1.0, slope)
    g_w1 = feats.T @ g_z1
    g_b1 = g_z1.sum(axis=0)
    g_feats = g_z1 @ w1.T

    g_tables = np.zeros_like(model.tables)
    backend.hash_scatter(g_tables, cache["corners"], cache["weights"],
                         np.ascontiguousarray(g_feats))
    return ModelGrads(tables=g_tables, weights=[g_w1, g_w2, g_w3],
                      biases=[g_b1, g_b2, g_b3])


def model_backward(model, xs, cot):
    """Recompute the forward pass for xs, then backpropagate cot."""
    xs = np.asarray(xs, dtype=np.float64).reshape(-1, 2)
    _, cache = forward(model, xs)
    return backward(model, cache, cot)


def render_grid(model, out_H, out_W):
    """Evaluate the field at the pixel centers of an out_H x out_W grid.

    Resolution-independent: (i+0.5)/out_W, (j+0.5)/out_H spans the same
    normalized domain the model was trained on.
    """
    if out_H < 1 or out_W < 1:
        raise ValueError("render resolution must be >= 1")
    cx = (np.arange(out_W) + 0.5) / out_W
    cy = (np.arange(out_H) + 0.5) / out_H
    xs = np.empty((out_H * out_W, 2))
    xs[:, 0] = np.tile(cx, out_H)
    xs[:, 1] = np.repeat(cy, out_W)
    values = np.empty(out_H * out_W)
    for start in range(0, xs.shape[0], RENDER_CHUNK):
        stop = min(start + RENDER_CHUNK, xs.shape[0])
        values[start:stop] = predict(model, xs[start:stop])
    return DisparityMap(values.reshape(out_H, out_W).astype(np.float32))


# ---------------------------------------------------------------------------
# Checkpoints: one .npz holding a config echo plus every parameter array.

def save_checkpoint(model, path):
    meta = {
        "version": CHECKPOINT_VERSION,
        "domain": list(model.domain),
        "seed": model.seed,
        "output_scale": model.output_scale,
        "negative_slope": model.mlp.negative_slope,
        "n_layers": len(model.mlp.weights),
    }
    arrays = {
        "meta": np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8),
        "tables": model.tables,
        "resolutions": model.resolutions,
        "dense": model.dense,
    }
    for i, (w, b) in enumerate(zip(model.mlp.weights, model.mlp.biases)):
        arrays[f"w{i}"] = w
        arrays[f"b{i}"] = b
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_checkpoint(path):
    try:
        with np.load(path) as data:
            if "meta" not in data:
                raise DataError(f"{path}: not an ndfield checkpoint")
            meta = json.loads(bytes(data["meta"]).decode("utf-8"))
            if meta.get("version") != CHECKPOINT_VERSION:
                raise DataError(f"{path}: unsupported checkpoint version "
                                f"{meta.get('version')!r}")
            weights = [data[f"w{i}"] for i in range(meta["n_layers"])]
            biases = [data[f"b{i}"] for i in range(meta["n_layers"])]
            return NDFModel(
                tables=data["tables"], resolutions=data["resolutions"],
                dense=data["dense"],
                mlp=MLP(weights, biases, meta["negative_slope"]),
                domain=tuple(meta["domain"]), seed=meta["seed"],
                output_scale=meta["output_scale"])
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: cannot read checkpoint ({exc})") from exc
