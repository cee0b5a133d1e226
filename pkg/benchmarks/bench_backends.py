#!/usr/bin/env python3
"""Benchmark the compiled kernel core against the numpy fallback.

Times the three hot kernels (hash encode, gradient scatter, view warping)
and one full training step on a synthetic scene. The MLP matrix products go
through BLAS in both backends, so the end-to-end ratio is smaller than the
per-kernel ratios.

Usage: python benchmarks/bench_backends.py [--repeats N]
"""

import argparse
import time

import numpy as np

from ndfield import backend, ndf
from ndfield.lfdata import SceneSpec, synth_lightfield
from ndfield.optim import ReconstructionConfig, init_optimizer, train_step


def timeit(fn, repeats):
    fn()  # warm-up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def bench_kernels(repeats):
    rng = np.random.default_rng(0)
    cfg = ReconstructionConfig(log2_table_size=13, mlp_hidden=64)
    model = ndf.init_model(cfg, domain=(64, 64))
    xs = np.ascontiguousarray(rng.uniform(0, 1, (16384, 2)))
    feats, corners, weights = backend.hash_encode(
        model.tables, model.resolutions, model.dense, xs)
    cot = np.ascontiguousarray(rng.normal(size=feats.shape))
    grad = np.zeros_like(model.tables)

    views = np.ascontiguousarray(rng.uniform(0, 1, (24, 64, 64, 1)))
    deltas = np.ascontiguousarray(rng.uniform(-2, 2, (24, 2)))
    pix = np.ascontiguousarray(rng.uniform(0, 63, (16384, 2)))
    d = np.ascontiguousarray(rng.uniform(-1.5, 1.5, 16384))

    return {
        "hash_encode (16k pts, 6 levels)": timeit(
            lambda: backend.hash_encode(model.tables, model.resolutions,
                                        model.dense, xs), repeats),
        "hash_scatter (16k pts)": timeit(
            lambda: backend.hash_scatter(grad, corners, weights, cot),
            repeats),
        "warp_views (24 views x 16k pts)": timeit(
            lambda: backend.warp_views(views, deltas, pix, d), repeats),
    }


def bench_train_step(repeats):
    spec = SceneSpec("constant_plane", d0=1.5, texture_seed=3)
    lf, _ = synth_lightfield(spec, 64, 64, 5, 5)
    cfg = ReconstructionConfig(
        levels=6, log2_table_size=13, mlp_hidden=64, patch_size=32,
        patches_per_step=4, iterations=10_000, seed=0)
    model = ndf.init_model(cfg, domain=(64, 64))
    opt = init_optimizer(model, cfg)
    counter = iter(range(10_000))
    return {"train_step (64^2, 5x5, 4x32^2 patches)": timeit(
        lambda: train_step(model, lf, opt, cfg, next(counter)), repeats)}


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()

    names = backend.available_backends()
    if "compiled" not in names:
        print("compiled kernels not available; benchmarking numpy only")

    results = {}
    for name in names:
        backend.set_backend(name)
        results[name] = bench_kernels(args.repeats)
        results[name].update(bench_train_step(max(3, args.repeats // 4)))
    backend.set_backend(names[0])

    width = max(len(k) for k in next(iter(results.values())))
    header = f"{'kernel':<{width}}" + "".join(f"{n:>14}" for n in names)
    if len(names) > 1:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for key in next(iter(results.values())):
        row = f"{key:<{width}}"
        for n in names:
            row += f"{results[n][key] * 1e3:>12.2f}ms"
        if len(names) > 1:
            row += f"{results['numpy'][key] / results['compiled'][key]:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
