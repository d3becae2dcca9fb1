#!/usr/bin/env python3
"""Benchmark the compiled kernels against the NumPy fallback.

Measures the raw batched kernels at several batch sizes, then two
end-to-end estimator cells (Taylor and Monte Carlo over a small grid) per
backend.  Run from the repository root:

    python benchmarks/bench_backends.py
"""

import time

import numpy as np

from uniunc import EuMethod, ModelSpec, init_model
from uniunc import backend
from uniunc.experiments import GridSpec, grid_eval
from uniunc.rng import RngStream

WIDTHS = (2, 64, 64, 64, 2)


def _stack(rng):
    layers = []
    for l in range(len(WIDTHS) - 1):
        din, dout = WIDTHS[l], WIDTHS[l + 1]
        layers.append((rng.normal(size=(dout, din)), rng.normal(size=dout), None,
                       l < len(WIDTHS) - 2))
    return layers


def _time(fn, min_seconds=0.2):
    fn()  # warm up
    reps = 0
    t0 = time.perf_counter()
    while time.perf_counter() - t0 < min_seconds:
        fn()
        reps += 1
    return (time.perf_counter() - t0) / reps


def bench_kernels():
    rng = np.random.default_rng(0)
    layers = _stack(rng)
    print(f"\nraw kernels, net {'x'.join(map(str, WIDTHS))} (microseconds per call)")
    print(f"{'batch':>6} {'op':>9} " + " ".join(f"{n:>10}" for n in backend.available_backends())
          + f" {'speedup':>9}")
    for batch in (1, 20, 50, 1000):
        xs = rng.normal(size=(batch, 2))
        for op, call in (
            ("forward", lambda: backend.forward_batch(layers, xs)),
            ("jacobian", lambda: backend.jacobian_batch(layers, xs)),
        ):
            times = {}
            for name in backend.available_backends():
                backend.set_backend(name)
                times[name] = _time(call) * 1e6
            row = " ".join(f"{times[n]:10.1f}" for n in backend.available_backends())
            if "c" in times:
                row += f" {times['python'] / times['c']:8.1f}x"
            print(f"{batch:>6} {op:>9} {row}")


def bench_cells():
    grid = GridSpec(bounds=((-2.0, 3.0), (-1.5, 2.0)), resolution=(12, 12))
    cases = [
        ("taylor", "mc-dropout", EuMethod.mc_dropout(0.2), 20),
        ("mc", "mc-dropout", EuMethod.mc_dropout(0.2), 20),
        ("mc", "ensemble", EuMethod.ensemble(5), 5),
        ("mc", "flipout", EuMethod.flipout(), 20),
    ]
    print(f"\nestimator cells over a {grid.n_points}-point grid, N=50 (seconds per cell)")
    print(f"{'iu':>7} {'eu':>14} " + " ".join(f"{n:>10}" for n in backend.available_backends()))
    for iu, eu_name, eu, m in cases:
        spec = ModelSpec(layer_widths=WIDTHS, task="classification", eu=eu)
        params = init_model(spec, RngStream(0))
        times = {}
        for name in backend.available_backends():
            backend.set_backend(name)
            t0 = time.perf_counter()
            grid_eval(spec, params, iu, 0.5, grid, m=m, n=50, softmax_draws=50,
                      rng=RngStream(1))
            times[name] = time.perf_counter() - t0
        row = " ".join(f"{times[n]:10.2f}" for n in backend.available_backends())
        print(f"{iu:>7} {eu_name:>14} {row}")


def main():
    print(f"available backends: {backend.available_backends()}")
    if len(backend.available_backends()) < 2:
        print("compiled extension not built; benchmarking the NumPy backend only")
    bench_kernels()
    bench_cells()
    backend.set_backend("c" if "c" in backend.available_backends() else "python")


if __name__ == "__main__":
    main()
