"""Compares the compiled kernel backend against the numpy fallback.

Times the two hot paths (batch forward scoring and full
backprop-through-time) over a synthetic workload and prints a small
table. Run from the repo root:

    python3 benchmarks/bench_kernels.py [--d 64] [--d-p 64] [--t 512] [--reps 20]
"""

import argparse
import time

import numpy as np

from rom._kernels import available_backends, get_backend
from rom.detector import DetectorConfig, init_params


def time_op(fn, reps):
    fn()  # warm up
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--d", type=int, default=64)
    parser.add_argument("--d-p", type=int, default=64)
    parser.add_argument("--t", type=int, default=512)
    parser.add_argument("--reps", type=int, default=20)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    params = init_params(DetectorConfig(d=args.d, d_p=args.d_p, seed=0)).as_tuple()
    prompt = rng.normal(size=(8, args.d))
    frames = rng.normal(size=(args.t, args.d))
    labels = rng.integers(0, 2, size=args.t).astype(float)

    backends = available_backends()
    print(f"workload: d={args.d} d_p={args.d_p} T={args.t} (best of {args.reps})")
    print(f"{'backend':<10} {'forward':>12} {'fwd tok/s':>12} {'loss+grad':>12} {'bptt tok/s':>12}")
    results = {}
    for name in backends:
        backend = get_backend(name)
        fwd = time_op(lambda: backend.forward_scores(params, prompt, frames), args.reps)
        bwd = time_op(lambda: backend.loss_and_grad(params, prompt, frames, labels), args.reps)
        results[name] = (fwd, bwd)
        print(
            f"{name:<10} {fwd * 1e3:>10.2f}ms {args.t / fwd:>12.0f} "
            f"{bwd * 1e3:>10.2f}ms {args.t / bwd:>12.0f}"
        )
    if len(results) == 2:
        f_py, b_py = results["python"]
        f_cy, b_cy = results["cython"]
        print(f"\nspeedup (python/cython): forward {f_py / f_cy:.1f}x, loss+grad {b_py / b_cy:.1f}x")

    ref = get_backend("python")
    active = get_backend(backends[-1])
    p_ref = ref.forward_scores(params, prompt, frames)
    p_act = active.forward_scores(params, prompt, frames)
    print(f"max |p_python - p_{backends[-1]}| = {float(np.max(np.abs(p_ref - p_act))):.2e}")


if __name__ == "__main__":
    main()
