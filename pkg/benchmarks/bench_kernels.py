"""Time each kernel under numba and pure numpy and check they agree.

    python3 benchmarks/bench_kernels.py [--paths 10000] [--steps 512] [--repeat 3]
"""
import argparse
import time

import numpy as np

from mrtkit import _accel
from mrtkit.kernels import IMPLEMENTATIONS


def _inputs(P, M, rng):
    dt = 1.0 / M
    dW = rng.standard_normal((P, M)) * np.sqrt(dt)
    counts = rng.poisson(2.0, P)
    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    times = np.concatenate([np.sort(rng.uniform(0, 1, c)) for c in counts])
    idx = IMPLEMENTATIONS["snap_jump_indices"][1](times, offsets, dt, M)
    arrivals = np.cumsum(rng.exponential(0.5, (P, 4)), axis=1)
    return {
        "iterated_integrals": (dW, np.ones(M), 3),
        "snap_jump_indices": (times, offsets, dt, M),
        "jump_channel": (idx, offsets, np.ones(len(idx)), M),
        "stage_compensator": (arrivals, np.array([2.0, 3.0, 1.0, 0.5]), np.linspace(0, 1, M + 1)),
        "ito_sum": (rng.standard_normal((P, M)), dW),
    }


def _best(fn, args, repeat):
    out, best = None, np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return out, best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=10_000)
    ap.add_argument("--steps", type=int, default=512)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    inputs = _inputs(args.paths, args.steps, np.random.default_rng(0))
    if not _accel.HAVE_NUMBA:
        print("numba is not installed; timing the numpy kernels only")
    print(f"{'kernel':22s} {'numpy [s]':>10s} {'numba [s]':>10s} {'speedup':>8s} {'max |diff|':>11s}")
    for name, (fast, slow) in IMPLEMENTATIONS.items():
        ref, t_np = _best(slow, inputs[name], args.repeat)
        if not _accel.HAVE_NUMBA:
            print(f"{name:22s} {t_np:10.4f}")
            continue
        fast(*inputs[name])  # compile outside the timing
        got, t_nb = _best(fast, inputs[name], args.repeat)
        diff = float(np.max(np.abs(np.asarray(got, dtype=float) - np.asarray(ref, dtype=float)))) if np.size(ref) else 0.0
        print(f"{name:22s} {t_np:10.4f} {t_nb:10.4f} {t_np / t_nb:8.1f} {diff:11.2e}")


if __name__ == "__main__":
    main()
