"""Time the numba kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Both variants are imported side by side (the ``_nb``/``_np`` pairs), so the
``UATRAIN_DISABLE_NUMBA`` flag is irrelevant here. The first numba call is
reported separately because it includes compilation.
"""

import argparse
import time

import numpy as np

from uatrain import kernels
from uatrain._accel import NUMBA_ENABLED


def _time(fn, args, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rng):
    # a full-size enumeration: 8 support points with 4 candidates each
    sup_x = np.arange(8, dtype=np.int64)
    sup_y = np.zeros(8, dtype=np.int64)
    sup_p = rng.dirichlet(np.ones(8))
    nbhd = np.array([[max(0, min(7, x + d)) for d in (-1, 0, 1, 2)] for x in range(8)], dtype=np.int64)
    lengths = np.full(8, 4, dtype=np.int64)
    loss = rng.exponential(size=(8, 1))
    inst = (sup_x, sup_y, sup_p, nbhd, lengths, loss)
    feats = rng.normal(size=(600, 16))
    labels = rng.integers(0, 10, size=600)
    p = rng.dirichlet(np.ones(50), size=2000)
    q = rng.dirichlet(np.ones(50), size=2000)
    return {
        "bruteforce_mapping_max": ("bruteforce_mapping_max", inst),
        "silhouette_samples (n=600)": ("silhouette_samples", (feats, labels, 10)),
        "tv_kl_rows (2000x50)": ("tv_kl_rows", (p, q)),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    print(f"numba available: {NUMBA_ENABLED}")
    print(f"{'kernel':<30}{'numpy s':>12}{'numba s':>12}{'first call s':>14}{'speedup':>10}")
    for label, (name, inputs) in cases(rng).items():
        fast, slow = getattr(kernels, name + "_nb"), getattr(kernels, name + "_np")
        t_np = _time(slow, inputs, args.repeat)
        t_first = _time(fast, inputs, 1)
        t_nb = _time(fast, inputs, args.repeat)
        print(f"{label:<30}{t_np:>12.5f}{t_nb:>12.5f}{t_first:>14.3f}{t_np / t_nb:>10.1f}")


if __name__ == "__main__":
    main()
