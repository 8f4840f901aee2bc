#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallbacks.

The workload mirrors the bundled demo scene: ~240 frames x 2049 bins of
2-channel tiles, 3 directional sources + noise, 4 states.  Both paths are
called directly, so no environment flag is needed here; set
ASYNCSEP_NO_NUMBA=1 to make the library itself use the numpy path.

Usage: python benchmarks/bench_kernels.py [--frames N] [--bins F] [--repeat R]
"""

import argparse
import time

import numpy as np

from asyncsep import _kernels as kn


def rand_unit_psd(rng, n):
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    S = A @ A.conj().T
    return S / np.trace(S).real


def build_workload(rng, N, F, C, K, S):
    X = rng.standard_normal((N, F, C)) + 1j * rng.standard_normal((N, F, C))
    Rbar = np.empty((K, F, C, C), complex)
    for k in range(K):
        base = rand_unit_psd(rng, C)
        Rbar[k] = base  # frequency-flat spatial signature is enough here
    var = rng.uniform(0.1, 2.0, (S, K, F))
    noise = rng.uniform(0.2, 1.0, F)
    Smat = np.einsum("skf,kfij->sfij", var, Rbar)
    tr = np.einsum("sfii->sf", Smat).real + noise[None, :]
    diag = noise[None, :] / C + 1e-9 * tr
    idx = np.arange(C)
    Smat[:, :, idx, idx] += diag[:, :, None]
    L = np.linalg.cholesky(Smat)
    logdets = C * np.log(np.pi) + \
        2.0 * np.log(np.diagonal(L, axis1=-2, axis2=-1).real).sum(axis=-1)
    powers = rng.uniform(0.0, 2.0, (N, F, K))
    return X, Rbar, var, noise, L, logdets, powers


def timeit(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--frames", type=int, default=240)
    parser.add_argument("--bins", type=int, default=2049)
    parser.add_argument("--channels", type=int, default=2)
    parser.add_argument("--sources", type=int, default=3)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    N, F, C, K = args.frames, args.bins, args.channels, args.sources
    S = K + 1
    X, Rbar, var, noise, L, logdets, powers = build_workload(rng, N, F, C, K, S)
    tiles = N * F
    print(f"workload: {N} frames x {F} bins x {C} ch, {K}+1 sources, "
          f"{S} states ({tiles} tiles)")
    print(f"numba available: {kn.HAVE_NUMBA}\n")

    rows = []

    def bench(name, numpy_fn, numba_fn):
        t_np = timeit(numpy_fn, args.repeat)
        if numba_fn is not None:
            numba_fn()  # JIT warm-up
            t_nb = timeit(numba_fn, args.repeat)
        else:
            t_nb = None
        rows.append((name, t_np, t_nb))

    out_np = np.zeros((N, F, S))
    bench("state log-likelihood",
          lambda: kn._loglik_accumulate_numpy(X, L, logdets,
                                              np.zeros((N, F, S))),
          (lambda: kn._loglik_accumulate_numba(X, L, logdets,
                                               np.zeros((N, F, S))))
          if kn.HAVE_NUMBA else None)

    bench("per-tile wiener filter",
          lambda: kn._mwf_filter_numpy(X, Rbar, powers, noise),
          (lambda: kn._mwf_filter_numba(X, Rbar, powers, noise,
                                        np.empty((K + 1, N, F, C), complex)))
          if kn.HAVE_NUMBA else None)

    print(f"{'kernel':>24s} {'numpy':>10s} {'numba':>10s} {'speedup':>9s}")
    for name, t_np, t_nb in rows:
        if t_nb is None:
            print(f"{name:>24s} {t_np * 1e3:9.1f}ms {'-':>10s} {'-':>9s}")
        else:
            print(f"{name:>24s} {t_np * 1e3:9.1f}ms {t_nb * 1e3:9.1f}ms "
                  f"{t_np / t_nb:8.1f}x")

    if kn.HAVE_NUMBA:
        a = np.zeros((N, F, S))
        b = np.zeros((N, F, S))
        kn._loglik_accumulate_numpy(X, L, logdets, a)
        kn._loglik_accumulate_numba(X, L, logdets, b)
        print(f"\npath agreement (loglik): max |diff| = {np.abs(a - b).max():.2e}")


if __name__ == "__main__":
    main()
