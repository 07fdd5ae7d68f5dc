"""Timing comparison of the numba kernels against the numpy fallbacks.

Run as ``python3 -m mesogas.bench``. Each hot kernel is timed in both
implementations on identical inputs (numba timings exclude the first,
compiling, call) and the results are printed as a small table. The numpy
fallback is what the package uses when numba is unavailable or when
``MESOGAS_NUMBA=0`` is set; this benchmark is the evidence that the two
paths agree numerically while differing in speed.
"""

from __future__ import annotations

import time

import numpy as np

from . import kernels


def _time(fn, *args, repeat: int = 5) -> tuple[float, object]:
    fn(*args)  # warm up (and compile, for the numba path)
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def _row(name, t_np, t_nb, agree):
    speedup = t_np / t_nb if t_nb > 0 else float("inf")
    print(f"{name:34s} numpy {t_np * 1e3:9.2f} ms   numba {t_nb * 1e3:9.2f} ms"
          f"   x{speedup:6.1f}   match={agree}")


def main() -> None:
    rng = np.random.default_rng(0)
    d = 3.0

    print(f"numba enabled in this process: {kernels.NUMBA_ENABLED} "
          "(set MESOGAS_NUMBA=0/1 to choose)")
    if not kernels.NUMBA_ENABLED:
        print("note: with numba disabled the 'numba' column below times the "
              "same loops interpreted by CPython")

    pts = np.ascontiguousarray(rng.normal(size=(600, 3)))
    t_np, a = _time(kernels._np_pairwise_g_sum, pts, d)
    t_nb, b = _time(kernels._loop_pairwise_g_sum, pts, d)
    _row("pairwise_g_sum (600 pts)", t_np, t_nb,
         bool(np.isclose(a, b, rtol=1e-12)))

    t_np, a = _time(kernels._np_min_pairwise_distance, pts)
    t_nb, b = _time(kernels._loop_min_pairwise_distance, pts)
    _row("min_pairwise_distance (600 pts)", t_np, t_nb,
         bool(np.isclose(a, b, rtol=1e-12)))

    n = 32
    shape = np.array([n, n, n], dtype=np.int64)
    density = np.ascontiguousarray(rng.random(n ** 3))
    low = np.full(3, -1.0)
    spacing = np.full(3, 2.0 / n)
    probe = np.ascontiguousarray(rng.uniform(-0.9, 0.9, size=(64, 3)))
    radius = float(np.linalg.norm(spacing))
    t_np, a = _time(kernels._np_grid_potential_at_points,
                    density, low, spacing, shape, probe, radius, d)
    t_nb, b = _time(kernels._loop_grid_potential_at_points,
                    density, low, spacing, shape, probe, radius, d)
    _row(f"grid_potential_at_points ({n}^3)", t_np, t_nb,
         bool(np.allclose(a, b, rtol=1e-10)))

    atoms = np.ascontiguousarray(rng.uniform(-0.9, 0.9, size=(128, 3)))
    t_np, a = _time(kernels._np_atoms_potential_on_grid,
                    atoms, 1.0 / 128, low, spacing, shape, n ** 3, radius, d)
    t_nb, b = _time(kernels._loop_atoms_potential_on_grid,
                    atoms, 1.0 / 128, low, spacing, shape, n ** 3, radius, d)
    _row(f"atoms_potential_on_grid ({n}^3)", t_np, t_nb,
         bool(np.allclose(a, b, rtol=1e-10)))

    N = 64
    n_props = 2000
    x0 = rng.normal(scale=0.3, size=(N, 3))
    sites = rng.integers(0, N, size=n_props)
    normals = rng.standard_normal((n_props, 3))
    unifs = rng.random(n_props)
    ham0 = kernels.pairwise_g_sum(np.ascontiguousarray(x0), d) \
        + N * float((x0 ** 2).sum())

    def run_np():
        x = x0.copy()
        return kernels._np_run_chain_quadratic(
            x, 0.1, 0.5, float(N), 1.0, 3, normals, unifs, sites, ham0)

    def run_nb():
        x = x0.copy()
        return kernels._loop_run_chain_quadratic(
            x, 0.1, 0.5, float(N), 1.0, 3, normals, unifs, sites, ham0)

    t_np, a = _time(run_np)
    t_nb, b = _time(run_nb)
    agree = a[0] == b[0] and np.isclose(a[1], b[1], rtol=1e-10)
    _row(f"run_chain_quadratic (N={N}, {n_props} props)", t_np, t_nb,
         bool(agree))


if __name__ == "__main__":
    main()
