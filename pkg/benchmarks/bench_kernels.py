"""Timing comparison of the compiled and plain-numpy kernel paths.

Run twice to compare backends:

    OFETSIM_NUMBA=1 python3 benchmarks/bench_kernels.py
    OFETSIM_NUMBA=0 python3 benchmarks/bench_kernels.py

The backend is chosen at import time, so a single process cannot time both.
Results print as a small table; the first compiled call is reported
separately because it includes JIT compilation.
"""

from __future__ import annotations

import os
import time

import numpy as np

from ofetsim import kernels, model
from ofetsim.model import DeviceGeometry, OtftParams


def _bench(label, fn, *args, repeats: int = 7) -> None:
    fn(*args)  # warm-up; includes JIT cost on the compiled path
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    best = min(times)
    print(f"{label:<38s} {best * 1e3:9.3f} ms best of {repeats}")


def main() -> None:
    backend = "numba" if kernels.numba_enabled() else "numpy"
    print(f"backend: {backend}  (OFETSIM_NUMBA={os.environ.get('OFETSIM_NUMBA', '')})")

    p = OtftParams(polarity="p", mu0=2.35e-5, vth=-0.8, ss=0.18, lam=0.015,
                   gamma=0.0, rc=30e3, cox=3.5e-4,
                   geom=DeviceGeometry(w=380e-6, l=35e-6, lov=5e-6))
    rng = np.random.default_rng(42)

    n = 200_000
    vgs = -30.0 * rng.random(n)
    vds = -30.0 * rng.random(n)

    t0 = time.perf_counter()
    model.drain_current(p, vgs[:8], vds[:8])
    print(f"{'first call (includes compile)':<38s} "
          f"{(time.perf_counter() - t0) * 1e3:9.3f} ms")

    _bench(f"intrinsic current, {n:,} points",
           model.drain_current, p, vgs, vds)
    _bench(f"transconductance, {n:,} points",
           model.transconductance, p, vgs, vds)

    m = 20_000
    _bench(f"contact-limited current, {m:,} points",
           model.drain_current_with_contacts, p, vgs[:m], vds[:m])


if __name__ == "__main__":
    main()
