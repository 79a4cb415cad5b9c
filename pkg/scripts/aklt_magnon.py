"""The AKLT magnon at p = pi, one block width at a time.

The AKLT state is exact at D = 2, so the only approximation left is the
excitation ansatz.  Widening the block from K = 1 to K = 8 sites gains about
one digit per site.

    python3 scripts/aklt_magnon.py
"""

import time

import numpy as np

from umps import core, excite, models

A, fp = core.fixed_points(models.aklt_tensor())
state = core.UmpsState(A, fp)
h = models.aklt_hamiltonian()

print(f"correlation length {core.correlation_length(A, fp).xi:.12f}  (1/ln 3 = {1 / np.log(3):.12f})")
print(f"energy density     {models.energy_density(A, fp, h):.2e}")
print()

print(" K   E(pi)               E(K) - E(K+1)   seconds")
E = []
for K in range(1, 9):
    t0 = time.perf_counter()
    E.append(excite.excitation_spectrum(state, h, np.pi, K_block=K).lowest()[0])
    dt = time.perf_counter() - t0
    gap = f"{E[-2] - E[-1]:.3e}" if K > 1 else ""
    print(f"{K:2d}   {E[-1]:.15f}   {gap:>13s}   {dt:6.2f}")

diffs = -np.diff(E)
ratio = np.exp(np.polyfit(np.arange(len(diffs)), np.log(diffs), 1)[0])
print(f"\nsingle-site value vs 10/27: {E[0] - 10 / 27:.1e}")
print(f"geometric ratio of successive corrections: {ratio:.3f}")

# the whole dispersion at K = 1; the minimum sits at p = pi
ps = excite.momentum_grid(16)
band = excite.excitation_spectrum(state, h, ps).lowest()
print("\n p/pi    E(p)")
for p, e in zip(ps, band):
    print(f"{p / np.pi:+.3f}  {e:.6f}")
