"""S^x spectral function and density of states of the spin-1 Heisenberg chain.

Chebyshev moments of the effective Hamiltonian on the tangent space, Jackson
kernel, momenta on [0, pi] mirrored to the full zone.  Writes ``specfn.csv``,
its moments sidecar and ``dos.csv`` into the output directory.

    python3 scripts/spectral_dos.py [D] [N] [outdir]
"""

import os
import sys
import warnings

import numpy as np

from umps import excite, models, spectral, tdvp

D = int(sys.argv[1]) if len(sys.argv) > 1 else 16
N = int(sys.argv[2]) if len(sys.argv) > 2 else 250
out = sys.argv[3] if len(sys.argv) > 3 else "."
os.makedirs(out, exist_ok=True)

h = models.heisenberg()
Sx = models.spin_operators(1).Sx
traj = tdvp.ground_state(h, D, np.random.default_rng(0), tol_eta=1e-8)
print(f"D={D}: energy {traj.records[-1]['energy']:.10f}")

half = np.linspace(0, np.pi, 9)
omega = np.linspace(0, 6, 1201)
sf = spectral.spectral_function(traj.state, h, Sx, half, N, omega)
magnon = excite.excitation_spectrum(traj.state, h, half).lowest()

print("\n p/pi   weight    peak     magnon   resolution")
for j, p in enumerate(half):
    s = sf.series[j]
    print(f"{p / np.pi:.3f}  {s.weight:.5f}  {omega[np.argmax(sf.values[j])]:.4f}  "
          f"{magnon[j]:.4f}   {s.resolution:.4f}")

spectral.write_spectral_csv(os.path.join(out, "specfn.csv"), sf)
spectral.write_moments_sidecar(os.path.join(out, "specfn.moments.json"), sf)

# reflection symmetry: A(-p, w) = A(p, w)
full = np.concatenate([half, -half[1:-1]])
vals = np.vstack([sf.values, sf.values[1:-1]])
with warnings.catch_warnings(record=True) as caught:
    warnings.simplefilter("always")
    dos = spectral.density_of_states(full, omega, vals, sf.series + sf.series[1:-1])
for w in caught:
    print(f"\nnote: {w.message}")
with open(os.path.join(out, "dos.csv"), "w", encoding="utf-8") as fh:
    fh.write("omega,N\n")
    fh.writelines(f"{w!r},{v!r}\n" for w, v in zip(dos.omega, dos.values))

i = int(np.argmax(dos.values))
print(f"\nDOS maximum at omega = {omega[i]:.3f} (gap {magnon[-1]:.3f}); "
      f"total weight {spectral.integrate(omega, dos.values):.4f}")
