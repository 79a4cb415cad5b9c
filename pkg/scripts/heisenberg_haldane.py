"""Spin-1 Heisenberg chain: ground state, Haldane gap and magnon branch.

Imaginary-time TDVP at D = 12 from a seeded random tensor, then the
variational dispersion and the linearized TDVP spectrum on the same state.

    python3 scripts/heisenberg_haldane.py [D]
"""

import sys

import numpy as np

from umps import excite, models, tdvp

D = int(sys.argv[1]) if len(sys.argv) > 1 else 12
h = models.heisenberg()

traj = tdvp.ground_state(h, D, np.random.default_rng(0), tol_eta=1e-8)
last = traj.records[-1]
eps, _ = tdvp.error_epsilon_stable(traj.A, traj.fp, h)
print(f"D={D}: {last['step']} steps, energy {last['energy']:.12f}")
print(f"  eta {last['eta']:.2e}  eps {eps:.2e}  variance {tdvp.energy_variance(traj.A, traj.fp, h):.2e}")

# the triplet at pi; spread measures how well SU(2) survives the truncation
res = excite.excitation_spectrum(traj.state, h, np.pi, k=4)
E = res.energies[0]
print(f"\nHaldane gap {E[0]:.8f}, triplet spread {np.ptp(E[:3]):.1e}, next level {E[3]:.4f}")

ps = np.linspace(0, np.pi, 9)
band = excite.excitation_spectrum(traj.state, h, ps).lowest()
print("\n p/pi    variational   linearized")
for p, e in zip(ps, band):
    lin = excite.linearized_tdvp_spectrum(traj.state, h, p).positive[0]
    print(f"{p / np.pi:.3f}   {e:.8f}    {lin:.8f}")
print(f"\n(differences should stay well below eps = {eps:.1e})")
