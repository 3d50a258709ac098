"""How a quasiparticle burst turns into per-qubit Pauli error rates.

We inject one burst at the centre data qubit of a distance-3 patch, let it
diffuse and decay, and look at what the noise map makes of it.  Run with
``python3 demos/01_burst_to_error_rates.py``.
"""

import numpy as np

from qpdec.chip_qp import DiffusionParams, InjectionEvent, simulate_qp
from qpdec.harness import ExperimentConfig
from qpdec.noise_model import pauli_px_pz
from qpdec.stab_circuit import ROUND_DURATIONS, build_surface_code

cfg = ExperimentConfig()
circ = build_surface_code(cfg.d)
params = DiffusionParams(kappa=cfg.truth_kappa, s=cfg.truth_s)
burst = InjectionEvent(cfg.burst_t0, 4, cfg.burst_amp_max, cfg.burst_spread_min)
traj = simulate_qp(circ.geometry, params, [burst], cfg.T, x0=cfg.truth_baseline)

print(f"{circ.N} qubits, {cfg.T} cycles of 921 ns; burst at cycle {burst.t0} on qubit 4")
print("\nlog10 density at the centre qubit and at a corner, every fifth cycle:")
for t in range(0, cfg.T, 5):
    print(f"  cycle {t + 1:2d}   centre {np.log10(traj.values[4, t]):6.2f}   corner {np.log10(traj.values[0, t]):6.2f}")

# The readout round dominates: it is twenty times longer than a gate round.
dt = ROUND_DURATIONS[-1]
print(f"\nBit/phase-flip probability over the {dt * 1e9:.0f} ns readout round:")
for x in (1e-8, 1e-7, 1e-6, 1e-5, traj.values.max()):
    px, pz = pauli_px_pz(x, dt)
    print(f"  x = {x:8.1e}   p_x = {px:.2e}   p_z = {pz:.2e}")
print("\nBelow about 1e-7 the intrinsic T1/T2 floor hides the quasiparticles;")
print("above it the error rate climbs steeply, which is what the decoders exploit.")
