"""Build the detector error model of a surface-code memory and decode it.

Uniform noise only: this is the plain BP + OSD pipeline that the sensing
decoders build on.  Larger codes should fail less often.
"""

import time

import numpy as np

from qpdec.bp_osd import TannerGraph, decode
from qpdec.dem_builder import build_dem, uniform_fault_priors
from qpdec.stab_circuit import build_surface_code, sample_shots

p = 1e-3
shots = 1000
for d in (3, 5):
    circ = build_surface_code(d)
    dem = build_dem(circ, d)
    print(f"d={d}: {dem.n_det} detectors, {dem.n_mech} error mechanisms "
          f"({dem.diagnostics['n_faults']} single faults grouped by signature)")
    priors = uniform_fault_priors(dem, p)
    graph = TannerGraph(dem.H)
    dets, obs = sample_shots(circ, d, np.full(3, p), shots, seed=d)
    t0 = time.perf_counter()
    fails = sum(int(np.any(decode(dem, priors, dets[k], graph=graph).observables != obs[k])) for k in range(shots))
    ms = 1e3 * (time.perf_counter() - t0) / shots
    print(f"      logical failures {fails}/{shots}  ({ms:.1f} ms per shot)\n")
