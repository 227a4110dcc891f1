"""Spin basics and a Rabi experiment.

Shows the NV transition at the working bias, the pi-pulse length at a
40 MHz drive, and a Rabi trace fitted back to its drive frequency.

    python demos/01_spin_and_rabi.py
"""

import numpy as np

from nvfluidics import dsp, spin
from nvfluidics import protocols as P

consts = spin.PhysicsConstants()
for b0 in (0.0, 0.033, 0.1):
    f = spin.nv_transition_frequency(consts, spin.MagneticBias(b0))
    print(f"B0 = {b0 * 1e3:5.1f} mT  ->  ms=0 <-> ms=-1 at {f / 1e9:.4f} GHz")

# a pi pulse about x takes the bright state to the dark state
state = spin.apply_pulse(spin.GROUND, 40e6, P.pi_pulse_duration(40e6), phase=0.0)
print(f"after a pi pulse: z = {state.z:+.6f}")

# noisy Rabi trace with a slow drive decay, then a decaying-sinusoid fit
readout = P.ReadoutParams(noise_sigma=0.5, averaging=2000, seed=3)
trace = P.run_rabi(40e6, np.linspace(0, 400e-9, 401), readout, drive_decay_time=1e-6)
fit = dsp.fit_decaying_sinusoid(trace)
f, df = fit["frequency"], fit.uncertainties["frequency"]
print(f"fitted Rabi frequency {f / 1e6:.3f} +/- {df / 1e6:.3f} MHz, "
      f"t_pi = {P.pi_pulse_duration(f) * 1e9:.2f} ns, decay {fit['decay_time'] * 1e9:.0f} ns")
