"""Correlation spectroscopy of 19F at 31 mT.

Two XY8-32 blocks tuned to the Larmor frequency are separated by a swept
delay. The correlation trace oscillates at the nuclear frequency, and its
spectrum peaks at the alias of that frequency on the 0.2 us grid.

    python demos/03_correlation_spectroscopy.py
"""

from nvfluidics import dsp, spin
from nvfluidics import protocols as P

f19 = spin.larmor_frequency(spin.GAMMA_NUCLEAR["19F"], 0.031)
fid = P.FidModel(f19, decay_time_T2star=200e-6, amplitude=50e-9)
trace = P.run_correlation(P.correlation_grid(), fid, tau_interpulse=1 / (2 * f19), n_pulses=32,
                          noise_sigma=0.02, averaging=80_000, seed=1)
spec = dsp.power_spectrum(trace, remove_mean=True)
peak = spec.peak_frequency(fmin=spec.df)
print(f"19F Larmor {f19 / 1e6:.4f} MHz; expected peak {P.alias_frequency(f19, 1 / trace.dt) / 1e6:.4f} MHz")
print(f"spectrum peak {peak / 1e6:.4f} MHz (bin {spec.df / 1e3:.1f} kHz)")
fit = dsp.fit_lorentzian(spec, 1, peak - 50e3, peak + 50e3)
print(f"Lorentzian centre {fit['center_1'] / 1e6:.5f} MHz, FWHM {fit['fwhm_1'] / 1e3:.2f} kHz")
