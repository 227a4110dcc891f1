"""T1 relaxometry of Gd3+ solutions.

Decay curves on the 51-point logarithmic grid (200 ns to 5.5 ms) for
several concentrations, each fitted with the biexponential model. A
single-rate sample is reported through ``combined_rate``.

    python demos/02_t1_relaxometry.py
"""

from nvfluidics import dsp
from nvfluidics import protocols as P

taus = P.t1_grid()
readout = P.ReadoutParams(noise_sigma=0.5, averaging=5000, seed=11)
for conc in (0.0, 1e-6, 1e-5, 1e-4):
    sample = P.GdSample(conc)
    fit = dsp.fit_biexponential(P.run_t1(taus, sample, readout))
    print(f"[Gd] = {conc * 1e6:6.1f} uM   configured {P.gd_relaxation_rate(sample):8.1f} /s   "
          f"fitted {fit['combined_rate']:8.1f} /s   flags {sorted(fit.flags)}")

# two decay channels resolved separately
mix = P.GdSample(1e-5, fast_weight=0.4, fast_rate_ratio=10.0)
fit = dsp.fit_biexponential(P.run_t1(taus, mix, P.ReadoutParams()))
print("two-component sample:", [f"{w:.1f} x {r:.0f} /s" for w, r in P.t1_components(mix)])
print(f"  fitted A1={fit['A1']:.3f} rate_a={fit['rate_a']:.0f}  A2={fit['A2']:.3f} rate_b={fit['rate_b']:.0f}")
