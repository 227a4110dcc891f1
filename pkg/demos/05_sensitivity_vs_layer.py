"""Which NV layer thickness gives the most NMR signal?

Monte Carlo over NV positions and proton positions in the 1000 x 100 x 80 um
channel above a 45 um laser spot. Signal per NV falls with depth, while the
number of NVs grows as sqrt(d_NV) in the shot-noise-limited sensitivity,
so the product peaks at intermediate thickness. Reduced counts keep this
under a few seconds; the shipped scenario uses the desk-scale defaults.

    python demos/05_sensitivity_vs_layer.py
"""

from nvfluidics import geomc
from nvfluidics.scenario import sensing_volume

grid = [5.0, 10.0, 20.0, 40.0, 60.0, 80.0, 120.0, 150.0]
curve = geomc.sensitivity_curve(grid, geomc.ChannelGeometry(1000, 100, 80), 45.0,
                                geomc.McParams(100, 1, 300, seed=5), n_bootstrap=200)
for d, s, e in zip(curve.d_nv_um, curve.signal_norm, curve.stderr):
    print(f"d_NV = {d:6.1f} um   S = {s:.3f} +/- {e:.3f}   " + "#" * int(40 * s))
print(f"optimum near {curve.argmax:.0f} um; sensing volume {sensing_volume(45, 80):.1f} pL")
