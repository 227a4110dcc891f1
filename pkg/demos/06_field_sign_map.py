"""Sign of the projected proton field across the channel cross-section.

With the bias along the surface normal, spins above the spot pull the NV
signal one way and spins near the side walls pull it the other way, which
is why a tall channel partly cancels its own signal.

    python demos/06_field_sign_map.py
"""

from nvfluidics import geomc

sm = geomc.sign_map(geomc.ChannelGeometry(), geomc.SensorCylinder(45, 50), n_y=24, n_z=10,
                    bias_axis=geomc.SURFACE_NORMAL_AXIS, n_nv_samples=2000, seed=6)
print("z (um)  cross-section, y from -50 to +50 um ('+' positive, '-' negative)")
for z, row in reversed(list(zip(sm.z_um, sm.sign))):
    print(f"{z:6.1f}  " + "".join("+" if s > 0 else "-" for s in row))
print(f"positive fraction {(sm.sign > 0).mean():.2f}")
