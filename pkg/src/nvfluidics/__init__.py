"""Simulation toolkit for NV-ensemble NMR on microfluidic samples.

Modules
-------
spin
    Two-level Bloch model of the NV electron spin.
protocols
    Pulse sequences: Rabi, T1 relaxometry, XY8 correlation spectroscopy, CASR.
dsp
    Spectra, curve fits and CSV trace I/O.
geomc
    Monte Carlo estimate of the NV-ensemble signal from a fluid channel.
scenario
    TOML scenario files, dispatch, outputs and run manifests.
"""

__version__ = "0.1.0"
