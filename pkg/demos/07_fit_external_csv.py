"""Fit a measured trace from CSV.

Any two-column CSV with a header (``time_s,value``) can be read back and
fitted. Here a trace is written first so the script is self-contained.

    python demos/07_fit_external_csv.py [path.csv]
"""

import sys
import tempfile
from pathlib import Path

import numpy as np

from nvfluidics import dsp
from nvfluidics import protocols as P

if len(sys.argv) > 1:
    path = Path(sys.argv[1])
else:
    path = Path(tempfile.mkdtemp()) / "rabi.csv"
    trace = P.run_rabi(12e6, np.linspace(0, 500e-9, 251), P.ReadoutParams(noise_sigma=0.3, averaging=500))
    dsp.write_trace_csv(path, trace)
    print(f"wrote {path}")

data = dsp.read_trace_csv(path)
fit = dsp.fit_decaying_sinusoid(data)
for name, value in fit.parameters.items():
    print(f"{name:>11} = {value:.6g} +/- {fit.uncertainties[name]:.2g}")
