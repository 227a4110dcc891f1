"""Drive a scenario from Python instead of the command line.

Loads the shipped T1 example, overrides its seed, runs it into a temporary
directory, and reproduces the run from its manifest.

    python demos/08_scenario_api.py
"""

import tempfile
from pathlib import Path

from nvfluidics import scenario

print("shipped examples:", ", ".join(scenario.list_examples()))
cfg = scenario.load_example("t1").with_overrides(seed=42)
out = Path(tempfile.mkdtemp())
manifest = scenario.run(cfg, out / "first")
print(f"wrote {sorted(manifest.digests)} in {manifest.wall_time_s:.2f} s")
print("summary:", manifest.summary)
_, mismatched = scenario.reproduce(manifest.path, out / "again")
print("reproduced byte for byte:", not mismatched)
