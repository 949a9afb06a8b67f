"""
Running experiments through the harness
=======================================

The same entry points back the ``sgdvar`` command line. A config is a nested
table; anything omitted takes its default.
"""

import json
import tempfile
from pathlib import Path

from sgdvar import harness

cfg = harness.ExperimentConfig.from_dict({
    "seed": 1,
    "idealized": {"n_sets": 2, "grid_size": 4, "heat_sets": [0], "heat_resolution": 40},
})
out = Path(tempfile.mkdtemp())
table, heat = harness.run_idealized(cfg, out=out)
for row in table.rows:
    print(row["algorithm"], round(row["mean_excess"], 4), "+/-", round(row["std_sets"], 4))

print(sorted(p.name for p in out.iterdir()))
print(json.loads((out / "manifest.json").read_text())["seed_derivation"])
print("density outside the domain:", heat[0].outside)
