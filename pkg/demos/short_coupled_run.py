"""A few outer iterations of the gap case on a coarse mesh, printing each diagnostics row.

    python demos/short_coupled_run.py [output_dir]
"""
import sys

from barelycoupled.coupling import DIAGNOSTICS_HEADER
from barelycoupled.scenario import reference_config, run_scenario

cfg = reference_config(fluid__n_azimuthal=64, fluid__trigger={"kind": "step_count", "n": 100},
                       solid__n_azimuthal=32, solid__n_radial=4, coupling__outer_iterations=4,
                       output__vtk_interval=2)
out = sys.argv[1] if len(sys.argv) > 1 else "demo_output"

print(" ".join(f"{name:>11}" for name in DIAGNOSTICS_HEADER))
result = run_scenario(cfg, out, progress=lambda row: print(" ".join(
    f"{v:11d}" if isinstance(v, int) else f"{v:11.4g}" for v in row.as_tuple())))
print(f"status {result.status}; outputs in {result.output_dir}")
if result.status:
    print(result.error)
