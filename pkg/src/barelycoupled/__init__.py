"""Barely coupled fluid/solid heat transfer on unstructured triangle meshes.

Modules
-------
mesh       simplex meshes, annulus generator, point location
linsolve   preconditioned conjugate gradients (Jacobi, deflated, factorized)
flow       projection-scheme incompressible flow with temperature
particles  Lagrangian droplet parcels with two-way coupling
heat       theta-scheme conduction in the solid
coupling   interface maps and the barely coupled outer loop
scenario   configuration files, the gap-region case and the CLI
"""

__version__ = "0.1.0"
