"""Spin up the rotor/stator gap with no through-flow and compare v_theta(r) with Couette flow.

    python demos/couette_profile.py
"""
import numpy as np

from barelycoupled.flow import couette_profile
from barelycoupled.scenario import build_fluid, build_meshes, couette_config
from barelycoupled.triggers import trigger_from_dict

cfg = couette_config()
mesh, _ = build_meshes(cfg)
solver, state, _ = build_fluid(cfg, mesh)
solver.advance(state, trigger_from_dict(cfg.fluid.trigger))

f = cfg.fluid
omega = f.rotor_rpm * 2 * np.pi / 60
x, y = mesh.node_coords.T
r = np.hypot(x, y)
v_theta = (-y * state.velocity[:, 0] + x * state.velocity[:, 1]) / r
exact = couette_profile(r, f.inner_radius, f.outer_radius, omega)

print(f"{solver.steps_taken} steps, t = {state.time:.3f} s")
print("     r    v_theta   analytic")
for radius in np.unique(np.round(r, 6)):
    ring = np.isclose(r, radius)
    print(f"{radius:6.3f} {v_theta[ring].mean():10.3f} {exact[ring].mean():10.3f}")
print(f"max relative error {np.abs(v_theta - exact).max() / np.abs(exact).max():.2e}")
