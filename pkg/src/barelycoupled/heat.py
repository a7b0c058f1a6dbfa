"""Transient heat conduction in the solid with the theta scheme.

Per step ``(C/dt + theta K) dT = -K T + F_vol + F_flux`` with lumped heat
capacity ``C``; fixed-temperature boundaries are imposed strongly on the
increment.  At fixed-temperature nodes the residual of the same equation is
the boundary heat flow needed to hold the temperature (the consistent
reaction flux), which is what a Dirichlet interface exports.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import fem
from .linsolve import SolverConfig, SolverError, pcg_solve
from .mesh import SimplexMesh
from .triggers import ProgressRecord, StepCount, StopTrigger

__all__ = [
    "HeatError",
    "SolidMaterial",
    "SolidProps",
    "SolidState",
    "HeatSchemeParams",
    "HeatSolver",
]


class HeatError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolidMaterial:
    density: float
    specific_heat: float
    conductivity: float
    name: str = ""

    def __post_init__(self):
        for attr in ("density", "specific_heat", "conductivity"):
            if not getattr(self, attr) > 0:
                raise ValueError(f"solid {attr} must be positive, got {getattr(self, attr)}")


class SolidProps:
    """Materials plus a per-element material id."""

    def __init__(self, materials, material_ids):
        self.materials = list(materials)
        self.material_ids = np.asarray(material_ids, dtype=np.int64)
        if not self.materials:
            raise ValueError("at least one solid material is required")
        if self.material_ids.min() < 0 or self.material_ids.max() >= len(self.materials):
            raise ValueError("material id out of range")

    @classmethod
    def uniform(cls, material: SolidMaterial, n_elements: int):
        return cls([material], np.zeros(n_elements, dtype=np.int64))

    def per_element(self, attr):
        return np.array([getattr(m, attr) for m in self.materials])[self.material_ids]


@dataclass
class SolidState:
    temperature: np.ndarray
    volumetric_load: np.ndarray
    interface_flux: np.ndarray
    time: float = 0.0

    def copy(self):
        return SolidState(self.temperature.copy(), self.volumetric_load.copy(),
                          self.interface_flux.copy(), self.time)


@dataclass
class HeatSchemeParams:
    theta: float = 1.0
    dt: float = 10.0
    rel_tolerance: float = 1e-10

    def __post_init__(self):
        if not 0.5 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0.5, 1], got {self.theta}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")


class HeatSolver:
    """Theta-scheme conduction on one mesh.

    ``fixed`` maps boundary tags to fixed temperatures.  ``interface_tag``
    names the coupled boundary: it receives either a flux (Neumann, the
    default) or, after :meth:`set_interface_temperature`, a temperature.
    All other boundaries are insulated.
    """

    def __init__(self, mesh: SimplexMesh, props: SolidProps, params: HeatSchemeParams | None = None,
                 fixed: dict | None = None, interface_tag: str | None = None):
        self.mesh = mesh
        self.props = props
        self.params = params or HeatSchemeParams()
        if len(props.material_ids) != mesh.n_elements:
            raise ValueError("one material id per element required")
        self.interface_tag = interface_tag
        self.interface_facets = (mesh.facets_with_tag(interface_tag) if interface_tag
                                 else np.zeros(0, dtype=np.int64))
        self.interface_nodes = (mesh.nodes_with_tag(interface_tag) if interface_tag
                                else np.zeros(0, dtype=np.int64))
        rc = props.per_element("density") * props.per_element("specific_heat")
        self.capacity = np.bincount(mesh.elements.ravel(), np.repeat(rc * mesh.areas / 3.0, 3),
                                    mesh.n_nodes)
        self.stiffness = fem.stiffness_matrix(mesh, props.per_element("conductivity"))
        self.fixed_tags = dict(fixed or {})
        self._restore_fixed_tags()
        self.interface_dirichlet = False
        self.last_reaction = np.zeros(mesh.n_nodes)

    # -- state and loads --------------------------------------------------------
    def initial_state(self, temperature=300.0, volumetric_load=0.0) -> SolidState:
        mesh = self.mesh
        state = SolidState(np.full(mesh.n_nodes, float(temperature)),
                           np.broadcast_to(np.asarray(volumetric_load, dtype=float), (mesh.n_elements,)).copy(),
                           np.zeros(len(mesh.boundary_facets)))
        self._apply_fixed(state)
        return state

    def set_interface_flux(self, state: SolidState, facet_flux):
        """Heat flux into the solid on the interface facets (erg/(cm^2 s))."""
        state.interface_flux[:] = 0.0
        state.interface_flux[self.interface_facets] = facet_flux
        if self.interface_dirichlet:
            self.interface_dirichlet = False
            self._restore_fixed_tags()

    def _restore_fixed_tags(self):
        self.fixed = np.zeros(self.mesh.n_nodes, dtype=bool)
        self.fixed_values = np.zeros(self.mesh.n_nodes)
        for tag, value in self.fixed_tags.items():
            nodes = self.mesh.nodes_with_tag(tag)
            self.fixed[nodes] = True
            self.fixed_values[nodes] = value

    def set_interface_temperature(self, state: SolidState, node_values):
        """Hold the interface nodes (``interface_nodes`` order) at given temperatures."""
        self.fixed[self.interface_nodes] = True
        self.fixed_values[self.interface_nodes] = node_values
        self.interface_dirichlet = True
        state.interface_flux[:] = 0.0
        self._apply_fixed(state)

    def _apply_fixed(self, state):
        state.temperature[self.fixed] = self.fixed_values[self.fixed]

    def load_vector(self, state: SolidState) -> np.ndarray:
        mesh = self.mesh
        vol = np.bincount(mesh.elements.ravel(), np.repeat(state.volumetric_load * mesh.areas / 3.0, 3),
                          mesh.n_nodes)
        flux = fem.facet_load(mesh, np.arange(len(mesh.boundary_facets)), state.interface_flux)
        return vol + flux

    # -- scheme -------------------------------------------------------------------
    def assemble(self, state: SolidState, dt: float | None = None):
        """Return (matrix, rhs, increment_bc) for the free-row system."""
        dt = self.params.dt if dt is None else dt
        theta = self.params.theta
        matrix = (sp.diags(self.capacity / dt) + theta * self.stiffness).tocsr()
        rhs = -(self.stiffness @ state.temperature) + self.load_vector(state)
        inc_bc = np.zeros(self.mesh.n_nodes)
        inc_bc[self.fixed] = self.fixed_values[self.fixed] - state.temperature[self.fixed]
        return matrix, rhs, inc_bc

    def _solve(self, matrix, rhs, inc_bc):
        free = np.flatnonzero(~self.fixed)
        fixed = self.fixed
        a_free = matrix[free]
        b = rhs[free] - a_free[:, fixed] @ inc_bc[fixed]
        try:
            res = pcg_solve(a_free[:, free], b, None, SolverConfig(rel_tolerance=self.params.rel_tolerance))
        except SolverError as exc:
            raise HeatError(f"heat solve failed: {exc}") from exc
        self.last_solve = res
        out = inc_bc.copy()
        out[free] = res.solution
        return out

    def step(self, state: SolidState, dt: float | None = None) -> float:
        """Advance one step in place; returns the max temperature change."""
        dt = self.params.dt if dt is None else dt
        matrix, rhs, inc_bc = self.assemble(state, dt)
        inc = self._solve(matrix, rhs, inc_bc)
        # boundary heat flow that holds the fixed nodes: residual of the full rows
        self.last_reaction = np.where(self.fixed, matrix @ inc - rhs, 0.0)
        state.temperature = state.temperature + inc
        state.time += dt
        return float(np.max(np.abs(inc), initial=0.0))

    def advance(self, state: SolidState, trigger: StopTrigger | int = 10,
                max_steps: int = 10**6) -> ProgressRecord:
        if isinstance(trigger, (int, np.integer)):
            trigger = StepCount(int(trigger))
        progress = ProgressRecord()
        for _ in range(max_steps):
            if trigger.fires(progress):
                break
            change = self.step(state)
            progress.record_step(self.params.dt, change / self.params.dt, change)
        return progress

    def solve_steady(self, state: SolidState) -> SolidState:
        """Steady state of the current loads and fixed temperatures (in place)."""
        rhs = -(self.stiffness @ state.temperature) + self.load_vector(state)
        inc_bc = np.zeros(self.mesh.n_nodes)
        inc_bc[self.fixed] = self.fixed_values[self.fixed] - state.temperature[self.fixed]
        if not self.fixed.any():
            raise HeatError("steady conduction needs at least one fixed-temperature boundary")
        inc = self._solve(self.stiffness, rhs, inc_bc)
        self.last_reaction = np.where(self.fixed, self.stiffness @ inc - rhs, 0.0)
        state.temperature = state.temperature + inc
        return state

    # -- interface exports ------------------------------------------------------------
    def surface_temperature(self, state: SolidState, tag: str | None = None) -> np.ndarray:
        """Nodal temperatures on a boundary tag (``nodes_with_tag`` order)."""
        nodes = self.mesh.nodes_with_tag(tag or self.interface_tag)
        return state.temperature[nodes].copy()

    def interface_heat_flow(self) -> np.ndarray:
        """Reaction heat flow into the solid at the interface nodes (erg/(s cm))."""
        return self.last_reaction[self.interface_nodes]

    def interface_reaction_flux(self) -> np.ndarray:
        """Per-facet flux into the solid from the reaction heat flows.

        Nodal flows are divided by the lumped boundary length and averaged
        per facet; the facet integral reproduces the nodal total exactly.
        """
        mesh = self.mesh
        facets = self.interface_facets
        length = fem.boundary_mass(mesh, facets)
        nodal = np.zeros(mesh.n_nodes)
        nodes = self.interface_nodes
        nodal[nodes] = self.last_reaction[nodes] / length[nodes]
        ends = mesh.boundary_facets[facets]
        return 0.5 * (nodal[ends[:, 0]] + nodal[ends[:, 1]])

    def interface_heat_load(self, state: SolidState) -> float:
        """Total heat flow into the solid through the interface (erg/(s cm))."""
        if self.interface_dirichlet:
            return float(self.interface_heat_flow().sum())
        return float(np.sum(state.interface_flux[self.interface_facets]
                            * self.mesh.facet_lengths[self.interface_facets]))

    def stored_energy(self, state: SolidState) -> float:
        return float(self.capacity @ state.temperature)
