"""Incompressible flow and temperature on the fluid mesh (projection scheme).

One step:

1. ``k - 1`` explicit low-storage RK stages for advection/viscosity with
   coefficients ``1 / (k + 1 - i)``, scaled per node by
   ``gamma = min(1, Re_h)``;
2. a theta-implicit viscous stage giving the predicted velocity ``v*``;
3. a pressure-increment Poisson solve and the velocity correction;
4. the same RK/Crank-Nicolson structure for the temperature.

Spatial operators are linear finite elements with lumped mass and an
edge-based dissipation added to the Galerkin advection.  The Poisson
operator is the exact composite ``D M^-1 D^T`` of the divergence and weak
gradient actually used, so the corrected velocity is discretely
divergence-free up to the linear-solver tolerance.  None of the spatial
operators depend on the timestep, hence neither does the steady state.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import fem
from .linsolve import PRECONDITIONERS, Deflation, SolverConfig, SolverError, build_factorization, pcg_solve
from .mesh import SimplexMesh, sector_groups
from .triggers import ProgressRecord, StepCount, StopTrigger

__all__ = [
    "FlowError",
    "FluidProps",
    "FlowState",
    "InflowBC",
    "WallBC",
    "OutflowBC",
    "FlowSchemeParams",
    "FlowSolver",
    "rk_coefficients",
    "gamma_factor",
    "compute_timestep",
    "couette_profile",
    "StepRecord",
]

log = logging.getLogger(__name__)

VELOCITY_FLOOR = 1e-30


class FlowError(RuntimeError):
    """Failure inside a flow step, with the equation and step that failed."""


@dataclass(frozen=True)
class FluidProps:
    density: float
    viscosity: float
    conductivity: float
    specific_heat: float
    gravity: tuple = (0.0, 0.0)
    expansion: float = 0.0
    reference_temp: float = 300.0

    def __post_init__(self):
        for name in ("density", "viscosity", "conductivity", "specific_heat"):
            if not getattr(self, name) > 0:
                raise ValueError(f"fluid {name} must be positive, got {getattr(self, name)}")


@dataclass
class FlowState:
    velocity: np.ndarray
    pressure: np.ndarray
    temperature: np.ndarray
    source_momentum: np.ndarray
    source_energy: np.ndarray
    time: float = 0.0

    @classmethod
    def uniform(cls, n_nodes, velocity=(0.0, 0.0), pressure=0.0, temperature=300.0):
        return cls(
            velocity=np.tile(np.asarray(velocity, dtype=float), (n_nodes, 1)),
            pressure=np.full(n_nodes, float(pressure)),
            temperature=np.full(n_nodes, float(temperature)),
            source_momentum=np.zeros((n_nodes, 2)),
            source_energy=np.zeros(n_nodes),
        )

    def copy(self):
        return FlowState(self.velocity.copy(), self.pressure.copy(), self.temperature.copy(),
                         self.source_momentum.copy(), self.source_energy.copy(), self.time)

    def reset_sources(self):
        self.source_momentum[:] = 0.0
        self.source_energy[:] = 0.0


@dataclass(frozen=True)
class InflowBC:
    """Fixed inflow velocity and temperature.

    ``speed`` is along the inward boundary normal; ``velocity`` (a fixed
    vector) overrides it when given.
    """

    speed: float = 0.0
    temperature: float = 300.0
    velocity: tuple | None = None


@dataclass(frozen=True)
class WallBC:
    """No-slip wall rotating rigidly about ``center`` at ``angular_velocity`` rad/s.

    Thermal condition: fixed ``temperature`` if given, otherwise a
    prescribed ``heat_flux`` into the fluid (zero: adiabatic).  Either may
    be overwritten at run time by the coupling module.
    """

    angular_velocity: float = 0.0
    center: tuple = (0.0, 0.0)
    temperature: float | None = None
    heat_flux: float = 0.0
    coupled: bool = False


@dataclass(frozen=True)
class OutflowBC:
    pressure: float = 0.0


@dataclass
class FlowSchemeParams:
    rk_stages: int = 4
    theta: float = 0.5
    courant: float = 0.8
    dt_max: float = 1e-3
    fixed_dt: float | None = None
    temperature_theta: float = 0.5
    dissipation: float = 0.1
    high_order_dissipation: bool = True
    rel_tolerance: float = 1e-10
    deflation_groups: int = 16
    # "deflated-jacobi", "jacobi" or "factorized" for the pressure system
    pressure_preconditioner: str = "deflated-jacobi"

    def __post_init__(self):
        if int(self.rk_stages) != self.rk_stages or self.rk_stages < 1:
            raise ValueError(f"rk_stages must be an integer >= 1, got {self.rk_stages}")
        for name in ("theta", "temperature_theta"):
            if not 0.5 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0.5, 1], got {getattr(self, name)}")
        if not self.courant > 0:
            raise ValueError(f"courant must be positive, got {self.courant}")
        if not self.dt_max > 0:
            raise ValueError(f"dt_max must be positive, got {self.dt_max}")
        if self.pressure_preconditioner not in PRECONDITIONERS:
            raise ValueError(f"unknown pressure preconditioner {self.pressure_preconditioner!r}")
        if self.fixed_dt is not None and not self.fixed_dt > 0:
            raise ValueError(f"fixed_dt must be positive, got {self.fixed_dt}")


def couette_profile(radius, inner_radius, outer_radius, inner_omega, outer_omega=0.0):
    """Azimuthal speed ``A r + B / r`` of steady flow between rotating cylinders."""
    r1, r2 = inner_radius, outer_radius
    a = (outer_omega * r2 ** 2 - inner_omega * r1 ** 2) / (r2 ** 2 - r1 ** 2)
    b = (inner_omega - outer_omega) * r1 ** 2 * r2 ** 2 / (r2 ** 2 - r1 ** 2)
    return a * np.asarray(radius) + b / np.asarray(radius)


def rk_coefficients(k: int) -> np.ndarray:
    """Low-storage RK coefficients 1/(k+1-i), i = 1..k."""
    return 1.0 / (k + 1 - np.arange(1, k + 1, dtype=float))


def gamma_factor(cell_reynolds):
    """min(1, Re_h)."""
    return np.minimum(1.0, cell_reynolds)


def compute_timestep(mesh: SimplexMesh, state: FlowState, params: FlowSchemeParams) -> float:
    """C * min_i h_i / |v_i|, capped at ``params.dt_max``."""
    if params.fixed_dt is not None:
        return float(params.fixed_dt)
    speed = np.maximum(np.hypot(state.velocity[:, 0], state.velocity[:, 1]), VELOCITY_FLOOR)
    dt = params.courant * float(np.min(mesh.node_min_edge / speed))
    return min(dt, params.dt_max)


@dataclass
class StepRecord:
    step: int
    time: float
    dt: float
    momentum_residual: float
    divergence_norm: float
    # divergence_norm over ||v||_inf / h_min (0 for a fluid at rest)
    divergence_ratio: float = 0.0


class FlowSolver:
    """Projection-scheme solver bound to one mesh, property set and BC map."""

    def __init__(self, mesh: SimplexMesh, props: FluidProps, bcs: dict,
                 params: FlowSchemeParams | None = None):
        self.mesh = mesh
        self.props = props
        self.params = params or FlowSchemeParams()
        self.bcs = dict(bcs)
        missing = sorted(set(mesh.tags) - set(self.bcs))
        unknown = sorted(set(self.bcs) - set(mesh.tags))
        if missing or unknown:
            raise ValueError(f"flow BCs must cover every boundary tag exactly; "
                             f"missing={missing}, unknown={unknown}")
        n = mesh.n_nodes
        self.mass = mesh.lumped_mass
        self.stiffness = fem.stiffness_matrix(mesh)
        self.div_x, self.div_y = fem.divergence_matrices(mesh)
        self.edge_coef = fem.edge_coefficients(mesh)
        self.history: list[StepRecord] = []
        self._split_cache = {}
        self.steps_taken = 0

        # velocity / temperature Dirichlet data; walls take precedence at corners
        self.velocity_fixed = np.zeros(n, dtype=bool)
        self.velocity_bc = np.zeros((n, 2))
        self.temperature_fixed = np.zeros(n, dtype=bool)
        self.temperature_bc = np.zeros(n)
        self.wall_flux = {}
        outflow_nodes = []
        inflow = [(t, bc) for t, bc in self.bcs.items() if isinstance(bc, InflowBC)]
        walls = [(t, bc) for t, bc in self.bcs.items() if isinstance(bc, WallBC)]
        for tag, bc in self.bcs.items():
            if isinstance(bc, OutflowBC):
                outflow_nodes.append(mesh.nodes_with_tag(tag))
            elif not isinstance(bc, (InflowBC, WallBC)):
                raise TypeError(f"unsupported flow BC for tag {tag!r}: {bc!r}")
        for tag, bc in inflow:
            nodes = mesh.nodes_with_tag(tag)
            self.velocity_fixed[nodes] = True
            self.velocity_bc[nodes] = self._inflow_velocity(tag, bc)[nodes]
            self.temperature_fixed[nodes] = True
            self.temperature_bc[nodes] = bc.temperature
        for tag, bc in walls:
            nodes = mesh.nodes_with_tag(tag)
            rel = mesh.node_coords[nodes] - np.asarray(bc.center)
            self.velocity_fixed[nodes] = True
            self.velocity_bc[nodes] = bc.angular_velocity * np.stack([-rel[:, 1], rel[:, 0]], axis=1)
        for tag, bc in walls:
            if bc.temperature is not None:
                self.set_wall_temperature(tag, np.full(len(mesh.nodes_with_tag(tag)), bc.temperature))
            else:
                self.set_wall_flux(tag, np.full(len(mesh.facets_with_tag(tag)), bc.heat_flux))

        self.free_nodes = np.flatnonzero(~self.velocity_fixed)
        p_fixed = np.zeros(n, dtype=bool)
        if outflow_nodes:
            p_fixed[np.concatenate(outflow_nodes)] = True
        self.pressure_datum = np.zeros(n)
        # boundary part of the weak pressure gradient on open boundaries: -int p N n ds
        self.outflow_traction = np.zeros((n, 2))
        for tag, bc in self.bcs.items():
            if isinstance(bc, OutflowBC):
                self.pressure_datum[mesh.nodes_with_tag(tag)] = bc.pressure
                facets = mesh.facets_with_tag(tag)
                w = -0.5 * bc.pressure * mesh.facet_lengths[facets, None] * mesh.facet_normals[facets]
                for k in (0, 1):
                    np.add.at(self.outflow_traction, mesh.boundary_facets[facets, k], w)
        self.pressure_level = float(self.pressure_datum[p_fixed].mean()) if p_fixed.any() else 0.0
        # constraint-free rows (fully Dirichlet stencils) just sit at the open-boundary level
        self.pressure_datum[~p_fixed] = self.pressure_level
        self._build_pressure_operator(p_fixed)

    # -- setup ------------------------------------------------------------
    def _inflow_velocity(self, tag, bc: InflowBC) -> np.ndarray:
        mesh = self.mesh
        out = np.zeros((mesh.n_nodes, 2))
        if bc.velocity is not None:
            out[:] = np.asarray(bc.velocity, dtype=float)
            return out
        facets = mesh.facets_with_tag(tag)
        normals = np.zeros((mesh.n_nodes, 2))
        w = mesh.facet_lengths[facets, None] * mesh.facet_normals[facets]
        for k in (0, 1):
            np.add.at(normals, mesh.boundary_facets[facets, k], w)
        length = np.hypot(normals[:, 0], normals[:, 1])
        ok = length > 0
        out[ok] = -bc.speed * normals[ok] / length[ok, None]
        return out

    def _build_pressure_operator(self, p_fixed):
        div = sp.hstack([self.div_x, self.div_y]).tocsc()
        n = self.mesh.n_nodes
        free_dofs = np.concatenate([self.free_nodes, self.free_nodes + n])
        inv_mass = 1.0 / np.concatenate([self.mass, self.mass])[free_dofs]
        rows = np.flatnonzero(~p_fixed)
        d_pf = div[:, free_dofs].tocsr()[rows]
        lap = (d_pf @ sp.diags(inv_mass) @ d_pf.T).tocsr()
        # rows whose whole stencil is Dirichlet velocity carry no constraint
        active = lap.diagonal() > 1e-14 * max(lap.diagonal().max(), 1e-300)
        rows = rows[active]
        d_pf = d_pf[active]
        self.pressure_rows = rows
        self.div_full = sp.hstack([self.div_x, self.div_y]).tocsr()[rows]
        self.div_abs = abs(self.div_full)
        self.grad_free = (sp.diags(inv_mass) @ d_pf.T).tocsr()
        self.free_dofs = free_dofs
        self.pressure_matrix = (d_pf @ sp.diags(inv_mass) @ d_pf.T).tocsr()
        self.pressure_singular = not p_fixed.any()
        groups = None
        prec = self.params.pressure_preconditioner
        self.pressure_deflation = None
        self.pressure_factorization = None
        if prec == "factorized" and self.pressure_singular:
            raise ValueError("the factorized pressure preconditioner needs an outflow boundary")
        if len(rows) > len(free_dofs):
            # D M^-1 D^T then has spurious null modes: the pressure is not unique
            # and CG cannot reach a relative residual at round-off level
            raise ValueError(f"the projection needs a full-rank pressure system, but {len(rows)} pressure rows "
                             f"exceed {len(free_dofs)} free velocity unknowns (refine the mesh across the channel)")
        if prec == "deflated-jacobi" and len(rows) <= 4 * self.params.deflation_groups:
            prec = "jacobi"
        if prec == "deflated-jacobi":
            groups = sector_groups(self.mesh, self.params.deflation_groups)[rows]
            _, groups = np.unique(groups, return_inverse=True)
            self.pressure_deflation = Deflation(self.pressure_matrix, groups.ravel())
        elif prec == "factorized":
            # the matrix never changes, so one factorisation serves every step
            self.pressure_factorization = build_factorization(self.pressure_matrix)
        self.pressure_config = SolverConfig(
            rel_tolerance=self.params.rel_tolerance, preconditioner=prec,
            deflation_groups=None if groups is None else groups.ravel(),
            singular=self.pressure_singular)
        self._last_dp = np.zeros(len(rows))

    # -- boundary data supplied at run time -------------------------------
    def set_wall_temperature(self, tag, node_values):
        """Dirichlet temperature on the nodes of ``tag`` (ordered as ``nodes_with_tag``)."""
        nodes = self.mesh.nodes_with_tag(tag)
        self.temperature_fixed[nodes] = True
        self.temperature_bc[nodes] = node_values
        self.wall_flux.pop(tag, None)

    def set_wall_flux(self, tag, facet_flux):
        """Heat flux into the fluid on each facet of ``tag`` (erg/(cm^2 s))."""
        mesh = self.mesh
        nodes = mesh.nodes_with_tag(tag)
        facets = mesh.facets_with_tag(tag)
        self.wall_flux[tag] = np.asarray(facet_flux, dtype=float).copy()
        # release Dirichlet on these nodes unless held by inflow or another Dirichlet wall
        held = np.zeros(mesh.n_nodes, dtype=bool)
        for t, bc in self.bcs.items():
            if t == tag:
                continue
            if isinstance(bc, InflowBC) or (isinstance(bc, WallBC) and t not in self.wall_flux):
                held[mesh.nodes_with_tag(t)] = True
        release = nodes[~held[nodes]]
        self.temperature_fixed[release] = False
        del facets

    def wall_heat_load(self) -> np.ndarray:
        out = np.zeros(self.mesh.n_nodes)
        for tag, q in self.wall_flux.items():
            out += fem.facet_load(self.mesh, self.mesh.facets_with_tag(tag), q)
        return out

    def apply_bcs(self, state: FlowState):
        state.velocity[self.velocity_fixed] = self.velocity_bc[self.velocity_fixed]
        state.temperature[self.temperature_fixed] = self.temperature_bc[self.temperature_fixed]
        fixed_p = np.ones(self.mesh.n_nodes, dtype=bool)
        fixed_p[self.pressure_rows] = False
        if not self.pressure_singular:
            state.pressure[fixed_p] = self.pressure_datum[fixed_p]

    def initial_state(self, velocity=(0.0, 0.0), temperature=300.0) -> FlowState:
        # start from the outflow pressure level so no spurious jump sits at the outlet
        state = FlowState.uniform(self.mesh.n_nodes, velocity, self.pressure_level, temperature)
        self.apply_bcs(state)
        return state

    # -- operators ----------------------------------------------------------
    def cell_reynolds(self, velocity):
        speed = np.hypot(velocity[:, 0], velocity[:, 1])
        return self.props.density * speed * self.mesh.node_min_edge / self.props.viscosity

    def cell_peclet(self, velocity):
        p = self.props
        speed = np.hypot(velocity[:, 0], velocity[:, 1])
        return p.density * p.specific_heat * speed * self.mesh.node_min_edge / p.conductivity

    def momentum_residual(self, state: FlowState, velocity) -> np.ndarray:
        """Integrated right-hand side of the momentum equation (N, 2)."""
        p = self.props
        mesh = self.mesh
        rhs = -p.density * fem.advection_rhs(mesh, velocity, velocity)
        rhs += fem.edge_dissipation(mesh, self.edge_coef, velocity, velocity,
                                    self.params.dissipation, self.params.high_order_dissipation,
                                    p.density)
        rhs -= p.viscosity * (self.stiffness @ velocity)
        # weak pressure gradient: -grad p  ->  D^T p
        rhs[:, 0] += self.div_x.T @ state.pressure
        rhs[:, 1] += self.div_y.T @ state.pressure
        rhs += self.outflow_traction
        g = np.asarray(p.gravity, dtype=float)
        if np.any(g):
            # buoyancy term kept with the sign it is usually written with
            factor = p.density * (1.0 + p.expansion * (state.temperature - p.reference_temp))
            rhs += (self.mass * factor)[:, None] * g[None, :]
        rhs += state.source_momentum
        return rhs

    def energy_residual(self, state: FlowState, velocity, temperature) -> np.ndarray:
        p = self.props
        mesh = self.mesh
        rc = p.density * p.specific_heat
        rhs = -rc * fem.advection_rhs(mesh, velocity, temperature)
        rhs += fem.edge_dissipation(mesh, self.edge_coef, velocity, temperature,
                                    self.params.dissipation, self.params.high_order_dissipation, rc)
        rhs -= p.conductivity * (self.stiffness @ temperature)
        rhs += state.source_energy
        rhs += self.wall_heat_load()
        return rhs

    def _split(self, fixed):
        key = fixed.tobytes()
        cached = self._split_cache.get(key)
        if cached is None:
            free = np.flatnonzero(~fixed)
            k_free = self.stiffness[free]
            cached = (free, k_free[:, free].tocsr(), k_free[:, fixed].tocsr())
            if len(self._split_cache) > 8:
                self._split_cache.clear()
            self._split_cache[key] = cached
        return cached

    def _implicit_solve(self, matrix_diag, coef, rhs, fixed, increment_bc, what):
        """Solve (diag + coef K) x = rhs with Dirichlet increments on ``fixed`` rows."""
        free, k_ff, k_fb = self._split(fixed)
        a_ff = (sp.diags(matrix_diag[free]) + coef * k_ff).tocsr()
        b = rhs[free] - coef * (k_fb @ increment_bc[fixed])
        cfg = SolverConfig(rel_tolerance=self.params.rel_tolerance)
        try:
            x = pcg_solve(a_ff, b, None, cfg).solution
        except SolverError as exc:
            raise FlowError(f"{what} failed at step {self.steps_taken}: {exc}") from exc
        out = increment_bc.copy()
        out[free] = x
        return out

    # -- scheme pieces ------------------------------------------------------------
    def predict(self, state: FlowState, dt: float) -> np.ndarray:
        """Advective-diffusive prediction: returns v*."""
        p = self.props
        k = self.params.rk_stages
        alpha = rk_coefficients(k)
        v_n = state.velocity
        gamma = gamma_factor(self.cell_reynolds(v_n))
        scale = (gamma * dt / (p.density * self.mass))[:, None]
        v = v_n
        for i in range(k - 1):
            v = v_n + alpha[i] * scale * self.momentum_residual(state, v)
            v[self.velocity_fixed] = self.velocity_bc[self.velocity_fixed]
        rhs = self.momentum_residual(state, v)
        diag = p.density * self.mass / dt
        inc_bc = np.zeros((self.mesh.n_nodes, 2))
        inc_bc[self.velocity_fixed] = self.velocity_bc[self.velocity_fixed] - v_n[self.velocity_fixed]
        out = np.empty_like(v_n)
        for c in range(2):
            out[:, c] = self._implicit_solve(diag, self.params.theta * p.viscosity, rhs[:, c],
                                             self.velocity_fixed, inc_bc[:, c],
                                             f"implicit viscous stage (component {c})")
        return v_n + out

    def pressure_correction(self, state: FlowState, v_star: np.ndarray, dt: float) -> np.ndarray:
        """Solve for the pressure increment; returns it on the unconstrained rows."""
        flat = np.concatenate([v_star[:, 0], v_star[:, 1]])
        factor = self.props.density / dt
        rhs = -factor * (self.div_full @ flat)
        # size of the individual flux terms; a net divergence below rel_tolerance
        # of it needs no correction, and a solve to rel_tolerance of such a
        # residue would ask for accuracy below floating-point round-off
        term_scale = factor * np.linalg.norm(self.div_abs @ np.abs(flat))
        if np.linalg.norm(rhs) <= self.params.rel_tolerance * term_scale:
            return np.zeros(len(self.pressure_rows))
        try:
            res = pcg_solve(self.pressure_matrix, rhs, self._last_dp, self.pressure_config,
                            deflation=self.pressure_deflation,
                            factorization=self.pressure_factorization)
        except SolverError as exc:
            raise FlowError(f"pressure Poisson solve failed at step {self.steps_taken}: {exc}") from exc
        self.last_pressure_solve = res
        self._last_dp = res.solution
        return res.solution

    def velocity_correction(self, v_star: np.ndarray, dp: np.ndarray, dt: float) -> np.ndarray:
        n = self.mesh.n_nodes
        flat = np.concatenate([v_star[:, 0], v_star[:, 1]])
        flat[self.free_dofs] += (dt / self.props.density) * (self.grad_free @ dp)
        return np.stack([flat[:n], flat[n:]], axis=1)

    def divergence(self, velocity) -> np.ndarray:
        """Discrete nodal divergence on the constrained rows (1/s)."""
        flat = np.concatenate([velocity[:, 0], velocity[:, 1]])
        return (self.div_full @ flat) / self.mass[self.pressure_rows]

    def advance_temperature(self, state: FlowState, dt: float, velocity=None) -> np.ndarray:
        p = self.props
        velocity = state.velocity if velocity is None else velocity
        rc = p.density * p.specific_heat
        k = self.params.rk_stages
        alpha = rk_coefficients(k)
        t_n = state.temperature
        gamma = gamma_factor(self.cell_peclet(velocity))
        scale = gamma * dt / (rc * self.mass)
        fixed = self.temperature_fixed
        t = t_n
        for i in range(k - 1):
            t = t_n + alpha[i] * scale * self.energy_residual(state, velocity, t)
            t[fixed] = self.temperature_bc[fixed]
        rhs = self.energy_residual(state, velocity, t)
        inc_bc = np.zeros(self.mesh.n_nodes)
        inc_bc[fixed] = self.temperature_bc[fixed] - t_n[fixed]
        inc = self._implicit_solve(rc * self.mass / dt, self.params.temperature_theta * p.conductivity,
                                   rhs, fixed, inc_bc, "temperature stage")
        return t_n + inc

    def step(self, state: FlowState, dt: float | None = None, particles=None) -> StepRecord:
        """One complete flow step (in place).  ``particles`` (optional) has a
        ``step(solver, state, dt)`` method that deposits the sources for the
        next step."""
        if dt is None:
            dt = compute_timestep(self.mesh, state, self.params)
        self.apply_bcs(state)
        v_old = state.velocity.copy()
        v_star = self.predict(state, dt)
        dp = self.pressure_correction(state, v_star, dt)
        v_new = self.velocity_correction(v_star, dp, dt)
        state.pressure[self.pressure_rows] += dp
        if self.pressure_singular:
            state.pressure -= state.pressure.mean()
        state.temperature = self.advance_temperature(state, dt, v_new)
        state.velocity = v_new
        state.time += dt
        self.steps_taken += 1
        if particles is not None:
            state.reset_sources()
            particles.step(self, state, dt)
        change = v_new - v_old
        div = float(np.max(np.abs(self.divergence(v_new)), initial=0.0))
        speed_scale = np.abs(v_new).max() / self.mesh.node_min_edge.min()
        rec = StepRecord(self.steps_taken, state.time, dt, float(np.sqrt(np.mean(change ** 2))) / dt, div,
                         div / speed_scale if speed_scale > 0 else 0.0)
        self.history.append(rec)
        return rec

    def advance(self, state: FlowState, trigger: StopTrigger | int = 500, particles=None,
                max_steps: int = 10**7) -> ProgressRecord:
        """Step until ``trigger`` fires (an int means a step count)."""
        if isinstance(trigger, (int, np.integer)):
            trigger = StepCount(int(trigger))
        progress = ProgressRecord()
        for _ in range(max_steps):
            if trigger.fires(progress):
                break
            t_old = state.temperature.copy()
            v_old = state.velocity.copy()
            rec = self.step(state, particles=particles)
            change = max(np.max(np.abs(state.velocity - v_old), initial=0.0),
                         np.max(np.abs(state.temperature - t_old), initial=0.0))
            progress.record_step(rec.dt, rec.momentum_residual, change)
        return progress
