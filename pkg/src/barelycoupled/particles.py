"""Lagrangian droplet parcels exchanging momentum and heat with the fluid.

Parcels are stored as a struct of arrays (:class:`ParcelSet`).  Each parcel
represents ``multiplicity`` identical droplets.  Motion and heating follow
the drag / film-coefficient relaxation laws and are integrated with the
same low-storage RK family as the flow solver; loads go back to the fluid
nodes through the host element's shape functions, so the exchange is
exactly conservative.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .mesh import SimplexMesh, barycentric, locate_points, trace_segment

__all__ = [
    "ParticleProps",
    "Parcel",
    "ParcelSet",
    "Injection",
    "ParticleSystem",
    "RE_FLOOR",
    "drag_coefficient",
    "reynolds",
    "prandtl",
    "nusselt",
    "film_coefficient",
    "drag_rate",
    "heating_rate",
    "parcel_rhs",
    "limit_update",
    "rk_advance_parcels",
    "transfer_loads",
    "evaporate",
    "manage_parcels",
]

log = logging.getLogger(__name__)

RE_FLOOR = 1e-10


@dataclass(frozen=True)
class ParticleProps:
    density: float
    specific_heat: float
    boiling_temp: float = 373.15
    latent_heat: float = 2.26e10
    radiation: float = 0.0
    diameter_floor: float = 1e-4

    def __post_init__(self):
        if not (self.density > 0 and self.specific_heat > 0):
            raise ValueError("particle density and specific heat must be positive")
        if self.radiation < 0:
            raise ValueError("radiation coefficient must be >= 0")
        if not self.latent_heat > 0:
            raise ValueError("latent heat must be positive")


# -- closure laws ---------------------------------------------------------------

def reynolds(density, viscosity, slip_speed, diameter):
    """rho |v - v_p| d / mu."""
    return density * np.asarray(slip_speed) * np.asarray(diameter) / viscosity


def drag_coefficient(re):
    """max(0.1, 24/Re (1 + 0.15 Re^0.687)); Re is floored at 1e-10."""
    re = np.maximum(np.asarray(re, dtype=float), RE_FLOOR)
    out = np.maximum(0.1, 24.0 / re * (1.0 + 0.15 * re ** 0.687))
    return out if out.ndim else float(out)


def prandtl(specific_heat, viscosity, conductivity):
    """c_p mu / k (the dimensionless gas Prandtl number)."""
    return specific_heat * viscosity / conductivity


def nusselt(pr, re):
    """2 + 0.459 Pr^0.333 Re^0.55."""
    out = 2.0 + 0.459 * np.asarray(pr, dtype=float) ** 0.333 * np.asarray(re, dtype=float) ** 0.55
    return out if out.ndim else float(out)


def film_coefficient(fluid, re, diameter):
    """h_f = Nu k / d; ``fluid`` needs viscosity, conductivity, specific_heat."""
    pr = prandtl(fluid.specific_heat, fluid.viscosity, fluid.conductivity)
    return nusselt(pr, re) * fluid.conductivity / diameter


def drag_rate(fluid, pprops: ParticleProps, slip_speed, diameter):
    """alpha_v |v - v_p| (1/s) with alpha_v = 3 rho c_d / (4 rho_p d).

    ``c_d |dv|`` is evaluated as ``max(0.1 |dv|, 24 mu/(rho d) (1 + 0.15 Re^0.687))``,
    identical to the closure for Re > 0 and finite as Re -> 0.
    """
    slip = np.asarray(slip_speed, dtype=float)
    d = np.asarray(diameter, dtype=float)
    re = reynolds(fluid.density, fluid.viscosity, slip, d)
    cd_slip = np.maximum(0.1 * slip, 24.0 * fluid.viscosity / (fluid.density * d) * (1.0 + 0.15 * re ** 0.687))
    return 3.0 * fluid.density * cd_slip / (4.0 * pprops.density * d)


def heating_rate(fluid, pprops: ParticleProps, slip_speed, diameter):
    """alpha_T = 3 k Nu / (2 c_pp rho_p d^2) (1/s)."""
    d = np.asarray(diameter, dtype=float)
    re = reynolds(fluid.density, fluid.viscosity, slip_speed, d)
    pr = prandtl(fluid.specific_heat, fluid.viscosity, fluid.conductivity)
    return 3.0 * fluid.conductivity * nusselt(pr, re) / (2.0 * pprops.specific_heat * pprops.density * d * d)


def parcel_rhs(fluid, pprops: ParticleProps, velocity, temperature, diameter,
               fluid_velocity, fluid_temperature):
    """Time derivatives (dv_p/dt, dx_p/dt, dT_p/dt) for arrays of parcels."""
    velocity = np.atleast_2d(np.asarray(velocity, dtype=float))
    fluid_velocity = np.atleast_2d(np.asarray(fluid_velocity, dtype=float))
    temperature = np.asarray(temperature, dtype=float)
    fluid_temperature = np.asarray(fluid_temperature, dtype=float)
    diameter = np.atleast_1d(np.asarray(diameter, dtype=float))
    slip_vec = fluid_velocity - velocity
    slip = np.hypot(slip_vec[:, 0], slip_vec[:, 1])
    alive = diameter >= pprops.diameter_floor
    d = np.where(alive, diameter, 1.0)
    dv = drag_rate(fluid, pprops, slip, d)[:, None] * slip_vec
    dtemp = heating_rate(fluid, pprops, slip, d) * (fluid_temperature - temperature)
    if pprops.radiation:
        dtemp = dtemp + (3.0 * pprops.radiation / (2.0 * pprops.density * pprops.specific_heat * d)
                         * (np.asarray(fluid_temperature) ** 4 - np.asarray(temperature) ** 4))
    dv[~alive] = 0.0
    dtemp = np.where(alive, dtemp, 0.0)
    dx = np.where(alive[:, None], velocity, 0.0)
    return dv, dx, dtemp


def limit_update(start, proposed, fluid_value):
    """Clamp ``proposed`` between the start value and the fluid value (componentwise)."""
    lo = np.minimum(start, fluid_value)
    hi = np.maximum(start, fluid_value)
    return np.clip(proposed, lo, hi)


# -- parcel storage ------------------------------------------------------------------

@dataclass
class Parcel:
    position: tuple
    velocity: tuple
    temperature: float
    diameter: float
    multiplicity: float = 1.0
    host_element: int = -1
    alive: bool = True


class ParcelSet:
    """Struct-of-arrays parcel storage."""

    FIELDS = ("position", "velocity", "temperature", "diameter", "multiplicity", "host", "alive", "ids")

    def __init__(self):
        self.position = np.zeros((0, 2))
        self.velocity = np.zeros((0, 2))
        self.temperature = np.zeros(0)
        self.diameter = np.zeros(0)
        self.multiplicity = np.zeros(0)
        self.host = np.zeros(0, dtype=np.int64)
        self.alive = np.zeros(0, dtype=bool)
        self.ids = np.zeros(0, dtype=np.int64)
        self.next_id = 0

    def __len__(self):
        return len(self.temperature)

    @property
    def n_alive(self):
        return int(self.alive.sum())

    def add(self, position, velocity, temperature, diameter, multiplicity, host):
        position = np.atleast_2d(np.asarray(position, dtype=float))
        n = len(position)
        if n == 0:
            return
        multiplicity = np.broadcast_to(np.asarray(multiplicity, dtype=float), (n,))
        if np.any(multiplicity < 1):
            raise ValueError("parcel multiplicity must be >= 1")
        diameter = np.broadcast_to(np.asarray(diameter, dtype=float), (n,))
        if np.any(diameter < 0):
            raise ValueError("parcel diameter must be >= 0")
        self.position = np.vstack([self.position, position])
        self.velocity = np.vstack([self.velocity, np.broadcast_to(np.asarray(velocity, dtype=float), (n, 2))])
        self.temperature = np.concatenate([self.temperature, np.broadcast_to(np.asarray(temperature, dtype=float), (n,))])
        self.diameter = np.concatenate([self.diameter, diameter])
        self.multiplicity = np.concatenate([self.multiplicity, multiplicity])
        self.host = np.concatenate([self.host, np.broadcast_to(np.asarray(host, dtype=np.int64), (n,))])
        self.alive = np.concatenate([self.alive, np.ones(n, dtype=bool)])
        self.ids = np.concatenate([self.ids, np.arange(self.next_id, self.next_id + n)])
        self.next_id += n

    def add_parcel(self, parcel: Parcel):
        self.add(parcel.position, parcel.velocity, parcel.temperature, parcel.diameter,
                 parcel.multiplicity, parcel.host_element)

    def parcel(self, i) -> Parcel:
        return Parcel(tuple(self.position[i]), tuple(self.velocity[i]), float(self.temperature[i]),
                      float(self.diameter[i]), float(self.multiplicity[i]), int(self.host[i]),
                      bool(self.alive[i]))

    def select(self, keep):
        for name in self.FIELDS:
            setattr(self, name, getattr(self, name)[keep])

    def compact(self):
        """Drop dead parcels."""
        self.select(self.alive.copy())

    def mass(self, pprops: ParticleProps):
        """Mass of one droplet of each parcel."""
        return pprops.density * np.pi * self.diameter ** 3 / 6.0

    def csv_rows(self):
        for i in range(len(self)):
            yield (int(self.ids[i]), self.position[i, 0], self.position[i, 1], self.velocity[i, 0],
                   self.velocity[i, 1], self.temperature[i], self.diameter[i], self.multiplicity[i],
                   int(self.alive[i]))


@dataclass
class Injection:
    """Parcels released on a boundary tag every ``interval`` flow steps.

    ``velocity=None`` gives injected parcels the local fluid velocity.
    """

    tag: str
    parcels_per_injection: int = 4
    interval: int = 10
    diameter: float = 0.01
    temperature: float = 300.0
    multiplicity: float = 100.0
    velocity: tuple | None = None
    seed: int = 0


# -- integration -------------------------------------------------------------------

def _clipped_weights(mesh, hosts, points):
    w = barycentric(mesh, hosts, points)
    w = np.clip(w, 0.0, None)
    return w / w.sum(axis=1, keepdims=True)


def _interpolate(mesh, hosts, weights, field_values):
    vals = field_values[mesh.elements[hosts]]
    if vals.ndim == 2:
        return np.einsum("pk,pk->p", weights, vals)
    return np.einsum("pk,pkc->pc", weights, vals)


def _reflect(mesh, hosts, x_start, x_end, v_end, wall_tags):
    """Handle parcels whose final position left the mesh.

    Returns new positions, velocities, hosts (-1: removed through an open
    boundary or lost).
    """
    wall_ids = {mesh.tag_id(t) for t in wall_tags}
    pos = x_end.copy()
    vel = v_end.copy()
    out_host = np.full(len(pos), -1, dtype=np.int64)
    for p in range(len(pos)):
        start, end = x_start[p], x_end[p]
        host = int(hosts[p])
        for _bounce in range(4):
            e, facet = trace_segment(mesh, host, start, end)
            if facet is None:
                out_host[p] = e
                pos[p] = end
                break
            if int(mesh.facet_tags[facet]) not in wall_ids:
                break
            a, b = mesh.node_coords[mesh.boundary_facets[facet]]
            n = mesh.facet_normals[facet]
            # mirror the end point across the facet line; keep tangential motion
            dist = np.dot(end - a, n)
            new_end = end - 2.0 * dist * n
            vel[p] = vel[p] - 2.0 * np.dot(vel[p], n) * n
            # restart from the crossing point, nudged inside
            seg = end - start
            denom = np.dot(seg, n)
            t = np.clip(np.dot(a - start, n) / denom, 0.0, 1.0) if denom != 0 else 0.0
            start = start + t * seg - 1e-12 * n * max(1.0, np.linalg.norm(b - a))
            end = new_end
            host = e
        else:
            log.debug("parcel lost after repeated wall bounces")
    return pos, vel, out_host


def rk_advance_parcels(parcels: ParcelSet, mesh: SimplexMesh, fluid, pprops: ParticleProps,
                       fluid_velocity, fluid_temperature, dt: float, stages: int = 4,
                       wall_tags=(), limit: bool = True):
    """Advance alive parcels one step with the k-stage low-storage RK.

    Each stage relocates the parcel and re-interpolates the fluid.  The
    velocity and temperature of every stage are limited between the start
    value and the local fluid value; a component clamped at the fluid value
    stays at the (current) fluid value in later stages.  After the last
    stage, parcels that left through a wall tag are reflected, others
    leaving the mesh die.

    Returns a dict with start-of-step copies (velocity, temperature,
    diameter, host, position) and the deposition hosts/weights.
    """
    idx = np.flatnonzero(parcels.alive)
    alpha = 1.0 / (stages + 1 - np.arange(1, stages + 1, dtype=float))
    x0 = parcels.position[idx].copy()
    v0 = parcels.velocity[idx].copy()
    t0 = parcels.temperature[idx].copy()
    d0 = parcels.diameter[idx].copy()
    h0 = parcels.host[idx].copy()
    x, v, temp = x0, v0, t0
    host = h0.copy()
    last_valid = h0.copy()
    v_sat = np.zeros(v0.shape, dtype=bool)
    t_sat = np.zeros(t0.shape, dtype=bool)
    for i in range(stages):
        w = _clipped_weights(mesh, last_valid, x)
        uf = _interpolate(mesh, last_valid, w, fluid_velocity)
        tf = _interpolate(mesh, last_valid, w, fluid_temperature)
        dv, dx, dtemp = parcel_rhs(fluid, pprops, v, temp, d0, uf, tf)
        x_new = x0 + alpha[i] * dt * dx
        v_new = v0 + alpha[i] * dt * dv
        t_new = t0 + alpha[i] * dt * dtemp
        if limit:
            v_lim = limit_update(v0, v_new, uf)
            t_lim = limit_update(t0, t_new, tf)
            # relaxation towards the fluid is monotone: once a stage was clamped
            # at the fluid value it stays there (stiff parcels would otherwise
            # alternate between the start value and the fluid value)
            v_sat |= (v_lim != v_new)
            t_sat |= (t_lim != t_new)
            v_new = np.where(v_sat, uf, v_lim)
            t_new = np.where(t_sat, tf, t_lim)
        x, v, temp = x_new, v_new, t_new
        host = locate_points(mesh, last_valid, x, boundary_stops=True)
        found = host >= 0
        last_valid = np.where(found, host, last_valid)
    lost = host < 0
    if np.any(lost):
        li = np.flatnonzero(lost)
        px, pv, ph = _reflect(mesh, h0[li], x0[li], x[li], v[li], wall_tags)
        x[li], v[li] = px, pv
        host[li] = ph
    parcels.position[idx] = x
    parcels.velocity[idx] = v
    parcels.temperature[idx] = temp
    dep_host = np.where(host >= 0, host, last_valid)
    parcels.host[idx] = dep_host
    exited = host < 0
    return {
        "index": idx, "position": x0, "velocity": v0, "temperature": t0, "diameter": d0,
        "host": h0, "deposit_host": dep_host, "exited": exited,
    }


def evaporate(parcels: ParcelSet, pprops: ParticleProps, start: dict) -> np.ndarray:
    """Split the heat absorbed this step into sensible and latent parts.

    Heat that would lift a parcel beyond the boiling point is spent on
    mass loss instead: ``d^3 -= 6 Q_latent / (pi rho_p L)`` with the
    temperature pinned at the boiling point.  Parcels shrinking below the
    diameter floor die.  Returns the latent heat taken per droplet.
    """
    idx = start["index"]
    t0 = start["temperature"]
    d0 = start["diameter"]
    t_new = parcels.temperature[idx]
    mass0 = pprops.density * np.pi * d0 ** 3 / 6.0
    c = pprops.specific_heat
    tb = pprops.boiling_temp
    excess = np.where(t_new > tb, mass0 * c * (t_new - np.maximum(t0, tb)), 0.0)
    excess = np.maximum(excess, 0.0)
    latent = np.zeros(len(idx))
    boiling = excess > 0
    if np.any(boiling):
        d3 = d0[boiling] ** 3 - 6.0 * excess[boiling] / (np.pi * pprops.density * pprops.latent_heat)
        floor3 = pprops.diameter_floor ** 3
        dead = d3 < floor3
        # a parcel that evaporates completely can only absorb its own latent heat
        max_latent = mass0[boiling] * pprops.latent_heat
        latent[boiling] = np.where(dead, np.minimum(excess[boiling], max_latent), excess[boiling])
        parcels.diameter[idx[boiling]] = np.where(dead, 0.0, np.cbrt(np.maximum(d3, 0.0)))
        parcels.temperature[idx[boiling]] = tb
        parcels.alive[idx[boiling][dead]] = False
    return latent


def transfer_loads(parcels: ParcelSet, mesh: SimplexMesh, pprops: ParticleProps, start: dict,
                   dt: float, latent=None):
    """Nodal reaction loads on the fluid from one parcel step.

    Per parcel ``f_p = m (v^{n+1} - v^n)/dt`` and ``q_p`` = heat absorbed
    per second (sensible plus latent), both times the multiplicity, are
    spread with the shape functions of the end-of-step host and subtracted
    from the fluid.  Returns (momentum (N, 2), energy (N,), totals dict).
    """
    n = mesh.n_nodes
    idx = start["index"]
    if len(idx) == 0:
        return np.zeros((n, 2)), np.zeros(n), {"momentum": np.zeros(2), "energy": 0.0}
    mass0 = pprops.density * np.pi * start["diameter"] ** 3 / 6.0
    mult = parcels.multiplicity[idx]
    # temperature change: a parcel pinned at boiling keeps the sensible part only
    dtemp = parcels.temperature[idx] - start["temperature"]
    force = (mult * mass0)[:, None] * (parcels.velocity[idx] - start["velocity"]) / dt
    heat = mult * mass0 * pprops.specific_heat * dtemp / dt
    if latent is not None:
        heat = heat + mult * latent / dt
    hosts = start["deposit_host"]
    w = _clipped_weights(mesh, hosts, parcels.position[idx])
    nodes = mesh.elements[hosts]
    mom = np.stack([-np.bincount(nodes.ravel(), (w * force[:, c:c + 1]).ravel(), n) for c in range(2)], axis=1)
    energy = -np.bincount(nodes.ravel(), (w * heat[:, None]).ravel(), n)
    totals = {"momentum": force.sum(axis=0), "energy": float(heat.sum())}
    return mom, energy, totals


def manage_parcels(parcels: ParcelSet, mesh: SimplexMesh, max_per_element: int = 32,
                   min_per_element: int = 8, velocity_tol: float = 0.01, temperature_tol: float = 1.0,
                   diameter_tol: float = 0.01, pprops: ParticleProps | None = None):
    """Merge crowded, near-identical parcels and split sparse ones.

    Merging happens only in elements holding more than ``max_per_element``
    alive parcels; parcels merge when velocity agrees within
    ``velocity_tol`` (relative), temperature within ``temperature_tol`` K
    and diameter within ``diameter_tol`` (relative).  The merged state is
    the mass-weighted mean, so momentum and energy are preserved.  In
    elements with fewer than ``min_per_element`` parcels, parcels with
    multiplicity >= 2 split into two halves, the second moved halfway to
    the element centroid.
    """
    alive = np.flatnonzero(parcels.alive)
    if len(alive) == 0:
        return
    counts = np.bincount(parcels.host[alive], minlength=mesh.n_elements)
    kill = []
    for e in np.flatnonzero(counts > max_per_element):
        members = alive[parcels.host[alive] == e]
        used = np.zeros(len(members), dtype=bool)
        for a in range(len(members)):
            if used[a]:
                continue
            i = members[a]
            group = [i]
            for b in range(a + 1, len(members)):
                if used[b]:
                    continue
                j = members[b]
                vi, vj = parcels.velocity[i], parcels.velocity[j]
                vscale = max(np.linalg.norm(vi), np.linalg.norm(vj), 1e-30)
                if (np.linalg.norm(vi - vj) <= velocity_tol * vscale
                        and abs(parcels.temperature[i] - parcels.temperature[j]) <= temperature_tol
                        and abs(parcels.diameter[i] - parcels.diameter[j])
                        <= diameter_tol * max(parcels.diameter[i], 1e-30)):
                    group.append(j)
                    used[b] = True
            if len(group) > 1:
                g = np.array(group)
                mult = parcels.multiplicity[g]
                d3 = parcels.diameter[g] ** 3
                weight = mult * d3
                total = weight.sum()
                parcels.velocity[i] = (weight[:, None] * parcels.velocity[g]).sum(axis=0) / total
                parcels.temperature[i] = (weight * parcels.temperature[g]).sum() / total
                parcels.position[i] = (weight[:, None] * parcels.position[g]).sum(axis=0) / total
                parcels.diameter[i] = np.cbrt(total / mult.sum())
                parcels.multiplicity[i] = mult.sum()
                kill.extend(group[1:])
    if kill:
        parcels.alive[np.array(kill)] = False
        parcels.compact()
    alive = np.flatnonzero(parcels.alive)
    counts = np.bincount(parcels.host[alive], minlength=mesh.n_elements)
    sparse_parcels = alive[(counts[parcels.host[alive]] < min_per_element)
                           & (parcels.multiplicity[alive] >= 2.0)]
    if len(sparse_parcels):
        # never split beyond the per-element target
        room = np.maximum(min_per_element - counts, 0)
        chosen = []
        for p in sparse_parcels:
            e = parcels.host[p]
            if room[e] > 0:
                chosen.append(p)
                room[e] -= 1
        if chosen:
            chosen = np.array(chosen)
            half = parcels.multiplicity[chosen] / 2.0
            parcels.multiplicity[chosen] = half
            centroid = mesh.centroids[parcels.host[chosen]]
            new_pos = 0.5 * (parcels.position[chosen] + centroid)
            parcels.add(new_pos, parcels.velocity[chosen], parcels.temperature[chosen],
                        parcels.diameter[chosen], half, parcels.host[chosen])


class ParticleSystem:
    """Parcel cloud attached to a flow solver; ``step`` is called once per flow step."""

    def __init__(self, mesh: SimplexMesh, fluid, pprops: ParticleProps, wall_tags=(),
                 injection: Injection | None = None, stages: int = 4, two_way: bool = True,
                 manage_interval: int = 0, max_per_element: int = 32, min_per_element: int = 8):
        self.mesh = mesh
        self.fluid = fluid
        self.props = pprops
        self.wall_tags = tuple(wall_tags)
        self.injection = injection
        self.stages = stages
        self.two_way = two_way
        self.manage_interval = manage_interval
        self.max_per_element = max_per_element
        self.min_per_element = min_per_element
        self.parcels = ParcelSet()
        self.step_count = 0
        self.balance_history: list[dict] = []
        self._rng = np.random.default_rng(injection.seed if injection else 0)

    def inject(self, fluid_velocity):
        inj = self.injection
        mesh = self.mesh
        facets = mesh.facets_with_tag(inj.tag)
        choice = facets[self._rng.integers(0, len(facets), inj.parcels_per_injection)]
        s = self._rng.uniform(0.05, 0.95, inj.parcels_per_injection)
        a = mesh.node_coords[mesh.boundary_facets[choice, 0]]
        b = mesh.node_coords[mesh.boundary_facets[choice, 1]]
        hosts = mesh.facet_elements[choice]
        # start slightly inside the owning element
        pts = (1.0 - s)[:, None] * a + s[:, None] * b
        pts = pts + 1e-3 * (mesh.centroids[hosts] - pts)
        if inj.velocity is None:
            w = barycentric(mesh, hosts, pts)
            vel = _interpolate(mesh, hosts, w, fluid_velocity)
        else:
            vel = np.broadcast_to(np.asarray(inj.velocity, dtype=float), (len(pts), 2))
        self.parcels.add(pts, vel, inj.temperature, inj.diameter, inj.multiplicity, hosts)

    def step(self, solver, state, dt):
        """Advance parcels over one flow step and deposit reaction loads into ``state``."""
        self.step_count += 1
        if self.injection is not None and (self.step_count - 1) % self.injection.interval == 0:
            self.inject(state.velocity)
        info = rk_advance_parcels(self.parcels, self.mesh, self.fluid, self.props, state.velocity,
                                  state.temperature, dt, self.stages, self.wall_tags)
        latent = evaporate(self.parcels, self.props, info)
        mom, energy, totals = transfer_loads(self.parcels, self.mesh, self.props, info, dt, latent)
        if self.two_way:
            state.source_momentum += mom
            state.source_energy += energy
        self.balance_history.append({
            "step": self.step_count,
            "parcel_momentum_rate": totals["momentum"],
            "fluid_momentum_rate": mom.sum(axis=0),
            "parcel_heat_rate": totals["energy"],
            "fluid_heat_rate": float(energy.sum()),
        })
        self.parcels.alive[info["index"][info["exited"]]] = False
        if self.manage_interval and self.step_count % self.manage_interval == 0:
            manage_parcels(self.parcels, self.mesh, self.max_per_element, self.min_per_element)
        self.parcels.compact()
        return totals
