"""Barely coupled orchestration of a fast fluid code and a slow solid code.

Each outer iteration every code imports the latest interface data, runs on
its own clock until its stop trigger fires, and exports.  Clocks are never
synchronised: the fluid does not skip ahead by the time the solid covered.

Interface data moves between non-matching boundary discretisations through
an :class:`InterfaceMap` (nearest-point projection onto the other side's
boundary polyline with linear weights; fluxes are rescaled so the boundary
integral is conserved exactly).
"""
from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import fem
from .mesh import SimplexMesh
from .triggers import ProgressRecord, StepCount, StopTrigger

__all__ = [
    "InterfaceError",
    "CouplingError",
    "boundary_chain",
    "InterfaceMap",
    "build_interface_map",
    "transfer_field",
    "compute_wall_heat_flux",
    "CodeAdapter",
    "FluidAdapter",
    "SolidAdapter",
    "DiagnosticsRow",
    "CouplingSession",
    "run_barely_coupled",
    "record_diagnostics",
    "DIAGNOSTICS_HEADER",
    "EXCHANGE_MODES",
]

log = logging.getLogger(__name__)

DIAGNOSTICS_HEADER = ("iter", "sum_abs_dT", "q_cfd", "q_ctd", "tmin_cfd", "tmax_cfd", "tmin_ctd", "tmax_ctd")
# temperature-to-fluid: fluid gets a wall temperature, solid gets a flux
# flux-to-fluid: fluid gets a wall flux, solid gets a surface temperature
EXCHANGE_MODES = ("temperature-to-fluid", "flux-to-fluid")
GEOMETRIC_TOLERANCE = 1e-8


class InterfaceError(ValueError):
    pass


class CouplingError(RuntimeError):
    """An adapter failed; ``diagnostics`` holds the rows recorded so far."""

    def __init__(self, message, diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


# -- interface geometry ---------------------------------------------------------------

def boundary_chain(mesh: SimplexMesh, tag: str):
    """Order the facets of ``tag`` into one polyline.

    Returns ``(nodes, facets, closed)`` where ``facets[i]`` joins
    ``nodes[i]`` and ``nodes[i + 1]`` (cyclically when closed).
    """
    facets = mesh.facets_with_tag(tag)
    if len(facets) == 0:
        raise InterfaceError(f"no facets tagged {tag!r}")
    pairs = mesh.boundary_facets[facets]
    adjacency: dict[int, list] = {}
    for f, (a, b) in zip(facets, pairs):
        adjacency.setdefault(int(a), []).append((int(b), int(f)))
        adjacency.setdefault(int(b), []).append((int(a), int(f)))
    degree = {n: len(v) for n, v in adjacency.items()}
    if any(d > 2 for d in degree.values()):
        raise InterfaceError(f"boundary {tag!r} branches; cannot order it as a chain")
    ends = sorted(n for n, d in degree.items() if d == 1)
    if len(ends) not in (0, 2):
        raise InterfaceError(f"boundary {tag!r} is not a single connected chain")
    closed = not ends
    start = ends[0] if ends else min(adjacency)
    nodes, order = [start], []
    used = set()
    current = start
    while True:
        nxt = [(n, f) for n, f in adjacency[current] if f not in used]
        if not nxt:
            break
        n, f = min(nxt)
        used.add(f)
        order.append(f)
        if closed and n == start:
            break
        nodes.append(n)
        current = n
    if len(order) != len(facets):
        raise InterfaceError(f"boundary {tag!r} is not a single connected chain")
    return np.array(nodes), np.array(order), closed


def _project_onto_polyline(points, chain, closed, allowance, point_allowance=0.0):
    """Linear-interpolation weights of each point on its nearest chain segment.

    Returns (rows, cols, weights, max_excess) where ``cols`` index chain
    vertices and ``max_excess`` is the largest distance beyond the
    per-segment ``allowance`` plus the per-point ``point_allowance``.
    """
    n = len(chain)
    a_idx = np.arange(n if closed else n - 1)
    b_idx = (a_idx + 1) % n
    a = chain[a_idx]
    b = chain[b_idx]
    seg = b - a
    seg_len2 = np.einsum("sd,sd->s", seg, seg)
    rel = points[:, None, :] - a[None, :, :]
    t = np.clip(np.einsum("psd,sd->ps", rel, seg) / seg_len2[None, :], 0.0, 1.0)
    foot = a[None] + t[..., None] * seg[None]
    dist = np.linalg.norm(points[:, None, :] - foot, axis=2)
    best = np.argmin(dist, axis=1)
    rows = np.arange(len(points))
    tb = t[rows, best]
    excess = dist[rows, best] - allowance[best] - point_allowance
    cols = np.stack([a_idx[best], b_idx[best]], axis=1)
    weights = np.stack([1.0 - tb, tb], axis=1)
    return np.repeat(rows, 2), cols.ravel(), weights.ravel(), float(np.max(excess, initial=-np.inf))


def _turning_allowance(chain, closed):
    """Per-segment allowance for a polyline approximating a curve.

    Two discretisations of the same curve differ by at most the chordal sag,
    about ``h * turning_angle / 4`` for segment length h.
    """
    n = len(chain)
    a_idx = np.arange(n if closed else n - 1)
    seg = chain[(a_idx + 1) % n] - chain[a_idx]
    length = np.linalg.norm(seg, axis=1)
    direction = seg / length[:, None]
    nseg = len(seg)
    turn = np.zeros(nseg + 1)
    for k in range(1, nseg + (1 if closed else 0)):
        u, v = direction[k - 1], direction[k % nseg]
        turn[k] = np.arccos(np.clip(u @ v, -1.0, 1.0))
    if closed:
        turn[0] = turn[nseg]
    left, right = turn[:nseg], turn[1:nseg + 1]
    return GEOMETRIC_TOLERANCE + length * np.maximum(left, right) / 4.0 + length * np.maximum(left, right) ** 2


@dataclass
class _Side:
    mesh: SimplexMesh
    tag: str
    nodes: np.ndarray          # nodes_with_tag order (public sample order)
    facets: np.ndarray         # facets_with_tag order
    chain_nodes: np.ndarray
    chain_facets: np.ndarray
    closed: bool

    @property
    def facet_lengths(self):
        return self.mesh.facet_lengths[self.facets]

    def midpoints(self, facets):
        return self.mesh.node_coords[self.mesh.boundary_facets[facets]].mean(axis=1)

    def facet_sag(self):
        """Chordal sag allowance of each facet, in ``facets`` order."""
        chain = self.mesh.node_coords[self.chain_nodes]
        sag = _turning_allowance(chain, self.closed)
        out = np.empty(len(self.facets))
        out[np.searchsorted(self.facets, self.chain_facets)] = sag
        return out


def _side(mesh, tag):
    chain_nodes, chain_facets, closed = boundary_chain(mesh, tag)
    return _Side(mesh, tag, mesh.nodes_with_tag(tag), mesh.facets_with_tag(tag),
                 chain_nodes, chain_facets, closed)


def _sample_operator(target_points, source: _Side, by_facet: bool, what: str, target_allowance=0.0):
    """Sparse (n_target, n_source_samples) weights, columns in public sample order.

    ``target_allowance`` is how far each target sample may itself sit off the
    curve (facet midpoints lie a chordal sag inside it).
    """
    mesh = source.mesh
    if by_facet:
        chain_pts = source.midpoints(source.chain_facets)
        chain_to_public = np.searchsorted(source.facets, source.chain_facets)
        n_src = len(source.facets)
    else:
        chain_pts = mesh.node_coords[source.chain_nodes]
        chain_to_public = np.searchsorted(source.nodes, source.chain_nodes)
        n_src = len(source.nodes)
    if len(chain_pts) == 1:
        rows = np.arange(len(target_points))
        return sp.csr_matrix((np.ones(len(rows)), (rows, np.zeros_like(rows))), shape=(len(rows), n_src))
    allowance = _turning_allowance(chain_pts, source.closed)
    if by_facet:
        # midpoints sit a sag inside the curve; allow the source facets' own sag too
        allowance = allowance + np.max(mesh.facet_lengths[source.facets]) ** 2 / 8.0 / max(
            np.min(np.linalg.norm(chain_pts, axis=1)), 1e-300)
    rows, cols, weights, excess = _project_onto_polyline(target_points, chain_pts, source.closed, allowance,
                                                         target_allowance)
    if excess > 0:
        raise InterfaceError(f"{what}: interface curves deviate by {excess:.3e} cm beyond tolerance")
    op = sp.csr_matrix((weights, (rows, chain_to_public[cols])), shape=(len(target_points), n_src))
    op.sum_duplicates()
    return op


@dataclass
class InterfaceMap:
    """Sampling operators between the fluid and solid interface boundaries.

    Node operators act on arrays ordered as ``mesh.nodes_with_tag(tag)``;
    facet operators on arrays ordered as ``mesh.facets_with_tag(tag)``.
    Every row of every operator sums to one.
    """

    fluid: _Side
    solid: _Side
    fluid_from_solid_nodes: sp.csr_matrix
    solid_from_fluid_nodes: sp.csr_matrix
    fluid_from_solid_facets: sp.csr_matrix
    solid_from_fluid_facets: sp.csr_matrix

    @property
    def fluid_facet_lengths(self):
        return self.fluid.facet_lengths

    @property
    def solid_facet_lengths(self):
        return self.solid.facet_lengths


def build_interface_map(fluid_mesh: SimplexMesh, solid_mesh: SimplexMesh, fluid_tag: str,
                        solid_tag: str | None = None) -> InterfaceMap:
    """Build the node and facet sampling operators both ways.

    Raises :class:`InterfaceError` if either side's samples lie farther
    from the other side's polyline than 1e-8 cm plus the chordal sag of the
    discretisations.
    """
    solid_tag = solid_tag or fluid_tag
    f = _side(fluid_mesh, fluid_tag)
    s = _side(solid_mesh, solid_tag)
    f_nodes = fluid_mesh.node_coords[f.nodes]
    s_nodes = solid_mesh.node_coords[s.nodes]
    return InterfaceMap(
        fluid=f, solid=s,
        fluid_from_solid_nodes=_sample_operator(f_nodes, s, False, "fluid nodes on solid boundary"),
        solid_from_fluid_nodes=_sample_operator(s_nodes, f, False, "solid nodes on fluid boundary"),
        fluid_from_solid_facets=_sample_operator(f.midpoints(f.facets), s, True, "fluid facets on solid boundary",
                                                 f.facet_sag()),
        solid_from_fluid_facets=_sample_operator(s.midpoints(s.facets), f, True, "solid facets on fluid boundary",
                                                 s.facet_sag()),
    )


def transfer_field(imap: InterfaceMap, values, direction: str, kind: str = "temperature"):
    """Move interface samples to the other side.

    ``direction`` is ``"solid_to_fluid"`` or ``"fluid_to_solid"``; ``kind``
    is ``"temperature"`` (nodal samples, interpolated) or ``"flux"`` (per
    facet, interpolated and then corrected so that the integral over the
    interface is identical on both sides).
    """
    values = np.asarray(values, dtype=float)
    if direction == "solid_to_fluid":
        ops = (imap.fluid_from_solid_nodes, imap.fluid_from_solid_facets)
        src_len, dst_len = imap.solid_facet_lengths, imap.fluid_facet_lengths
    elif direction == "fluid_to_solid":
        ops = (imap.solid_from_fluid_nodes, imap.solid_from_fluid_facets)
        src_len, dst_len = imap.fluid_facet_lengths, imap.solid_facet_lengths
    else:
        raise ValueError(f"unknown transfer direction {direction!r}")
    if kind == "temperature":
        if values.shape != (ops[0].shape[1],):
            raise ValueError(f"expected {ops[0].shape[1]} nodal samples, got {values.shape}")
        return ops[0] @ values
    if kind != "flux":
        raise ValueError(f"unknown field kind {kind!r}")
    if values.shape != (ops[1].shape[1],):
        raise ValueError(f"expected {ops[1].shape[1]} facet samples, got {values.shape}")
    out = ops[1] @ values
    total_src = float(values @ src_len)
    total_dst = float(out @ dst_len)
    if total_dst != 0.0 and 0.5 < total_src / total_dst < 2.0:
        out = out * (total_src / total_dst)
    else:
        out = out + (total_src - total_dst) / dst_len.sum()
    return out


def compute_wall_heat_flux(mesh: SimplexMesh, temperature, conductivity: float, facets) -> np.ndarray:
    """Per-facet ``q = -k dT/dn`` (n outward) from the owning element's gradient.

    Positive values mean heat leaving the domain through the facet.
    """
    facets = np.asarray(facets)
    owners = mesh.facet_elements[facets]
    grad = np.einsum("ek,ekd->ed", np.asarray(temperature)[mesh.elements[owners]],
                     mesh.shape_gradients[owners])
    return -conductivity * np.einsum("ed,ed->e", grad, mesh.facet_normals[facets])


# -- adapters -----------------------------------------------------------------------

class CodeAdapter:
    """One code in the loop.

    ``import_data`` takes a dict with ``"temperature"`` (nodal samples) or
    ``"heat_flux"`` (per facet, into this code); ``export_data`` returns
    ``{"temperature": ..., "heat_flux": ...}`` with the flux leaving this
    code.  ``advance`` runs to the code's stop trigger and returns the
    :class:`ProgressRecord`.
    """

    name = "code"

    @property
    def clock(self) -> float:
        raise NotImplementedError

    def import_data(self, data: dict):
        raise NotImplementedError

    def advance(self) -> ProgressRecord:
        raise NotImplementedError

    def export_data(self) -> dict:
        raise NotImplementedError


class FluidAdapter(CodeAdapter):
    name = "fluid"

    def __init__(self, solver, state, trigger: StopTrigger | int, interface_tag: str, particles=None):
        self.solver = solver
        self.state = state
        self.trigger = StepCount(trigger) if isinstance(trigger, int) else trigger
        self.tag = interface_tag
        self.particles = particles
        self.runs: list[ProgressRecord] = []
        self.held_temperature = None
        self.held_flux = None

    @property
    def clock(self):
        return self.state.time

    def import_data(self, data):
        if "temperature" in data:
            self.held_temperature = np.asarray(data["temperature"], dtype=float).copy()
            self.solver.set_wall_temperature(self.tag, self.held_temperature)
        if "heat_flux" in data:
            self.held_flux = np.asarray(data["heat_flux"], dtype=float).copy()
            self.solver.set_wall_flux(self.tag, self.held_flux)

    def advance(self):
        progress = self.solver.advance(self.state, self.trigger, self.particles)
        self.runs.append(progress)
        return progress

    def export_data(self):
        mesh = self.solver.mesh
        return {
            "temperature": self.state.temperature[mesh.nodes_with_tag(self.tag)].copy(),
            "heat_flux": compute_wall_heat_flux(mesh, self.state.temperature,
                                                self.solver.props.conductivity,
                                                mesh.facets_with_tag(self.tag)),
        }


class SolidAdapter(CodeAdapter):
    name = "solid"

    def __init__(self, solver, state, trigger: StopTrigger | int):
        self.solver = solver
        self.state = state
        self.trigger = StepCount(trigger) if isinstance(trigger, int) else trigger
        self.runs: list[ProgressRecord] = []
        self.held_temperature = None
        self.held_flux = None

    @property
    def clock(self):
        return self.state.time

    def import_data(self, data):
        if "temperature" in data:
            self.held_temperature = np.asarray(data["temperature"], dtype=float).copy()
            self.solver.set_interface_temperature(self.state, self.held_temperature)
        if "heat_flux" in data:
            self.held_flux = np.asarray(data["heat_flux"], dtype=float).copy()
            self.solver.set_interface_flux(self.state, self.held_flux)

    def advance(self):
        progress = self.solver.advance(self.state, self.trigger)
        self.runs.append(progress)
        return progress

    def export_data(self):
        solver = self.solver
        temps = solver.surface_temperature(self.state)
        if solver.interface_dirichlet:
            flux_out = -solver.interface_reaction_flux()
        else:
            flux_out = -self.state.interface_flux[solver.interface_facets]
        return {"temperature": temps, "heat_flux": flux_out}


# -- session ------------------------------------------------------------------------

@dataclass
class DiagnosticsRow:
    iter: int
    sum_abs_dT: float
    q_cfd: float
    q_ctd: float
    tmin_cfd: float
    tmax_cfd: float
    tmin_ctd: float
    tmax_ctd: float

    def as_tuple(self):
        return tuple(getattr(self, k) for k in DIAGNOSTICS_HEADER)


@dataclass
class CouplingSession:
    """Orchestrator state.

    ``mode`` picks which side receives the temperature (see
    ``EXCHANGE_MODES``); ``relaxation`` under-relaxes the exchanged
    temperature.  ``interface_map`` may be None only for stub adapters that
    exchange nothing.
    """

    fluid: CodeAdapter
    solid: CodeAdapter
    interface_map: InterfaceMap | None = None
    mode: str = "temperature-to-fluid"
    relaxation: float = 1.0
    diagnostics: list = field(default_factory=list)
    call_log: list = field(default_factory=list)
    outer_progress: ProgressRecord = field(default_factory=ProgressRecord)
    iteration: int = 0

    def __post_init__(self):
        if self.mode not in EXCHANGE_MODES:
            raise ValueError(f"unknown exchange mode {self.mode!r}; expected one of {EXCHANGE_MODES}")
        if not 0.0 < self.relaxation <= 1.0:
            raise ValueError(f"relaxation must lie in (0, 1], got {self.relaxation}")
        self._to_fluid = None
        self._last_fluid_export = None
        self._last_solid_export = None

    # the orchestrator treats interface data uniformly; these helpers map it
    def _fluid_payload(self, solid_export):
        imap = self.interface_map
        if imap is None:
            return {}
        if self.mode == "temperature-to-fluid":
            new = transfer_field(imap, solid_export["temperature"], "solid_to_fluid", "temperature")
            held = getattr(self.fluid, "held_temperature", None)
            if held is not None and self.relaxation < 1.0:
                new = self.relaxation * new + (1.0 - self.relaxation) * held
            return {"temperature": new}
        return {"heat_flux": transfer_field(imap, solid_export["heat_flux"], "solid_to_fluid", "flux")}

    def _solid_payload(self, fluid_export):
        imap = self.interface_map
        if imap is None:
            return {}
        if self.mode == "temperature-to-fluid":
            return {"heat_flux": transfer_field(imap, fluid_export["heat_flux"], "fluid_to_solid", "flux")}
        new = transfer_field(imap, fluid_export["temperature"], "fluid_to_solid", "temperature")
        held = getattr(self.solid, "held_temperature", None)
        if held is None:
            held = self.solid.export_data()["temperature"]
        if self.relaxation < 1.0:
            new = self.relaxation * new + (1.0 - self.relaxation) * held
        return {"temperature": new}

    def outer_iteration(self):
        if self._to_fluid is None:
            self._to_fluid = self._fluid_payload(self.solid.export_data()) if self.interface_map else {}
        self.call_log.append("fluid")
        self.fluid.import_data(self._to_fluid)
        self.fluid.advance()
        fluid_out = self.fluid.export_data()
        to_solid = self._solid_payload(fluid_out)
        # mismatch seen by the temperature receiver when it imports
        solid_held = getattr(self.solid, "held_temperature", None)
        if solid_held is None and self.interface_map is not None:
            solid_held = self.solid.export_data()["temperature"]
        self.call_log.append("solid")
        self.solid.import_data(to_solid)
        self.solid.advance()
        solid_out = self.solid.export_data()
        self._to_fluid = self._fluid_payload(solid_out)
        self.iteration += 1
        row = record_diagnostics(self, fluid_out, solid_out, to_solid, solid_held)
        self.diagnostics.append(row)
        self.outer_progress.record_step(0.0, residual=row.sum_abs_dT, change=row.sum_abs_dT)
        self.outer_progress.heat_load_fluid = row.q_cfd
        self.outer_progress.heat_load_solid = row.q_ctd
        return row


def record_diagnostics(session: CouplingSession, fluid_out, solid_out, to_solid, solid_held) -> DiagnosticsRow:
    """One row: interface mismatch, heat loads (solid -> fluid positive), extrema."""
    imap = session.interface_map
    if imap is None:
        return DiagnosticsRow(session.iteration, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    f_len, s_len = imap.fluid_facet_lengths, imap.solid_facet_lengths
    tf, ts = fluid_out["temperature"], solid_out["temperature"]
    if session.mode == "temperature-to-fluid":
        held = session.fluid.held_temperature
        incoming = transfer_field(imap, ts, "solid_to_fluid", "temperature")
        mismatch = float(np.sum(np.abs(incoming - held)))
        q_cfd = -float(fluid_out["heat_flux"] @ f_len)
        q_ctd = -float(to_solid["heat_flux"] @ s_len)
    else:
        incoming = to_solid["temperature"]
        mismatch = float(np.sum(np.abs(incoming - solid_held)))
        q_cfd = float(session.fluid.held_flux @ f_len) if session.fluid.held_flux is not None else 0.0
        q_ctd = float(solid_out["heat_flux"] @ s_len)
    return DiagnosticsRow(session.iteration, mismatch, q_cfd, q_ctd, float(tf.min()), float(tf.max()),
                          float(ts.min()), float(ts.max()))


def _format(v):
    return str(v) if isinstance(v, (int, np.integer)) else repr(float(v))


def run_barely_coupled(session: CouplingSession, outer: int | StopTrigger = 20, csv_path=None,
                       max_outer: int = 10_000, on_row=None) -> list:
    """Run outer iterations until ``outer`` (count or trigger) is reached.

    With ``csv_path`` each row is appended and flushed as soon as it exists,
    so a failure leaves the rows recorded so far on disk.  ``on_row(row)``
    is called after each iteration.  Adapter failures raise
    :class:`CouplingError` carrying the rows recorded so far.
    """
    trigger = StepCount(outer) if isinstance(outer, (int, np.integer)) and outer > 0 else outer
    handle = None
    writer = None
    if csv_path is not None:
        os.makedirs(os.path.dirname(os.path.abspath(csv_path)), exist_ok=True)
        handle = open(csv_path, "w", newline="")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(DIAGNOSTICS_HEADER)
        handle.flush()
    try:
        if isinstance(trigger, (int, np.integer)):
            return session.diagnostics
        for _ in range(max_outer):
            if trigger.fires(session.outer_progress):
                break
            try:
                row = session.outer_iteration()
            except Exception as exc:
                raise CouplingError(f"outer iteration {session.iteration + 1} failed: {exc}",
                                    list(session.diagnostics)) from exc
            if writer is not None:
                writer.writerow([_format(v) for v in row.as_tuple()])
                handle.flush()
            if on_row is not None:
                on_row(row)
        return session.diagnostics
    finally:
        if handle is not None:
            handle.close()
