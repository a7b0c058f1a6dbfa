"""Scenario configuration, the reference gap case, output management and the CLI.

Configuration files are TOML.  Every table maps onto one of the dataclasses
below; keys without a default are required.  Units are cgs throughout and
the file must say so (``units = "cgs"``).
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np
import tomli
import tomli_w

from . import __version__
from .coupling import (DIAGNOSTICS_HEADER, EXCHANGE_MODES, CouplingError, CouplingSession, FluidAdapter,
                       SolidAdapter, build_interface_map, run_barely_coupled)
from .flow import (FlowSchemeParams, FlowSolver, FluidProps, InflowBC, OutflowBC, WallBC,
                   couette_profile)
from .heat import HeatSchemeParams, HeatSolver, SolidMaterial, SolidProps
from .io import PARCEL_HEADER, write_csv, write_json_atomic, write_vtk
from .linsolve import PRECONDITIONERS
from .mesh import AnnulusSpec, generate_annulus
from .particles import Injection, ParticleProps, ParticleSystem
from .triggers import StepCount, trigger_from_dict, trigger_to_dict

__all__ = [
    "ConfigError",
    "FluidConfig",
    "SolidConfig",
    "ParticleConfig",
    "CouplingConfig",
    "OutputConfig",
    "ScenarioConfig",
    "RunResult",
    "parse_config",
    "load_config",
    "serialize_config",
    "reference_config",
    "couette_config",
    "config_hash",
    "build_meshes",
    "build_fluid",
    "build_solid",
    "run_scenario",
    "main",
    "REFERENCE_PARAMETERS",
]

log = logging.getLogger(__name__)

REQUIRED = dataclasses.MISSING
# tags used on the generated meshes
ROTOR, INTERFACE, INFLOW, OUTFLOW, SOLID_OUTER = "rotor", "interface", "inflow", "outflow", "outer"

# gap-region parameters as listed for the reference case (cgs); golden copy
REFERENCE_PARAMETERS = {
    "inner_radius": 2.0,
    "outer_radius": 2.1,
    "outermost_radius": 4.0,
    "depth": 2.0,
    "inflow_speed": 100.0,
    "inflow_temperature": 300.0,
    "fluid_density": 0.00122,
    "inflow_pressure": 1.0e6,
    "rotor_rpm": 600.0,
    "viscosity": 0.1850e-03,
    "fluid_conductivity": 0.2400e04,
    "fluid_specific_heat": 0.1000e08,
    "particle_diameter": 0.01,
    "solid_density": 7.85,
    "solid_specific_heat": 420.0e4,
    "solid_conductivity": 50.0e5,
    "volumetric_load": 2.0e7,
    "fluid_steps_per_exchange": 500,
    "solid_steps_per_exchange": 10,
    "solid_timestep": 10.0,
    "courant": 0.8,
}


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists every problem found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


# -- configuration types -----------------------------------------------------------

@dataclass(kw_only=True)
class FluidConfig:
    inner_radius: float = REQUIRED
    outer_radius: float = REQUIRED
    n_radial: int = REQUIRED
    n_azimuthal: int = REQUIRED
    # slit: C-shaped channel with inflow and outflow at the cut; closed: pure rotation
    slit: bool = True
    depth: float = 1.0
    density: float = REQUIRED
    viscosity: float = REQUIRED
    conductivity: float = REQUIRED
    specific_heat: float = REQUIRED
    gravity: list = field(default_factory=lambda: [0.0, 0.0])
    expansion: float = 0.0
    reference_temperature: float = 300.0
    rotor_rpm: float = REQUIRED
    rotor_temperature: float = 300.0
    stator_rpm: float = 0.0
    # used only when coupling is disabled; otherwise the solid supplies it
    stator_temperature: float = 300.0
    inflow_speed: float = 0.0
    inflow_temperature: float = 300.0
    outflow_pressure: float = 0.0
    initial_temperature: float = 300.0
    rk_stages: int = 4
    theta: float = 0.5
    courant: float = 0.8
    dt_max: float = 1e-3
    dissipation: float = 0.1
    high_order_dissipation: bool = True
    rel_tolerance: float = 1e-10
    deflation_groups: int = 16
    pressure_preconditioner: str = "deflated-jacobi"
    trigger: dict = field(default_factory=lambda: {"kind": "step_count", "n": 500})


@dataclass(kw_only=True)
class SolidConfig:
    inner_radius: float = REQUIRED
    outer_radius: float = REQUIRED
    n_radial: int = REQUIRED
    n_azimuthal: int = REQUIRED
    density: float = REQUIRED
    specific_heat: float = REQUIRED
    conductivity: float = REQUIRED
    volumetric_load: float = REQUIRED
    initial_temperature: float = 300.0
    # "insulated" or a fixed temperature on the outermost circle
    outer_boundary: str = "insulated"
    outer_temperature: float = 300.0
    theta: float = 1.0
    dt: float = 10.0
    rel_tolerance: float = 1e-10
    trigger: dict = field(default_factory=lambda: {"kind": "step_count", "n": 10})


@dataclass(kw_only=True)
class ParticleConfig:
    enabled: bool = False
    density: float = 1.0
    specific_heat: float = 4.18e7
    boiling_temperature: float = 373.15
    latent_heat: float = 2.26e10
    radiation: float = 0.0
    diameter: float = 0.01
    injection_temperature: float = 300.0
    parcels_per_injection: int = 4
    injection_interval: int = 10
    multiplicity: float = 100.0
    stages: int = 4
    two_way: bool = True
    manage_interval: int = 0
    seed: int = 0


@dataclass(kw_only=True)
class CouplingConfig:
    enabled: bool = True
    mode: str = "temperature-to-fluid"
    relaxation: float = 1.0
    outer_iterations: int = 20
    # optional outer trigger table, e.g. {kind = "unknown_change", threshold = 1.0}
    outer_trigger: dict = field(default_factory=dict)


@dataclass(kw_only=True)
class OutputConfig:
    directory: str = "output"
    # snapshots every this many outer iterations (0: final state only)
    vtk_interval: int = 0
    parcel_interval: int = 0


@dataclass(kw_only=True)
class ScenarioConfig:
    name: str = REQUIRED
    units: str = REQUIRED
    fluid: FluidConfig = REQUIRED
    solid: SolidConfig | None = None
    particles: ParticleConfig = field(default_factory=ParticleConfig)
    coupling: CouplingConfig = field(default_factory=CouplingConfig)
    output: OutputConfig = field(default_factory=OutputConfig)


_SECTIONS = {"fluid": FluidConfig, "solid": SolidConfig, "particles": ParticleConfig,
             "coupling": CouplingConfig, "output": OutputConfig}


# -- parsing ------------------------------------------------------------------------

def _check_type(name, value, annotation, errors):
    ann = str(annotation)
    if ann.startswith("float"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            errors.append(f"{name}: expected a number, got {value!r}")
            return None
        return float(value)
    if ann.startswith("int"):
        if isinstance(value, bool) or not isinstance(value, int):
            errors.append(f"{name}: expected an integer, got {value!r}")
            return None
        return value
    if ann.startswith("bool"):
        if not isinstance(value, bool):
            errors.append(f"{name}: expected true/false, got {value!r}")
            return None
        return value
    if ann.startswith("str"):
        if not isinstance(value, str):
            errors.append(f"{name}: expected a string, got {value!r}")
            return None
        return value
    if ann.startswith("list"):
        if not isinstance(value, list):
            errors.append(f"{name}: expected an array, got {value!r}")
            return None
        return [float(v) for v in value]
    if ann.startswith("dict"):
        if not isinstance(value, dict):
            errors.append(f"{name}: expected a table, got {value!r}")
            return None
        return value
    return value


def _build_section(prefix, cls, table, errors):
    if not isinstance(table, dict):
        errors.append(f"{prefix}: expected a table")
        return None
    values = {}
    known = {f.name for f in dataclasses.fields(cls)}
    for key in sorted(set(table) - known):
        errors.append(f"{prefix}.{key}: unknown key")
    for f in dataclasses.fields(cls):
        name = f"{prefix}.{f.name}"
        if f.name in table:
            v = _check_type(name, table[f.name], f.type, errors)
            if v is not None:
                values[f.name] = v
        elif f.default is REQUIRED and f.default_factory is REQUIRED:
            errors.append(f"{name}: missing required key")
    try:
        return cls(**values)
    except TypeError:
        return None


def _validate(cfg: ScenarioConfig, errors):
    if cfg.units != "cgs":
        errors.append(f"units: only 'cgs' is supported, got {cfg.units!r}")
    f, s = cfg.fluid, cfg.solid
    for label, geo in (("fluid", f), ("solid", s)):
        if geo is None:
            continue
        if not 0 < geo.inner_radius < geo.outer_radius:
            errors.append(f"{label}: radii must satisfy 0 < inner_radius < outer_radius "
                          f"(got {geo.inner_radius}, {geo.outer_radius})")
        if geo.n_radial < 1 or geo.n_azimuthal < 3:
            errors.append(f"{label}: need n_radial >= 1 and n_azimuthal >= 3")
        for key in ("density", "specific_heat", "conductivity"):
            if not getattr(geo, key) > 0:
                errors.append(f"{label}.{key}: must be positive")
    if not f.viscosity > 0:
        errors.append("fluid.viscosity: must be positive")
    if len(f.gravity) != 2:
        errors.append("fluid.gravity: expected two components")
    if f.pressure_preconditioner not in PRECONDITIONERS:
        errors.append(f"fluid.pressure_preconditioner: expected one of {PRECONDITIONERS}")
    if f.pressure_preconditioner == "factorized" and not f.slit:
        errors.append("fluid.pressure_preconditioner: 'factorized' needs an outflow (slit = true)")
    if f.slit and not f.inflow_speed > 0:
        errors.append("fluid.inflow_speed: a slit channel needs a positive inflow speed")
    for label, trig in (("fluid.trigger", f.trigger), ("solid.trigger", s.trigger if s else None),
                        ("coupling.outer_trigger", cfg.coupling.outer_trigger or None)):
        if trig is None:
            continue
        try:
            trigger_from_dict(trig)
        except (ValueError, TypeError) as exc:
            errors.append(f"{label}: {exc}")
    c = cfg.coupling
    if c.mode not in EXCHANGE_MODES:
        errors.append(f"coupling.mode: expected one of {EXCHANGE_MODES}, got {c.mode!r}")
    if not 0.0 < c.relaxation <= 1.0:
        errors.append(f"coupling.relaxation: must lie in (0, 1], got {c.relaxation}")
    if c.outer_iterations < 0:
        errors.append("coupling.outer_iterations: must be >= 0")
    if c.enabled:
        if s is None:
            errors.append("solid: required when coupling.enabled = true")
        elif abs(f.outer_radius - s.inner_radius) > 1e-8:
            errors.append(f"interface mismatch: fluid.outer_radius = {f.outer_radius} but "
                          f"solid.inner_radius = {s.inner_radius}")
    if s is not None:
        if s.outer_boundary not in ("insulated", "fixed"):
            errors.append("solid.outer_boundary: expected 'insulated' or 'fixed'")
        if not 0.5 <= s.theta <= 1.0:
            errors.append("solid.theta: must lie in [0.5, 1]")
        if not s.dt > 0:
            errors.append("solid.dt: must be positive")
    if not 0.5 <= f.theta <= 1.0:
        errors.append("fluid.theta: must lie in [0.5, 1]")
    p = cfg.particles
    if p.enabled:
        if not f.slit:
            errors.append("particles: injection needs an inflow boundary (slit = true)")
        if p.multiplicity < 1:
            errors.append("particles.multiplicity: must be >= 1")
        if not p.diameter > 0:
            errors.append("particles.diameter: must be positive")


def config_from_dict(data: dict) -> ScenarioConfig:
    errors = []
    top = {k: v for k, v in data.items() if k not in _SECTIONS}
    for key in sorted(set(top) - {"name", "units"}):
        errors.append(f"{key}: unknown key")
    for key in ("name", "units"):
        if key not in data:
            errors.append(f"{key}: missing required key")
        elif not isinstance(data[key], str):
            errors.append(f"{key}: expected a string")
    sections = {}
    for key, cls in _SECTIONS.items():
        if key in data:
            sections[key] = _build_section(key, cls, data[key], errors)
        elif key == "fluid":
            _build_section(key, cls, {}, errors)
        elif key == "solid":
            coupling = data.get("coupling", {})
            if not isinstance(coupling, dict) or coupling.get("enabled", True):
                _build_section(key, cls, {}, errors)
    if errors:
        raise ConfigError(errors)
    cfg = ScenarioConfig(name=data["name"], units=data["units"], **{k: v for k, v in sections.items()})
    _validate(cfg, errors)
    if errors:
        raise ConfigError(errors)
    return cfg


def parse_config(text: str) -> ScenarioConfig:
    """Parse TOML text into a validated :class:`ScenarioConfig`.

    Raises :class:`ConfigError` naming every invalid or missing field.
    """
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError([f"syntax: {exc}"]) from exc
    return config_from_dict(data)


def load_config(path) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def _strip_none(obj):
    if isinstance(obj, dict):
        return {k: _strip_none(v) for k, v in obj.items() if v is not None}
    if isinstance(obj, list):
        return [_strip_none(v) for v in obj]
    return obj


def config_to_dict(cfg: ScenarioConfig) -> dict:
    data = _strip_none(dataclasses.asdict(cfg))
    if not data["coupling"]["outer_trigger"]:
        del data["coupling"]["outer_trigger"]
    return data


def serialize_config(cfg: ScenarioConfig) -> str:
    return tomli_w.dumps(config_to_dict(cfg))


def config_hash(cfg: ScenarioConfig) -> str:
    return hashlib.sha256(serialize_config(cfg).encode()).hexdigest()


def reference_config(**overrides) -> ScenarioConfig:
    """The gap-region case: 2-D slice of the rotor/stator gap and the stator body."""
    ref = REFERENCE_PARAMETERS
    fluid = FluidConfig(
        inner_radius=ref["inner_radius"], outer_radius=ref["outer_radius"], n_radial=4, n_azimuthal=128,
        slit=True, depth=ref["depth"], density=ref["fluid_density"], viscosity=ref["viscosity"],
        conductivity=ref["fluid_conductivity"], specific_heat=ref["fluid_specific_heat"],
        rotor_rpm=ref["rotor_rpm"], inflow_speed=ref["inflow_speed"],
        inflow_temperature=ref["inflow_temperature"], outflow_pressure=ref["inflow_pressure"],
        courant=ref["courant"], pressure_preconditioner="factorized",
        trigger={"kind": "step_count", "n": ref["fluid_steps_per_exchange"]},
    )
    solid = SolidConfig(
        inner_radius=ref["outer_radius"], outer_radius=ref["outermost_radius"], n_radial=8, n_azimuthal=64,
        density=ref["solid_density"], specific_heat=ref["solid_specific_heat"],
        conductivity=ref["solid_conductivity"], volumetric_load=ref["volumetric_load"],
        dt=ref["solid_timestep"], trigger={"kind": "step_count", "n": ref["solid_steps_per_exchange"]},
    )
    particles = ParticleConfig(enabled=True, diameter=ref["particle_diameter"])
    cfg = ScenarioConfig(name="gap-region", units="cgs", fluid=fluid, solid=solid, particles=particles,
                         coupling=CouplingConfig(), output=OutputConfig())
    return _apply_overrides(cfg, overrides)


def couette_config(**overrides) -> ScenarioConfig:
    """Fluid-only closed gap with the rotor spinning and the stator at rest."""
    ref = REFERENCE_PARAMETERS
    fluid = FluidConfig(
        inner_radius=ref["inner_radius"], outer_radius=ref["outer_radius"], n_radial=4, n_azimuthal=128,
        slit=False, density=ref["fluid_density"], viscosity=ref["viscosity"],
        conductivity=ref["fluid_conductivity"], specific_heat=ref["fluid_specific_heat"],
        rotor_rpm=ref["rotor_rpm"],
        # run until the field stops changing (|dv| per step below 1e-6 cm/s)
        trigger={"any_of": [{"kind": "unknown_change", "threshold": 1e-6}, {"kind": "step_count", "n": 5000}]},
    )
    cfg = ScenarioConfig(name="couette", units="cgs", fluid=fluid, solid=None,
                         coupling=CouplingConfig(enabled=False, outer_iterations=1))
    return _apply_overrides(cfg, overrides)


def _apply_overrides(cfg, overrides):
    """``section__key=value`` keyword overrides (e.g. ``coupling__outer_iterations=3``)."""
    for key, value in overrides.items():
        section, _, name = key.partition("__")
        target = getattr(cfg, section)
        if not name:
            setattr(cfg, section, value)
        else:
            if not hasattr(target, name):
                raise ConfigError([f"{section}.{name}: unknown key"])
            setattr(target, name, value)
    return cfg


# -- building and running ---------------------------------------------------------------

def build_meshes(cfg: ScenarioConfig):
    f = cfg.fluid
    fluid_mesh = generate_annulus(AnnulusSpec(
        f.inner_radius, f.outer_radius, f.n_radial, f.n_azimuthal, inner_tag=ROTOR, outer_tag=INTERFACE,
        slit=f.slit, slit_tags=(INFLOW, OUTFLOW)))
    solid_mesh = None
    if cfg.solid is not None:
        s = cfg.solid
        solid_mesh = generate_annulus(AnnulusSpec(s.inner_radius, s.outer_radius, s.n_radial, s.n_azimuthal,
                                                  inner_tag=INTERFACE, outer_tag=SOLID_OUTER))
    return fluid_mesh, solid_mesh


def _rpm_to_rad(rpm):
    return rpm * 2.0 * np.pi / 60.0


def build_fluid(cfg: ScenarioConfig, mesh):
    """Flow solver, initial state and (optional) particle system for ``cfg``."""
    f = cfg.fluid
    props = FluidProps(f.density, f.viscosity, f.conductivity, f.specific_heat, tuple(f.gravity),
                       f.expansion, f.reference_temperature)
    bcs = {
        ROTOR: WallBC(_rpm_to_rad(f.rotor_rpm), temperature=f.rotor_temperature),
        INTERFACE: WallBC(_rpm_to_rad(f.stator_rpm), temperature=f.stator_temperature,
                          coupled=cfg.coupling.enabled),
    }
    if f.slit:
        bcs[INFLOW] = InflowBC(f.inflow_speed, f.inflow_temperature)
        bcs[OUTFLOW] = OutflowBC(f.outflow_pressure)
    params = FlowSchemeParams(
        rk_stages=f.rk_stages, theta=f.theta, courant=f.courant, dt_max=f.dt_max, dissipation=f.dissipation,
        high_order_dissipation=f.high_order_dissipation, rel_tolerance=f.rel_tolerance,
        deflation_groups=f.deflation_groups, pressure_preconditioner=f.pressure_preconditioner)
    solver = FlowSolver(mesh, props, bcs, params)
    state = solver.initial_state(temperature=f.initial_temperature)
    particles = None
    p = cfg.particles
    if p.enabled:
        pprops = ParticleProps(p.density, p.specific_heat, p.boiling_temperature, p.latent_heat, p.radiation)
        injection = Injection(INFLOW, p.parcels_per_injection, p.injection_interval, p.diameter,
                              p.injection_temperature, p.multiplicity, seed=p.seed)
        particles = ParticleSystem(mesh, props, pprops, wall_tags=(ROTOR, INTERFACE), injection=injection,
                                   stages=p.stages, two_way=p.two_way, manage_interval=p.manage_interval)
    return solver, state, particles


def build_solid(cfg: ScenarioConfig, mesh):
    """Heat solver and initial state for the solid section of ``cfg``."""
    s = cfg.solid
    material = SolidMaterial(s.density, s.specific_heat, s.conductivity, "solid")
    fixed = {SOLID_OUTER: s.outer_temperature} if s.outer_boundary == "fixed" else None
    solver = HeatSolver(mesh, SolidProps.uniform(material, mesh.n_elements),
                        HeatSchemeParams(theta=s.theta, dt=s.dt, rel_tolerance=s.rel_tolerance),
                        fixed=fixed, interface_tag=INTERFACE)
    state = solver.initial_state(s.initial_temperature, s.volumetric_load)
    return solver, state


@dataclass
class RunResult:
    status: int
    summary: dict
    diagnostics: list
    output_dir: str
    error: str | None = None


def _write_snapshot(out, label, fluid_mesh, fluid_state, solid_mesh=None, solid_state=None, files=None):
    path = os.path.join(out, f"fluid_{label}.vtk")
    write_vtk(path, fluid_mesh, {"temperature": fluid_state.temperature, "pressure": fluid_state.pressure,
                                 "velocity": fluid_state.velocity})
    files.append(path)
    if solid_mesh is not None:
        path = os.path.join(out, f"solid_{label}.vtk")
        write_vtk(path, solid_mesh, {"temperature": solid_state.temperature},
                  {"volumetric_load": solid_state.volumetric_load})
        files.append(path)


def _write_parcels(out, label, particles, files):
    path = os.path.join(out, f"parcels_{label}.csv")
    write_csv(path, PARCEL_HEADER, particles.parcels.csv_rows())
    files.append(path)


def _conservation_summary(particles):
    if particles is None or not particles.balance_history:
        return {"max_momentum_imbalance": 0.0, "max_energy_imbalance": 0.0}
    mom = en = 0.0
    for rec in particles.balance_history:
        p, f = np.asarray(rec["parcel_momentum_rate"]), np.asarray(rec["fluid_momentum_rate"])
        scale = max(np.abs(p).max(), 1e-300)
        mom = max(mom, float(np.abs(p + f).max() / scale))
        scale = max(abs(rec["parcel_heat_rate"]), 1e-300)
        en = max(en, abs(rec["parcel_heat_rate"] + rec["fluid_heat_rate"]) / scale)
    return {"max_momentum_imbalance": mom, "max_energy_imbalance": en}


def run_scenario(cfg: ScenarioConfig, output_dir: str | None = None, outer_iterations: int | None = None,
                 progress=None) -> RunResult:
    """Build everything, run, and write outputs into ``output_dir``.

    Always writes ``manifest.json`` (atomically, last); on failure the
    status is 1 and whatever was written before stays on disk.
    """
    out = output_dir or cfg.output.directory
    os.makedirs(out, exist_ok=True)
    n_outer = cfg.coupling.outer_iterations if outer_iterations is None else outer_iterations
    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    files: list[str] = []
    summary: dict = {"name": cfg.name, "outer_iterations_requested": n_outer}
    diagnostics: list = []
    status, error = 0, None
    try:
        fluid_mesh, solid_mesh = build_meshes(cfg)
        fluid, fstate, particles = build_fluid(cfg, fluid_mesh)
        fluid_trigger = trigger_from_dict(cfg.fluid.trigger)
        if cfg.coupling.enabled:
            solid, sstate = build_solid(cfg, solid_mesh)
            imap = build_interface_map(fluid_mesh, solid_mesh, INTERFACE)
            session = CouplingSession(
                FluidAdapter(fluid, fstate, fluid_trigger, INTERFACE, particles),
                SolidAdapter(solid, sstate, trigger_from_dict(cfg.solid.trigger)),
                imap, mode=cfg.coupling.mode, relaxation=cfg.coupling.relaxation)
            outer = StepCount(n_outer) if n_outer > 0 else 0
            if cfg.coupling.outer_trigger and n_outer > 0:
                outer = outer | trigger_from_dict(cfg.coupling.outer_trigger)
            csv_path = os.path.join(out, "diagnostics.csv")
            files.append(csv_path)
            interval = cfg.output.vtk_interval
            p_interval = cfg.output.parcel_interval

            def after_iteration(row):
                if progress is not None:
                    progress(row)
                if interval and row.iter % interval == 0:
                    _write_snapshot(out, f"{row.iter:04d}", fluid_mesh, fstate, solid_mesh, sstate, files)
                if particles is not None and p_interval and row.iter % p_interval == 0:
                    _write_parcels(out, f"{row.iter:04d}", particles, files)

            try:
                diagnostics = run_barely_coupled(session, outer, csv_path, on_row=after_iteration)
            finally:
                _write_snapshot(out, "final", fluid_mesh, fstate, solid_mesh, sstate, files)
                if particles is not None:
                    _write_parcels(out, "final", particles, files)
            summary.update({
                "generation": float(cfg.solid.volumetric_load * solid_mesh.areas.sum()),
                "fluid_time": fstate.time,
                "solid_time": sstate.time,
                "fluid_steps": fluid.steps_taken,
                "max_divergence": max((r.divergence_norm for r in fluid.history), default=0.0),
                "max_divergence_ratio": max((r.divergence_ratio for r in fluid.history), default=0.0),
            })
        else:
            history_rows = []
            for it in range(n_outer):
                fluid.advance(fstate, fluid_trigger, particles)
                rec = fluid.history[-1] if fluid.history else None
                if rec is not None:
                    history_rows.append((it + 1, rec.step, rec.time, rec.dt, rec.momentum_residual,
                                         rec.divergence_norm))
            path = os.path.join(out, "flow_history.csv")
            write_csv(path, ("macro_step", "step", "time", "dt", "momentum_residual", "divergence"),
                      history_rows)
            files.append(path)
            _write_snapshot(out, "final", fluid_mesh, fstate, files=files)
            summary.update({"fluid_time": fstate.time, "fluid_steps": fluid.steps_taken,
                            "max_divergence": max((r.divergence_norm for r in fluid.history), default=0.0),
                            "max_divergence_ratio": max((r.divergence_ratio for r in fluid.history),
                                                        default=0.0)})
            if not cfg.fluid.slit:
                f = cfg.fluid
                xy = fluid_mesh.node_coords
                r = np.hypot(xy[:, 0], xy[:, 1])
                v_theta = (-xy[:, 1] * fstate.velocity[:, 0] + xy[:, 0] * fstate.velocity[:, 1]) / r
                exact = couette_profile(r, f.inner_radius, f.outer_radius, _rpm_to_rad(f.rotor_rpm),
                                        _rpm_to_rad(f.stator_rpm))
                scale = np.abs(exact).max()
                summary["couette_linf_relative_error"] = float(np.abs(v_theta - exact).max() / scale)
        summary.update(_conservation_summary(particles))
        if particles is not None:
            summary["parcels_alive"] = particles.parcels.n_alive
    except CouplingError as exc:
        status, error = 1, str(exc)
        diagnostics = exc.diagnostics
    except Exception as exc:  # any module error ends the run with status 1
        status, error = 1, f"{type(exc).__name__}: {exc}"
    summary["status"] = status
    summary["error"] = error
    summary["diagnostics_rows"] = len(diagnostics)
    summary["final_diagnostics"] = (dict(zip(DIAGNOSTICS_HEADER, diagnostics[-1].as_tuple()))
                                    if diagnostics else None)
    summary["wall_seconds"] = time.perf_counter() - t0
    summary_path = os.path.join(out, "summary.json")
    try:
        write_json_atomic(summary_path, summary)
        files.append(summary_path)
        config_path = os.path.join(out, "config.toml")
        with open(config_path, "w") as fh:
            fh.write(serialize_config(cfg))
        files.append(config_path)
    except OSError as exc:
        status, error = 1, f"could not write outputs: {exc}"
    manifest = {
        "config_hash": config_hash(cfg),
        "started": started.isoformat(),
        "finished": datetime.now(timezone.utc).isoformat(),
        "files": [{"name": os.path.relpath(p, out), "bytes": os.path.getsize(p)}
                  for p in dict.fromkeys(files) if os.path.exists(p)],
        "status": status,
        "error": error,
        "version": __version__,
    }
    write_json_atomic(os.path.join(out, "manifest.json"), manifest)
    return RunResult(status, summary, diagnostics, out, error)


# -- command line -------------------------------------------------------------------------

def _parser():
    parser = argparse.ArgumentParser(prog="barelycoupled",
                                     description="Barely coupled fluid/solid heat transfer runs.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario")
    run.add_argument("config")
    run.add_argument("--output-dir")
    run.add_argument("--outer-iters", type=int)
    run.add_argument("--json-summary", action="store_true",
                     help="print the final diagnostics row as JSON on stdout")
    val = sub.add_parser("validate", help="check a configuration file")
    val.add_argument("config")
    mesh = sub.add_parser("mesh", help="write the meshes only")
    mesh.add_argument("config")
    mesh.add_argument("--output-dir")
    sub.add_parser("version", help="print the version")
    ref = sub.add_parser("reference-config", help="print a configuration file")
    ref.add_argument("--case", choices=("gap", "couette"), default="gap")
    return parser


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "version":
        print(__version__)
        return 0
    if args.command == "reference-config":
        cfg = reference_config() if args.case == "gap" else couette_config()
        sys.stdout.write(serialize_config(cfg))
        return 0
    try:
        cfg = load_config(args.config)
    except OSError as exc:
        print(f"error: cannot read {args.config}: {exc.strerror or exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.command == "validate":
        print(f"{args.config}: ok ({cfg.name})")
        return 0
    if args.command == "mesh":
        out = args.output_dir or cfg.output.directory
        os.makedirs(out, exist_ok=True)
        fluid_mesh, solid_mesh = build_meshes(cfg)
        write_vtk(os.path.join(out, "fluid_mesh.vtk"), fluid_mesh)
        print(f"fluid mesh: {fluid_mesh.n_nodes} nodes, {fluid_mesh.n_elements} triangles")
        if solid_mesh is not None:
            write_vtk(os.path.join(out, "solid_mesh.vtk"), solid_mesh)
            print(f"solid mesh: {solid_mesh.n_nodes} nodes, {solid_mesh.n_elements} triangles")
        return 0
    result = run_scenario(cfg, args.output_dir, args.outer_iters)
    if result.status != 0:
        print(f"error: {result.error}", file=sys.stderr)
    if args.json_summary:
        print(json.dumps(result.summary["final_diagnostics"], sort_keys=True))
    return result.status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
