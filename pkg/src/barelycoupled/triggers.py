"""Stop triggers: predicates over a code's progress record that end a run.

Each code advances until its trigger fires.  The same types serve the outer
coupling loop (e.g. ``UnknownChange`` on the interface temperature
mismatch).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ProgressRecord",
    "StopTrigger",
    "TimeIncrement",
    "StepCount",
    "ResidualDecrease",
    "UnknownChange",
    "GeometryChange",
    "QuasiPeriodic",
    "EnergyBalance",
    "AnyOf",
    "check_trigger",
    "trigger_from_dict",
    "trigger_to_dict",
]


@dataclass
class ProgressRecord:
    """What a code has done since its current run started."""

    elapsed_time: float = 0.0
    steps: int = 0
    residuals: list = field(default_factory=list)
    # norm of the change of the monitored unknowns over the last step
    unknown_change: float | None = None
    geometry_change: float = 0.0
    # scalar monitored for periodicity (e.g. a probe value per step)
    signal: list = field(default_factory=list)
    heat_load_fluid: float | None = None
    heat_load_solid: float | None = None

    def record_step(self, dt, residual=None, change=None, signal=None):
        self.elapsed_time += dt
        self.steps += 1
        if residual is not None:
            self.residuals.append(float(residual))
        if change is not None:
            self.unknown_change = float(change)
        if signal is not None:
            self.signal.append(float(signal))


class StopTrigger:
    def fires(self, progress: ProgressRecord) -> bool:  # pragma: no cover - interface
        raise NotImplementedError

    def __or__(self, other):
        return AnyOf((self, other))


def _positive(name, value):
    if not value > 0:
        raise ValueError(f"{name} must be positive, got {value}")


@dataclass(frozen=True)
class TimeIncrement(StopTrigger):
    budget: float
    # relative slack so that n * dt reaching the budget by rounding still fires
    rel_slack: float = 1e-12

    def __post_init__(self):
        _positive("time budget", self.budget)

    def fires(self, progress):
        return progress.elapsed_time >= self.budget * (1.0 - self.rel_slack)


@dataclass(frozen=True)
class StepCount(StopTrigger):
    n: int

    def __post_init__(self):
        _positive("step count", self.n)

    def fires(self, progress):
        return progress.steps >= self.n


@dataclass(frozen=True)
class ResidualDecrease(StopTrigger):
    """Fires once the residual dropped by ``factor`` from its first value."""

    factor: float

    def __post_init__(self):
        _positive("residual decrease factor", self.factor)

    def fires(self, progress):
        res = progress.residuals
        if not res:
            return False
        first, last = res[0], res[-1]
        if first == 0.0:
            return True
        return first / max(last, 1e-300) >= self.factor


@dataclass(frozen=True)
class UnknownChange(StopTrigger):
    """Fires when the latest step changed the unknowns by less than ``threshold``."""

    threshold: float

    def __post_init__(self):
        _positive("unknown-change threshold", self.threshold)

    def fires(self, progress):
        return progress.unknown_change is not None and progress.unknown_change < self.threshold


@dataclass(frozen=True)
class GeometryChange(StopTrigger):
    threshold: float

    def __post_init__(self):
        _positive("geometry-change threshold", self.threshold)

    def fires(self, progress):
        return progress.geometry_change >= self.threshold


@dataclass(frozen=True)
class QuasiPeriodic(StopTrigger):
    """Fires when the last two windows of the monitored signal agree.

    Compares the final ``window`` samples against the ``window`` samples
    before them; the maximum difference relative to the signal range must
    be below ``tolerance``.
    """

    window: int
    tolerance: float

    def __post_init__(self):
        _positive("window", self.window)
        _positive("tolerance", self.tolerance)

    def fires(self, progress):
        sig = np.asarray(progress.signal, dtype=float)
        if len(sig) < 2 * self.window:
            return False
        last = sig[-self.window:]
        prev = sig[-2 * self.window:-self.window]
        scale = max(np.ptp(sig[-2 * self.window:]), np.abs(last).max(), 1e-300)
        return np.max(np.abs(last - prev)) / scale < self.tolerance


@dataclass(frozen=True)
class EnergyBalance(StopTrigger):
    """|q_fluid - q_solid| / |q_solid| below ``tolerance``."""

    tolerance: float

    def __post_init__(self):
        _positive("energy-balance tolerance", self.tolerance)

    def fires(self, progress):
        qf, qs = progress.heat_load_fluid, progress.heat_load_solid
        if qf is None or qs is None:
            return False
        if qs == 0.0:
            return qf == 0.0
        return abs(qf - qs) / abs(qs) < self.tolerance


@dataclass(frozen=True)
class AnyOf(StopTrigger):
    members: tuple

    def __post_init__(self):
        if len(self.members) == 0:
            raise ValueError("any-of composition needs at least one trigger")

    def fires(self, progress):
        return any(m.fires(progress) for m in self.members)


def check_trigger(trigger: StopTrigger, progress: ProgressRecord) -> bool:
    return trigger.fires(progress)


_KINDS = {
    "time_increment": (TimeIncrement, ("budget",)),
    "step_count": (StepCount, ("n",)),
    "residual_decrease": (ResidualDecrease, ("factor",)),
    "unknown_change": (UnknownChange, ("threshold",)),
    "geometry_change": (GeometryChange, ("threshold",)),
    "quasi_periodic": (QuasiPeriodic, ("window", "tolerance")),
    "energy_balance": (EnergyBalance, ("tolerance",)),
}


def trigger_from_dict(spec: dict) -> StopTrigger:
    """Build a trigger from ``{"kind": ..., <params>}`` or ``{"any_of": [...]}``."""
    if "any_of" in spec:
        return AnyOf(tuple(trigger_from_dict(s) for s in spec["any_of"]))
    kind = spec.get("kind")
    if kind not in _KINDS:
        raise ValueError(f"unknown trigger kind {kind!r}; expected one of {sorted(_KINDS)}")
    cls, params = _KINDS[kind]
    missing = [p for p in params if p not in spec]
    if missing:
        raise ValueError(f"trigger {kind!r} missing {missing}")
    return cls(**{p: spec[p] for p in params})


def trigger_to_dict(trigger: StopTrigger) -> dict:
    if isinstance(trigger, AnyOf):
        return {"any_of": [trigger_to_dict(m) for m in trigger.members]}
    for kind, (cls, params) in _KINDS.items():
        if type(trigger) is cls:
            return {"kind": kind, **{p: getattr(trigger, p) for p in params}}
    raise TypeError(f"cannot serialise {trigger!r}")
