import pytest
from hypothesis import given
from hypothesis import strategies as st

from barelycoupled.triggers import (AnyOf, EnergyBalance, GeometryChange, ProgressRecord, QuasiPeriodic,
                                    ResidualDecrease, StepCount, TimeIncrement, UnknownChange,
                                    check_trigger, trigger_from_dict, trigger_to_dict)


def progress_after(n_steps, dt=1.0, **kwargs):
    rec = ProgressRecord()
    for _ in range(n_steps):
        rec.record_step(dt, **kwargs)
    return rec


def test_step_count_500_fires_after_500_steps():
    trig = StepCount(500)
    assert not check_trigger(trig, progress_after(499))
    assert check_trigger(trig, progress_after(500))


def test_time_increment_100_after_ten_steps_of_10():
    trig = TimeIncrement(100.0)
    assert not check_trigger(trig, progress_after(9, dt=10.0))
    assert check_trigger(trig, progress_after(10, dt=10.0))


def test_time_increment_tolerates_rounding_of_summed_steps():
    # ten steps of 0.1 sum to 0.9999999999999999
    assert check_trigger(TimeIncrement(1.0), progress_after(10, dt=0.1))


def test_residual_decrease_holds_after_tenfold_drop():
    rec = ProgressRecord(residuals=[1.0, 0.5, 0.1])
    assert not ResidualDecrease(1e3).fires(rec)
    rec.residuals.append(1e-3)
    assert ResidualDecrease(1e3).fires(rec)


def test_residual_decrease_without_history_holds():
    assert not ResidualDecrease(10.0).fires(ProgressRecord())


def test_unknown_change():
    trig = UnknownChange(1e-6)
    assert not trig.fires(ProgressRecord())
    assert not trig.fires(ProgressRecord(unknown_change=1e-3))
    assert trig.fires(ProgressRecord(unknown_change=1e-7))


def test_geometry_change():
    trig = GeometryChange(0.01)
    assert not trig.fires(ProgressRecord(geometry_change=0.005))
    assert trig.fires(ProgressRecord(geometry_change=0.01))


def test_quasi_periodic_detects_repeating_signal():
    trig = QuasiPeriodic(window=4, tolerance=1e-6)
    periodic = ProgressRecord(signal=[0.0, 1.0, 0.0, -1.0] * 3)
    growing = ProgressRecord(signal=[0.0, 1.0, 0.0, -1.0, 0.0, 2.0, 0.0, -2.0])
    short = ProgressRecord(signal=[0.0, 1.0, 0.0])
    assert trig.fires(periodic)
    assert not trig.fires(growing)
    assert not trig.fires(short)


def test_energy_balance():
    trig = EnergyBalance(0.02)
    assert not trig.fires(ProgressRecord())
    assert trig.fires(ProgressRecord(heat_load_fluid=0.99, heat_load_solid=1.0))
    assert not trig.fires(ProgressRecord(heat_load_fluid=0.9, heat_load_solid=1.0))
    assert trig.fires(ProgressRecord(heat_load_fluid=0.0, heat_load_solid=0.0))


def test_any_of_fires_when_one_member_fires():
    trig = StepCount(500) | TimeIncrement(1.0)
    assert isinstance(trig, AnyOf)
    assert trig.fires(progress_after(3, dt=0.5))
    assert not trig.fires(progress_after(1, dt=0.5))
    assert trig.fires(progress_after(500, dt=1e-6))


def test_empty_composition_rejected():
    with pytest.raises(ValueError):
        AnyOf(())


@pytest.mark.parametrize("factory", [lambda: StepCount(0), lambda: TimeIncrement(-1.0),
                                     lambda: ResidualDecrease(0.0), lambda: UnknownChange(0.0),
                                     lambda: GeometryChange(-1.0), lambda: QuasiPeriodic(0, 0.1),
                                     lambda: EnergyBalance(0.0)])
def test_thresholds_must_be_positive(factory):
    with pytest.raises(ValueError):
        factory()


def test_dict_round_trip():
    trig = AnyOf((StepCount(500), TimeIncrement(100.0), QuasiPeriodic(5, 1e-3)))
    assert trigger_from_dict(trigger_to_dict(trig)) == trig


def test_dict_errors():
    with pytest.raises(ValueError, match="unknown trigger"):
        trigger_from_dict({"kind": "wall_clock"})
    with pytest.raises(ValueError, match="missing"):
        trigger_from_dict({"kind": "step_count"})


@given(st.integers(1, 2000), st.integers(0, 2000))
def test_step_count_is_a_threshold(n, steps):
    assert StepCount(n).fires(ProgressRecord(steps=steps)) == (steps >= n)


@given(st.lists(st.floats(0.0, 10.0, allow_nan=False), max_size=20), st.integers(1, 30))
def test_any_of_is_logical_or(times, n):
    rec = ProgressRecord()
    for dt in times:
        rec.record_step(dt)
    a, b = StepCount(n), TimeIncrement(5.0)
    assert (a | b).fires(rec) == (a.fires(rec) or b.fires(rec))
