import numpy as np
import pytest

from src.thermal.errors import DomainError, FitError, ShapeError
from src.thermal.model import LeakageParams, ThermalModel, ambient_linear_response
from src.thermal.trajectory import (
    FirstOrderFit,
    PowerSchedule,
    Trace,
    envelope,
    envelope_values,
    first_order_curve,
    fit_first_order,
    read_trace,
    settling_time,
    simulate,
    thermal_resistance,
    time_to_fixed_point,
    trace_thermal_resistance,
    trace_to_frame,
)

UNIFORM = np.full(4, 0.295)


@pytest.fixture
def lumped_model():
    """One hotspot fed by four resources with a = 0.9994 and b = 0.0121 per resource-watt."""
    return ThermalModel(
        A=[[0.9994]],
        B=[[0.0121] * 4],
        hotspot_names=["soc"],
        resource_names=["little", "big", "mem", "gpu"],
        leakage=[LeakageParams(1.0, 1e-3, -3000.0, 0, active=False)] * 4,
        domain=(288.15, 393.15),
        ambient=298.15,
        sample_period=0.1,
    )


@pytest.fixture
def lumped_trace(lumped_model):
    return simulate(lumped_model, UNIFORM, lumped_model.ambient_vector(), 5000.0)


def test_simulate_reaches_steady_state(lumped_model, lumped_trace):
    assert len(lumped_trace) == 50001
    assert not lumped_trace.runaway
    expected = ambient_linear_response(UNIFORM, lumped_model)
    assert lumped_trace.temps[-1] == pytest.approx(expected, abs=1e-6)


def test_thermal_resistance(lumped_trace):
    assert thermal_resistance(0.9994, 0.0121) == pytest.approx(20.1667, rel=1e-4)
    assert trace_thermal_resistance(lumped_trace, 0) == pytest.approx(20.1667, rel=1e-4)
    rise = lumped_trace.hotspot(0)[-1] - lumped_trace.hotspot(0)[0]
    assert rise == pytest.approx(23.8, abs=0.05)


@pytest.mark.parametrize("a, b", [(1.0, 0.1), (0.0, 0.1), (0.9, 0.0)])
def test_thermal_resistance_domain(a, b):
    with pytest.raises(DomainError):
        thermal_resistance(a, b)


def test_settling_time_matches_fit_arrival(lumped_trace):
    final = lumped_trace.hotspot(0)[-1]
    settled = settling_time(lumped_trace, 0, final, 1.0)
    assert settled == pytest.approx(530.0, abs=5.0)

    head = lumped_trace.window(0.0, 1000.0)
    fit = fit_first_order(head.times, head.hotspot(0))
    assert fit.t_fix == pytest.approx(final, abs=1e-3)
    assert fit.tau == pytest.approx(-0.1 / np.log(0.9994), rel=1e-4)
    assert time_to_fixed_point(fit, 1.0) == pytest.approx(settled, abs=1.0)


def test_fit_tolerates_noise(lumped_trace):
    head = lumped_trace.window(0.0, 600.0)
    rng = np.random.default_rng(7)
    noisy = head.hotspot(0) + rng.normal(0.0, 0.05, size=len(head))
    fit = fit_first_order(head.times, noisy, t_u_init=head.hotspot(0)[0])
    assert fit.t_fix == pytest.approx(lumped_trace.hotspot(0)[-1], abs=0.5)
    assert fit.rmse == pytest.approx(0.05, rel=0.2)


def test_fit_rejects_short_or_flat_windows():
    times = np.arange(5) * 0.1
    with pytest.raises(FitError):
        fit_first_order(times, 300.0 + times)
    times = np.arange(50) * 0.1
    with pytest.raises(FitError):
        fit_first_order(times, np.full(50, 300.0))


def test_first_order_curve_round_trip():
    fit = FirstOrderFit(t_u_init=300.0, t_fix=320.0, tau=40.0, rmse=0.0, window_used=200.0, sample_rate=10.0)
    times = np.arange(0.0, 200.0, 0.5)
    refit = fit_first_order(times, first_order_curve(fit, times))
    assert refit.t_fix == pytest.approx(320.0, abs=1e-6)
    assert refit.tau == pytest.approx(40.0, rel=1e-6)


def test_time_to_fixed_point():
    fit = FirstOrderFit(t_u_init=300.0, t_fix=320.0, tau=40.0, rmse=0.0, window_used=200.0, sample_rate=10.0)
    assert time_to_fixed_point(fit, 1.0) == pytest.approx(40.0 * np.log(20.0))
    assert time_to_fixed_point(fit, 25.0) == 0.0
    with pytest.raises(DomainError):
        time_to_fixed_point(fit, 0.0)


def test_envelope_examples():
    signal = np.array([1.0, 3.0, 2.0, 5.0, 4.0])
    assert envelope_values(signal, 1).tolist() == [1.0, 3.0, 3.0, 5.0, 5.0]
    assert envelope_values(signal, 2).tolist() == [1.0, 3.0, 3.0, 5.0, 5.0]
    assert envelope_values(signal, 10).tolist() == np.maximum.accumulate(signal).tolist()
    with pytest.raises(DomainError):
        envelope_values(signal, 0)


def test_envelope_dominates_signal(rng):
    signal = rng.normal(size=500)
    env = envelope_values(signal, 7)
    assert np.all(env >= signal)
    for k in range(500):
        assert env[k] == signal[max(0, k - 7):k + 1].max()


def test_envelope_of_trace(lumped_trace):
    times, env = envelope(lumped_trace, 0, 10)
    assert times is lumped_trace.times
    # a monotone rise is its own envelope
    assert env == pytest.approx(lumped_trace.hotspot(0))


def test_runaway_stops_simulation(default_model):
    trace = simulate(default_model, np.array([2.0, 8.0, 2.0, 8.0]), default_model.ambient_vector(), 2000.0)
    assert trace.runaway
    assert trace.runaway_time is not None and trace.runaway_time < 2000.0
    assert trace.temps[-1].max() > default_model.domain[1] + 100.0
    assert len(trace) < 20001


def test_power_schedule_segments(lumped_model):
    schedule = PowerSchedule(starts=[0.0, 10.0], values=[UNIFORM, np.zeros(4)])
    assert schedule.at(9.9).tolist() == UNIFORM.tolist()
    assert schedule.at(10.0).tolist() == [0.0] * 4
    trace = simulate(lumped_model, schedule, lumped_model.ambient_vector(), 20.0)
    peak = int(np.argmax(trace.hotspot(0)))
    assert trace.times[peak] == pytest.approx(10.0, abs=0.11)
    with pytest.raises(DomainError):
        PowerSchedule(starts=[1.0], values=[UNIFORM])
    with pytest.raises(DomainError):
        PowerSchedule(starts=[0.0, 0.0], values=[UNIFORM, UNIFORM])


def test_trace_validation():
    with pytest.raises(ShapeError):
        Trace(np.arange(3) * 0.1, np.zeros((2, 1)), np.zeros((3, 1)), 0.1)
    with pytest.raises(ShapeError):
        Trace(np.array([0.0, 0.1, 0.3]), np.zeros((3, 1)), np.zeros((3, 1)), 0.1)


def test_trace_csv_round_trip(lumped_trace, tmp_path):
    head = lumped_trace.window(0.0, 10.0)
    path = tmp_path / "trace.csv"
    trace_to_frame(head).to_csv(path, index=False)
    loaded = read_trace(path)
    assert loaded.hotspot_names == ("soc",)
    assert loaded.resource_names == ("little", "big", "mem", "gpu")
    assert loaded.temps == pytest.approx(head.temps, abs=1e-9)
    assert loaded.times == pytest.approx(head.times, abs=1e-12)


@pytest.fixture(scope="module")
def bundled_trace(default_model):
    return simulate(default_model, UNIFORM, default_model.ambient_vector(), 5000.0)


def test_bundled_trace_resistance_matches_lumped_estimate(default_model, bundled_trace):
    hotspot = default_model.hotspot_index("big2")
    assert trace_thermal_resistance(bundled_trace, hotspot) == pytest.approx(
        thermal_resistance(0.9994, 0.0121), rel=0.05)


def test_fit_arrival_on_bundled_trace(default_model, bundled_trace):
    hotspot = default_model.hotspot_index("big2")
    final = bundled_trace.hotspot(hotspot)[-1]
    truth = settling_time(bundled_trace, hotspot, final, 1.0)
    head = bundled_trace.window(0.0, 200.0)
    times, env = envelope(head, hotspot, 10)
    fit = fit_first_order(times, env)
    assert time_to_fixed_point(fit, 1.0) == pytest.approx(truth, rel=0.10)


def _noisy_step(rng, window_s, rate_hz=10.0, tau=60.0):
    truth = FirstOrderFit(t_u_init=300.0, t_fix=330.0, tau=tau, rmse=0.0, window_used=window_s, sample_rate=rate_hz)
    times = np.arange(0.0, window_s, 1.0 / rate_hz)
    return times, first_order_curve(truth, times) + rng.normal(0.0, 0.2, size=times.size)


def test_noisy_fit_recovers_time_constant():
    rng = np.random.default_rng(3)
    errors = []
    for _ in range(100):
        times, values = _noisy_step(rng, 200.0)
        fit = fit_first_order(times, values, t_u_init=300.0)
        errors.append(abs(fit.tau - 60.0) / 60.0)
    assert np.mean(errors) < 0.05


def test_longer_windows_fit_better():
    mean_errors = []
    for window_s in (50.0, 100.0, 150.0, 200.0):
        rng = np.random.default_rng(5)
        errors = []
        for _ in range(100):
            times, values = _noisy_step(rng, window_s)
            errors.append(abs(fit_first_order(times, values, t_u_init=300.0).tau - 60.0))
        mean_errors.append(np.mean(errors))
    assert all(later <= earlier for earlier, later in zip(mean_errors, mean_errors[1:]))


def test_short_sparse_window_fits_worse_than_long_dense_one():
    def mean_error(window_s, rate_hz):
        rng = np.random.default_rng(9)
        errors = []
        for _ in range(100):
            times, values = _noisy_step(rng, window_s, rate_hz)
            errors.append(abs(fit_first_order(times, values, t_u_init=300.0).tau - 60.0))
        return np.mean(errors)

    assert mean_error(200.0, 10.0) < mean_error(50.0, 1.0)
