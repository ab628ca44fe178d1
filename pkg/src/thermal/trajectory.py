"""
Time-domain simulation of the nonlinear dynamics and analysis of the resulting traces.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel
from scipy.optimize import least_squares

from .errors import DomainError, FitError, ShapeError
from .model import ThermalModel, _check_vector, power_vector, step, to_celsius, to_kelvin

logger = logging.getLogger(__name__)

RUNAWAY_MARGIN_K = 100.0
MIN_FIT_POINTS = 10
FIT_MAX_ITER = 100
FIT_GTOL = 1e-10


@dataclass(frozen=True)
class PowerSchedule:
    """Piecewise-constant P_C: ``values[i]`` applies from ``starts[i]`` until the next start."""
    starts: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        starts = np.asarray(self.starts, dtype=float)
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if starts.ndim != 1 or values.shape[0] != starts.size:
            raise ShapeError(f"{starts.size} segment starts for {values.shape[0]} power vectors")
        if starts.size == 0 or starts[0] > 0:
            raise DomainError("schedule must define power from time 0")
        if np.any(np.diff(starts) <= 0):
            raise DomainError("schedule starts must be strictly increasing")
        object.__setattr__(self, "starts", starts)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, p_c) -> "PowerSchedule":
        return cls(starts=np.array([0.0]), values=np.atleast_2d(np.asarray(p_c, dtype=float)))

    def at(self, t: float) -> np.ndarray:
        return self.values[np.searchsorted(self.starts, t, side="right") - 1]


@dataclass(frozen=True)
class Trace:
    times: np.ndarray
    temps: np.ndarray
    powers: np.ndarray
    sample_period: float
    hotspot_names: Tuple[str, ...] = ()
    resource_names: Tuple[str, ...] = ()
    runaway: bool = False
    runaway_time: Optional[float] = None

    def __post_init__(self):
        if not (len(self.times) == len(self.temps) == len(self.powers)):
            raise ShapeError(
                f"trace lengths differ: {len(self.times)} times, {len(self.temps)} temps, {len(self.powers)} powers"
            )
        if len(self.times) > 1:
            dt = np.diff(self.times)
            if np.any(dt <= 0) or not np.allclose(dt, self.sample_period, rtol=1e-9, atol=1e-9):
                raise ShapeError("trace times must advance by exactly one sample period")

    def __len__(self) -> int:
        return len(self.times)

    def hotspot(self, index: int) -> np.ndarray:
        if not 0 <= index < self.temps.shape[1]:
            raise IndexError(f"hotspot {index} outside [0, {self.temps.shape[1]})")
        return self.temps[:, index]

    def window(self, start: float, end: float) -> "Trace":
        mask = (self.times >= start - 1e-9) & (self.times <= end + 1e-9)
        return Trace(self.times[mask], self.temps[mask], self.powers[mask], self.sample_period,
                     self.hotspot_names, self.resource_names)


def simulate(model: ThermalModel, schedule, t0, duration: float) -> Trace:
    """Iterate T[k+1] = step(T[k], P(T[k])) for ``duration`` seconds.

    Stops early and flags a runaway once any hotspot passes T_max + 100 K.
    """
    if not duration > 0:
        raise DomainError(f"duration must be positive, got {duration}")
    if not isinstance(schedule, PowerSchedule):
        schedule = PowerSchedule.constant(schedule)
    T = _check_vector(t0, model.n_hotspots, "t0")
    if np.any(T <= 0):
        raise DomainError("initial temperatures must be positive kelvin")
    Ts = model.sample_period
    n_steps = int(round(duration / Ts))
    ceiling = model.domain[1] + RUNAWAY_MARGIN_K

    temps = np.empty((n_steps + 1, model.n_hotspots))
    powers = np.empty((n_steps + 1, model.n_resources))
    runaway_time = None
    k = 0
    while True:
        temps[k] = T
        powers[k] = power_vector(T, schedule.at(k * Ts), model).total
        if k == n_steps or runaway_time is not None:
            break
        T = step(T, powers[k], model)
        k += 1
        if np.max(T) > ceiling:
            runaway_time = k * Ts
            logger.warning(f"Thermal runaway: {np.max(T):.1f} K at t = {runaway_time:.1f} s")
    n = k + 1
    return Trace(
        times=np.arange(n) * Ts,
        temps=temps[:n],
        powers=powers[:n],
        sample_period=Ts,
        hotspot_names=model.hotspot_names,
        resource_names=model.resource_names,
        runaway=runaway_time is not None,
        runaway_time=runaway_time,
    )


def envelope_values(values, window_m: int) -> np.ndarray:
    """Trailing maximum over the current and ``window_m`` previous samples."""
    if window_m < 1:
        raise DomainError(f"window_m must be >= 1, got {window_m}")
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise DomainError("cannot take the envelope of an empty signal")
    padded = np.concatenate([np.full(window_m, -np.inf), values])
    return sliding_window_view(padded, window_m + 1).max(axis=1)


def envelope(trace: Trace, hotspot: int, window_m: int) -> Tuple[np.ndarray, np.ndarray]:
    return trace.times, envelope_values(trace.hotspot(hotspot), window_m)


class FirstOrderFit(BaseModel):
    """T(t) = t_u_init + (t_fix - t_u_init)(1 - exp(-(t - start_time)/tau))."""
    t_u_init: float
    t_fix: float
    tau: float
    rmse: float
    window_used: float
    sample_rate: float
    start_time: float = 0.0


def first_order_curve(fit: FirstOrderFit, times) -> np.ndarray:
    elapsed = np.asarray(times, dtype=float) - fit.start_time
    return fit.t_u_init + (fit.t_fix - fit.t_u_init) * (1.0 - np.exp(-elapsed / fit.tau))


def fit_first_order(times, values, t_u_init: Optional[float] = None) -> FirstOrderFit:
    """Least-squares fit of (t_fix, tau) with the initial temperature pinned.

    Levenberg-Marquardt on (t_fix, ln tau), started from t_fix = last sample + 1 K
    and tau = window / 3.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.shape != values.shape or times.ndim != 1:
        raise ShapeError("times and values must be equal-length 1-D arrays")
    if times.size < MIN_FIT_POINTS:
        raise FitError(f"need at least {MIN_FIT_POINTS} points, got {times.size}")
    if t_u_init is None:
        t_u_init = float(values[0])
    if not values[-1] > t_u_init:
        raise FitError("signal does not rise over the window; nothing to fit")

    elapsed = times - times[0]
    window = float(elapsed[-1])

    def residuals(x):
        t_fix, log_tau = x
        return t_u_init + (t_fix - t_u_init) * (1.0 - np.exp(-elapsed / np.exp(log_tau))) - values

    x0 = np.array([values[-1] + 1.0, np.log(window / 3.0)])
    initial_cost = 0.5 * float(np.sum(residuals(x0) ** 2))
    result = least_squares(residuals, x0, method="lm", xtol=1e-12, ftol=1e-12, gtol=FIT_GTOL,
                           max_nfev=FIT_MAX_ITER * (x0.size + 1))
    if not np.all(np.isfinite(result.x)):
        raise FitError(f"fit diverged: {result.message}")
    if result.status < 0 or (result.cost >= initial_cost and initial_cost > 0):
        raise FitError(f"fit failed to reduce the residual: {result.message}")
    t_fix, log_tau = result.x
    return FirstOrderFit(
        t_u_init=t_u_init,
        t_fix=float(t_fix),
        tau=float(np.exp(log_tau)),
        rmse=float(np.sqrt(np.mean(result.fun ** 2))),
        window_used=window,
        sample_rate=(times.size - 1) / window,
        start_time=float(times[0]),
    )


def time_to_fixed_point(fit: FirstOrderFit, threshold_delta: float) -> float:
    """Seconds from the start of the fit until it is within ``threshold_delta`` of t_fix; 0 if already there."""
    if not threshold_delta > 0:
        raise DomainError(f"threshold_delta must be positive, got {threshold_delta}")
    gap = fit.t_fix - fit.t_u_init
    if threshold_delta >= gap:
        return 0.0
    return fit.tau * np.log(gap / threshold_delta)


def thermal_resistance(a: float, b: float) -> float:
    """Steady-state rise per watt of the scalar model, b / (1 - a)."""
    if not 0 < a < 1:
        raise DomainError(f"need 0 < a < 1, got a = {a}")
    if not b > 0:
        raise DomainError(f"need b > 0, got b = {b}")
    return b / (1.0 - a)


def trace_thermal_resistance(trace: Trace, hotspot: int) -> float:
    """(final - initial temperature of a hotspot) / final total power."""
    T = trace.hotspot(hotspot)
    total = float(trace.powers[-1].sum())
    if not total > 0:
        raise DomainError("trace ends with zero total power")
    return (T[-1] - T[0]) / total


def settling_time(trace: Trace, hotspot: int, reference: float, delta: float) -> Optional[float]:
    """First time after which the hotspot stays within ``delta`` of ``reference``, or None."""
    outside = np.abs(trace.hotspot(hotspot) - reference) > delta
    if outside[-1]:
        return None
    if not outside.any():
        return float(trace.times[0])
    last = int(np.flatnonzero(outside)[-1])
    return float(trace.times[last + 1])


def trace_to_frame(trace: Trace) -> pd.DataFrame:
    hotspots = trace.hotspot_names or tuple(str(i) for i in range(trace.temps.shape[1]))
    resources = trace.resource_names or tuple(str(j) for j in range(trace.powers.shape[1]))
    columns = {"time_s": trace.times}
    for i, name in enumerate(hotspots):
        columns[f"T_{name}_C"] = to_celsius(trace.temps[:, i])
    for j, name in enumerate(resources):
        columns[f"P_{name}_W"] = trace.powers[:, j]
    return pd.DataFrame(columns)


def trace_from_frame(frame: pd.DataFrame, sample_period: Optional[float] = None) -> Trace:
    if "time_s" not in frame.columns:
        raise ShapeError("trace CSV needs a time_s column")
    t_cols = [c for c in frame.columns if c.startswith("T_") and c.endswith("_C")]
    p_cols = [c for c in frame.columns if c.startswith("P_") and c.endswith("_W")]
    if not t_cols:
        raise ShapeError("trace CSV has no T_<hotspot>_C columns")
    times = frame["time_s"].to_numpy(dtype=float)
    if sample_period is None:
        sample_period = float(times[1] - times[0]) if times.size > 1 else 1.0
    powers = frame[p_cols].to_numpy(dtype=float) if p_cols else np.zeros((times.size, 0))
    return Trace(
        times=times,
        temps=to_kelvin(frame[t_cols].to_numpy(dtype=float)),
        powers=powers,
        sample_period=sample_period,
        hotspot_names=tuple(c[2:-2] for c in t_cols),
        resource_names=tuple(c[2:-2] for c in p_cols),
    )


def read_trace(path) -> Trace:
    return trace_from_frame(pd.read_csv(path))
