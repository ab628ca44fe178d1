"""
Closed-loop scenario simulation: workload, default mapper, governor policy and thermal model.
"""
import json
import logging
from collections import deque
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .errors import FitError, ModelValidationError
from .governor import (
    DVFS_DOMAINS,
    ActionKind,
    Cluster,
    GovernorConfig,
    GovernorDecision,
    Process,
    SimState,
    apply_migration,
    apply_throttle,
    baseline_tick,
    compose_power,
    control_tick,
    cpu_attribution,
    default_mapper,
    performance,
)
from .mimo import NewtonConfig, build_workspace
from .model import ThermalModel, power_vector, step, to_celsius, to_kelvin
from .trajectory import Trace, envelope_values, fit_first_order

logger = logging.getLogger(__name__)


class Policy(str, Enum):
    PREDICTIVE = "predictive"
    BASELINE = "baseline"
    NONE = "none"


class ProcessSpec(Process):
    spawn_s: float = Field(default=0.0, ge=0)
    exit_s: Optional[float] = None

    def alive(self, t: float) -> bool:
        return self.spawn_s <= t and (self.exit_s is None or t < self.exit_s)


class Thresholds(BaseModel):
    model_config = ConfigDict(extra="forbid")

    t_limit_celsius: Optional[float] = None
    t_horizon_s: Optional[float] = Field(default=None, gt=0)


class Scenario(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str = "scenario"
    description: str = ""
    duration_s: float = Field(gt=0)
    initial_celsius: Optional[float] = None
    base_power: Dict[str, float] = {}
    processes: List[ProcessSpec] = []
    governor: GovernorConfig = Field(default_factory=GovernorConfig)
    thresholds: Thresholds = Field(default_factory=Thresholds)

    def governor_config(self) -> GovernorConfig:
        """The ``governor`` block; a limit or horizon set under ``thresholds`` takes precedence over it."""
        update = {}
        if self.thresholds.t_limit_celsius is not None:
            update["t_limit"] = to_kelvin(self.thresholds.t_limit_celsius)
        if self.thresholds.t_horizon_s is not None:
            update["t_horizon"] = self.thresholds.t_horizon_s
        return self.governor.model_copy(update=update)


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        return Scenario.model_validate(json.loads(path.read_text(encoding="utf-8")))
    except (json.JSONDecodeError, ValidationError) as e:
        raise ModelValidationError("scenario", f"{path}: {e}") from e


class ProcessSummary(BaseModel):
    pid: int
    name: str
    realtime: bool
    performance: float
    time_on_little_s: float


class SimulationSummary(BaseModel):
    scenario: str
    policy: Policy
    duration_s: float
    time_above_limit_s: float
    peak_celsius: float
    migrations: int
    throttles: int
    fits: int
    processes: List[ProcessSummary]


@dataclass(frozen=True)
class SimulationResult:
    trace: Trace
    decisions: List[GovernorDecision]
    summary: SimulationSummary

    def decision_log(self) -> str:
        """Decisions as JSON lines."""
        return "".join(json.dumps(d.model_dump(mode="json"), sort_keys=True) + "\n" for d in self.decisions)

    def performance(self, pid: int) -> float:
        for p in self.summary.processes:
            if p.pid == pid:
                return p.performance
        raise KeyError(pid)

    def summary_frame(self) -> pd.DataFrame:
        return pd.DataFrame([p.model_dump() for p in self.summary.processes])


def run_scenario(scenario: Scenario, model: ThermalModel, policy: Policy = Policy.PREDICTIVE,
                 newton_cfg: Optional[NewtonConfig] = None) -> SimulationResult:
    """Simulate a scenario one sample at a time with the governor invoked every tick."""
    policy = Policy(policy)
    cfg = scenario.governor_config()
    cfg.check_model(model)
    Ts = model.sample_period
    tick_steps = max(1, int(round(cfg.tick / Ts)))
    refit_steps = max(1, int(round(cfg.refit_period / Ts)))
    fit_samples = max(2, int(round(cfg.fit_window / Ts)))
    window_steps = max(1, int(round(cfg.power_window / cfg.tick)))
    n = int(round(scenario.duration_s / Ts))
    workspace = build_workspace(model)

    base = np.zeros(model.n_resources)
    for name, value in scenario.base_power.items():
        base[model.resource_index(name)] = value
    start = model.ambient if scenario.initial_celsius is None else to_kelvin(scenario.initial_celsius)
    T = np.full(model.n_hotspots, start)

    specs = {p.pid: p for p in scenario.processes}
    if len(specs) != len(scenario.processes):
        raise ModelValidationError("scenario", "duplicate process pids")
    live: Dict[int, Process] = {}
    history: Dict[int, deque] = {}
    perf = {pid: 0.0 for pid in specs}
    on_little = {pid: 0.0 for pid in specs}
    levels = {d: 0 for d in DVFS_DOMAINS}

    temps = np.empty((n, model.n_hotspots))
    powers = np.empty((n, model.n_resources))
    decisions: List[GovernorDecision] = []
    fit = None
    fits = 0
    time_above = 0.0

    for k in range(n):
        now = k * Ts
        for pid, spec in specs.items():
            if spec.alive(now) and pid not in live:
                live[pid] = Process(**spec.model_dump(exclude={"spawn_s", "exit_s"}))
                history[pid] = deque(maxlen=window_steps)
            elif not spec.alive(now) and pid in live:
                del live[pid]
                del history[pid]

        temps[k] = T
        if k % tick_steps == 0:
            lo = max(0, k - cfg.envelope_window)
            env = temps[lo:k + 1].max(axis=0)
            if policy is Policy.PREDICTIVE and k % refit_steps == 0 and k > 0:
                hot = int(np.argmax(env))
                segment = temps[max(0, k + 1 - fit_samples):k + 1, hot]
                try:
                    fit = fit_first_order(
                        np.arange(segment.size) * Ts,
                        envelope_values(segment, cfg.envelope_window),
                    )
                    fits += 1
                except FitError as e:
                    logger.debug(f"[{now:8.1f}s] no first-order fit: {e}")
                    fit = None
            state = default_mapper(SimState(
                time=now,
                temps=T,
                envelope=env,
                processes=tuple(live.values()),
                levels=levels,
                base_power=base,
                fit=fit,
            ))
            # attribution follows the mapper placement the governor is about to judge
            for p in state.processes:
                history[p.pid].append(cpu_attribution(p, state.levels, cfg))
            state = replace(state, attributions={pid: float(np.mean(h)) for pid, h in history.items()})
            if policy is Policy.PREDICTIVE:
                decision = control_tick(state, cfg, model, newton_cfg, workspace)
                if decision.action.kind is ActionKind.MIGRATE:
                    state = apply_migration(decision.action.pid, state, cfg)
                decisions.append(decision)
            elif policy is Policy.BASELINE:
                decision = baseline_tick(state, cfg)
                if decision.action.kind is ActionKind.THROTTLE:
                    state = apply_throttle(state, decision.action)
                    logger.debug(f"[{now:8.1f}s] throttle to {decision.action.levels}")
                decisions.append(decision)
            live = {p.pid: p for p in state.processes}
            levels = state.levels

        p_c = compose_power(live.values(), levels, base, model, cfg)
        P = power_vector(T, p_c, model).total
        powers[k] = P
        if np.max(T) > cfg.t_limit:
            time_above += Ts
        for pid, p in live.items():
            perf[pid] += performance(p, levels, cfg) * Ts
            if p.mapping is Cluster.LITTLE:
                on_little[pid] += Ts
        T = step(T, P, model)

    trace = Trace(
        times=np.arange(n) * Ts,
        temps=temps,
        powers=powers,
        sample_period=Ts,
        hotspot_names=model.hotspot_names,
        resource_names=model.resource_names,
    )
    summary = SimulationSummary(
        scenario=scenario.name,
        policy=policy,
        duration_s=scenario.duration_s,
        time_above_limit_s=time_above,
        peak_celsius=to_celsius(float(temps.max())),
        migrations=sum(d.action.kind is ActionKind.MIGRATE for d in decisions),
        throttles=sum(d.action.kind is ActionKind.THROTTLE for d in decisions),
        fits=fits,
        processes=[
            ProcessSummary(pid=pid, name=spec.name, realtime=spec.realtime,
                           performance=perf[pid], time_on_little_s=on_little[pid])
            for pid, spec in sorted(specs.items())
        ],
    )
    logger.info(
        f"{scenario.name} [{policy.value}]: {time_above:.1f} s above limit, "
        f"{summary.migrations} migrations, {summary.throttles} throttles"
    )
    return SimulationResult(trace=trace, decisions=decisions, summary=summary)
