"""
Predictive thermal governor and a reactive throttling baseline.

Every control tick the predictive governor solves for the fixed point of the
current power composition. When that fixed point is above the thermal limit and
the first-order model says the limit will be crossed within the time horizon,
the hottest eligible process on the big cluster is moved to the little cluster.
"""
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..config.settings import settings

from .errors import ContractViolation, ConvergenceError, NoCandidateError
from .mimo import AcceleratedWorkspace, NewtonConfig, solve
from .model import ThermalModel, to_kelvin
from .trajectory import FirstOrderFit, time_to_fixed_point

logger = logging.getLogger(__name__)

DVFS_DOMAINS = ("little", "big", "gpu")


class Cluster(str, Enum):
    BIG = "Big"
    LITTLE = "Little"


class Process(BaseModel):
    model_config = ConfigDict(frozen=True)

    pid: int
    name: str = ""
    p_dyn_big: float = Field(ge=0)
    p_dyn_little: float = Field(ge=0)
    p_dyn_gpu: float = Field(default=0.0, ge=0)
    perf_big: float = Field(default=1.0, ge=0)
    perf_little: float = Field(default=0.5, ge=0)
    realtime: bool = False
    mapping: Cluster = Cluster.BIG
    preferred: Cluster = Cluster.BIG
    sticky_until: float = 0.0

    @model_validator(mode="after")
    def _little_is_lighter(self):
        if self.p_dyn_little > self.p_dyn_big:
            raise ValueError(f"process {self.pid}: p_dyn_little > p_dyn_big")
        if self.perf_little > self.perf_big:
            raise ValueError(f"process {self.pid}: perf_little > perf_big")
        return self

    @property
    def cpu_domain(self) -> str:
        return "big" if self.mapping is Cluster.BIG else "little"

    @property
    def bottleneck(self) -> str:
        return "gpu" if self.p_dyn_gpu > 0 else self.cpu_domain


class FreqLevel(BaseModel):
    mhz: float = Field(gt=0)
    voltage: float = Field(gt=0)


def _default_freq_table() -> Dict[str, List[FreqLevel]]:
    table = {
        "little": [(1400, 1.20), (1200, 1.10), (1000, 1.00), (800, 0.95), (600, 0.90)],
        "big": [(2000, 1.25), (1800, 1.15), (1600, 1.08), (1400, 1.00), (1200, 0.95), (1000, 0.90)],
        "gpu": [(600, 1.00), (543, 0.95), (480, 0.92), (420, 0.90), (350, 0.88)],
    }
    return {d: [FreqLevel(mhz=f, voltage=v) for f, v in levels] for d, levels in table.items()}


class GovernorConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    t_limit: float = to_kelvin(85.0)
    t_horizon: float = Field(default=60.0, gt=0)
    tick: float = Field(default=0.1, gt=0)
    power_window: float = Field(default=1.0, gt=0)
    sticky_hold: Optional[float] = None
    hysteresis_k: float = Field(default=2.0, ge=0)
    refit_period: float = Field(default=1.0, gt=0)
    fit_window: float = Field(default_factory=lambda: settings.FIT_WINDOW_S, gt=0)
    envelope_window: int = Field(default_factory=lambda: settings.ENVELOPE_WINDOW, ge=1)
    freq_table: Dict[str, List[FreqLevel]] = Field(default_factory=_default_freq_table)

    @field_validator("freq_table")
    @classmethod
    def _descending(cls, table):
        for domain in DVFS_DOMAINS:
            if not table.get(domain):
                raise ValueError(f"frequency table missing domain {domain!r}")
        for domain, levels in table.items():
            if any(b.mhz > a.mhz or b.voltage > a.voltage for a, b in zip(levels, levels[1:])):
                raise ValueError(f"{domain}: levels must be ordered from the fastest down")
        return table

    @property
    def hold(self) -> float:
        return self.tick if self.sticky_hold is None else self.sticky_hold

    def perf_scale(self, domain: str, level: int) -> float:
        levels = self.freq_table[domain]
        return levels[level].mhz / levels[0].mhz

    def power_scale(self, domain: str, level: int) -> float:
        """(f / f_max) (V / V_max)^2 at a level index; level 0 is the fastest."""
        levels = self.freq_table[domain]
        return self.perf_scale(domain, level) * (levels[level].voltage / levels[0].voltage) ** 2

    def n_levels(self, domain: str) -> int:
        return len(self.freq_table[domain])

    def check_model(self, model: ThermalModel) -> None:
        t_min, t_max = model.domain
        if not t_min < self.t_limit < t_max:
            raise ValueError(f"t_limit {self.t_limit} K outside model domain [{t_min}, {t_max}]")
        for domain in DVFS_DOMAINS:
            model.resource_index(domain)


class ActionKind(str, Enum):
    NONE = "None"
    MIGRATE = "Migrate"
    THROTTLE = "Throttle"


class Action(BaseModel):
    kind: ActionKind = ActionKind.NONE
    pid: Optional[int] = None
    levels: Dict[str, int] = {}


class GovernorDecision(BaseModel):
    tick_time: float
    policy: str
    t_fp_predicted: Optional[float] = None
    t_fp_eta: Optional[float] = None
    violation_imminent: bool = False
    action: Action = Action()
    reason: str = ""


@dataclass(frozen=True)
class SimState:
    """What the governor sees at a control tick."""
    time: float
    temps: np.ndarray
    envelope: np.ndarray
    processes: Tuple[Process, ...]
    levels: Dict[str, int]
    base_power: np.ndarray
    attributions: Dict[int, float] = field(default_factory=dict)
    fit: Optional[FirstOrderFit] = None

    def process(self, pid: int) -> Process:
        for p in self.processes:
            if p.pid == pid:
                return p
        raise KeyError(f"no process with pid {pid}")


def compose_power(processes, levels: Dict[str, int], base_power: np.ndarray, model: ThermalModel,
                  cfg: GovernorConfig) -> np.ndarray:
    """P_C per resource from the base load plus every process at the current frequency levels."""
    p_c = np.array(base_power, dtype=float)
    gpu = model.resource_index("gpu")
    for p in processes:
        domain = p.cpu_domain
        dyn = p.p_dyn_big if p.mapping is Cluster.BIG else p.p_dyn_little
        p_c[model.resource_index(domain)] += dyn * cfg.power_scale(domain, levels[domain])
        p_c[gpu] += p.p_dyn_gpu * cfg.power_scale("gpu", levels["gpu"])
    return p_c


def cpu_attribution(process: Process, levels: Dict[str, int], cfg: GovernorConfig) -> float:
    """Share of its cluster's P_C attributed to a process, proportional to declared dynamic power."""
    domain = process.cpu_domain
    dyn = process.p_dyn_big if process.mapping is Cluster.BIG else process.p_dyn_little
    return dyn * cfg.power_scale(domain, levels[domain])


def performance(process: Process, levels: Dict[str, int], cfg: GovernorConfig) -> float:
    base = process.perf_big if process.mapping is Cluster.BIG else process.perf_little
    return base * cfg.perf_scale(process.bottleneck, levels[process.bottleneck])


def _eligible(process: Process, now: float) -> bool:
    return process.mapping is Cluster.BIG and not process.realtime and process.sticky_until <= now


def hottest_process(attributions: Dict[int, float], processes, now: float = 0.0) -> int:
    """Eligible process with the largest mean attributed power; ties go to the smaller pid."""
    candidates = [p for p in processes if _eligible(p, now)]
    if not candidates:
        raise NoCandidateError("no eligible process on the big cluster")
    best = max(candidates, key=lambda p: (attributions.get(p.pid, 0.0), -p.pid))
    return best.pid


def apply_migration(pid: int, state: SimState, cfg: GovernorConfig) -> SimState:
    process = state.process(pid)
    if process.realtime:
        raise ContractViolation(f"process {pid} is realtime-registered")
    if process.mapping is not Cluster.BIG:
        raise ContractViolation(f"process {pid} is not on the big cluster")
    moved = process.model_copy(update={"mapping": Cluster.LITTLE, "sticky_until": state.time + cfg.hold})
    processes = tuple(moved if p.pid == pid else p for p in state.processes)
    logger.info(f"[{state.time:8.1f}s] migrate pid {pid} ({process.name or 'unnamed'}) to the little cluster")
    return replace(state, processes=processes)


def default_mapper(state: SimState) -> SimState:
    """Return processes whose migration hold expired to their preferred big cluster."""
    changed = False
    processes = []
    for p in state.processes:
        if (p.mapping is Cluster.LITTLE and p.preferred is Cluster.BIG
                and not p.realtime and p.sticky_until <= state.time):
            p = p.model_copy(update={"mapping": Cluster.BIG})
            changed = True
        processes.append(p)
    return replace(state, processes=tuple(processes)) if changed else state


def _time_constant(fit: Optional[FirstOrderFit], model: ThermalModel) -> float:
    tau_model = model.dominant_time_constant
    if fit is not None and model.sample_period <= fit.tau <= 10.0 * tau_model:
        return fit.tau
    return tau_model


def control_tick(state: SimState, cfg: GovernorConfig, model: ThermalModel,
                 newton_cfg: Optional[NewtonConfig] = None,
                 workspace: Optional[AcceleratedWorkspace] = None) -> GovernorDecision:
    p_c = compose_power(state.processes, state.levels, state.base_power, model, cfg)
    decision = dict(tick_time=state.time, policy="predictive")
    seed = state.temps if np.all(state.temps > 0) else None
    try:
        solution = solve(p_c, model, newton_cfg, workspace=workspace, seed=seed)
    except ConvergenceError as e:
        solution = None
        logger.debug(f"Fixed-point solve raised: {e}")

    if solution is None or not solution.converged:
        decision.update(t_fp_eta=0.0, violation_imminent=True,
                        reason="fixed-point solve failed; treating violation as imminent")
    else:
        t_fp = solution.hottest
        hot = int(np.argmax(solution.t_star))
        decision["t_fp_predicted"] = t_fp
        if t_fp <= cfg.t_limit:
            decision["reason"] = "predicted fixed point below limit"
            return GovernorDecision(**decision)
        anchored = FirstOrderFit(
            t_u_init=float(state.envelope[hot]),
            t_fix=t_fp,
            tau=_time_constant(state.fit, model),
            rmse=0.0,
            window_used=0.0,
            sample_rate=0.0,
        )
        eta = time_to_fixed_point(anchored, t_fp - cfg.t_limit)
        decision["t_fp_eta"] = eta
        if eta >= cfg.t_horizon:
            decision["reason"] = f"limit crossing predicted in {eta:.1f} s, beyond horizon"
            return GovernorDecision(**decision)
        decision.update(violation_imminent=True, reason=f"limit crossing predicted in {eta:.1f} s")

    try:
        pid = hottest_process(state.attributions, state.processes, state.time)
    except NoCandidateError:
        on_big = [p for p in state.processes if p.mapping is Cluster.BIG and p.sticky_until <= state.time]
        if on_big and all(p.realtime for p in on_big):
            decision["reason"] = "only candidate is realtime-registered"
        else:
            decision["reason"] = "violation imminent but no eligible process"
        return GovernorDecision(**decision)
    decision["action"] = Action(kind=ActionKind.MIGRATE, pid=pid)
    return GovernorDecision(**decision)


def baseline_tick(state: SimState, cfg: GovernorConfig) -> GovernorDecision:
    """Reactive throttling: one level down above the limit, one level up below limit - hysteresis."""
    hottest = float(np.max(state.temps))
    decision = dict(tick_time=state.time, policy="baseline")
    if hottest > cfg.t_limit:
        levels = {d: min(state.levels[d] + 1, cfg.n_levels(d) - 1) for d in DVFS_DOMAINS}
        reason = f"{hottest:.2f} K above limit"
    elif hottest < cfg.t_limit - cfg.hysteresis_k:
        levels = {d: max(state.levels[d] - 1, 0) for d in DVFS_DOMAINS}
        reason = f"{hottest:.2f} K below limit band"
    else:
        return GovernorDecision(**decision, reason="within hysteresis band")
    if levels == {d: state.levels[d] for d in DVFS_DOMAINS}:
        return GovernorDecision(**decision, reason=reason + "; no level change possible")
    return GovernorDecision(**decision, action=Action(kind=ActionKind.THROTTLE, levels=levels), reason=reason)


def apply_throttle(state: SimState, action: Action) -> SimState:
    if action.kind is not ActionKind.THROTTLE:
        raise ContractViolation(f"cannot throttle with a {action.kind.value} action")
    return replace(state, levels={**state.levels, **action.levels})
