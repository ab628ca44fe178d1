import numpy as np
import pytest

from src.thermal.errors import ContractViolation, NoCandidateError
from src.thermal.governor import (
    ActionKind,
    Cluster,
    GovernorConfig,
    Process,
    SimState,
    apply_migration,
    apply_throttle,
    baseline_tick,
    compose_power,
    control_tick,
    cpu_attribution,
    default_mapper,
    hottest_process,
    performance,
)
from src.thermal.model import to_kelvin

BASE = np.array([0.1, 0.0, 0.2, 0.0])
TOP = {"little": 0, "big": 0, "gpu": 0}


def foreground(**kw):
    return Process(pid=1, name="gpu_benchmark", p_dyn_big=0.5, p_dyn_little=0.25, p_dyn_gpu=1.2,
                   perf_big=1.0, perf_little=0.6, **kw)


def background(**kw):
    return Process(pid=2, name="background_compute", p_dyn_big=1.5, p_dyn_little=0.3,
                   perf_big=1.0, perf_little=0.3, **kw)


def make_state(model, processes, celsius=25.0, levels=None, time=10.0):
    cfg = GovernorConfig()
    levels = dict(levels or TOP)
    temps = np.full(model.n_hotspots, to_kelvin(celsius))
    return SimState(
        time=time,
        temps=temps,
        envelope=temps.copy(),
        processes=tuple(processes),
        levels=levels,
        base_power=BASE.copy(),
        attributions={p.pid: cpu_attribution(p, levels, cfg) for p in processes},
    )


def test_power_scale_and_table():
    cfg = GovernorConfig()
    assert cfg.power_scale("big", 0) == 1.0
    assert cfg.power_scale("big", 5) == pytest.approx(0.5 * (0.9 / 1.25) ** 2)
    assert cfg.perf_scale("gpu", 4) == pytest.approx(350 / 600)
    assert cfg.hold == cfg.tick
    with pytest.raises(ValueError):
        GovernorConfig(freq_table={"little": [{"mhz": 600, "voltage": 0.9}, {"mhz": 1400, "voltage": 1.2}],
                                   "big": [{"mhz": 2000, "voltage": 1.25}],
                                   "gpu": [{"mhz": 600, "voltage": 1.0}]})


def test_config_must_fit_model_domain(default_model):
    GovernorConfig().check_model(default_model)
    with pytest.raises(ValueError):
        GovernorConfig(t_limit=to_kelvin(150.0)).check_model(default_model)


def test_process_validation():
    with pytest.raises(ValueError):
        Process(pid=3, p_dyn_big=0.2, p_dyn_little=0.5)


def test_compose_power_follows_mapping(default_model):
    cfg = GovernorConfig()
    on_big = compose_power([foreground(), background()], TOP, BASE, default_model, cfg)
    assert on_big.tolist() == pytest.approx([0.1, 2.0, 0.2, 1.2])
    moved = compose_power([foreground(), background(mapping=Cluster.LITTLE)], TOP, BASE, default_model, cfg)
    assert moved.tolist() == pytest.approx([0.4, 0.5, 0.2, 1.2])


def test_hottest_process_selection():
    procs = [foreground(), background()]
    assert hottest_process({1: 0.5, 2: 1.5}, procs) == 2
    assert hottest_process({1: 1.0, 2: 1.0}, procs) == 1
    assert hottest_process({1: 0.5, 2: 1.5}, [foreground(), background(realtime=True)]) == 1
    assert hottest_process({1: 0.5, 2: 1.5}, [foreground(), background(sticky_until=5.0)], now=1.0) == 1
    with pytest.raises(NoCandidateError):
        hottest_process({2: 1.5}, [background(realtime=True)])
    with pytest.raises(NoCandidateError):
        hottest_process({}, [])


def test_apply_migration(default_model):
    cfg = GovernorConfig()
    state = make_state(default_model, [foreground(), background()])
    moved = apply_migration(2, state, cfg)
    assert moved.process(2).mapping is Cluster.LITTLE
    assert moved.process(2).sticky_until == pytest.approx(state.time + cfg.tick)
    assert moved.process(1) == state.process(1)
    assert state.process(2).mapping is Cluster.BIG


def test_apply_migration_contract(default_model):
    cfg = GovernorConfig()
    state = make_state(default_model, [background(realtime=True), foreground(mapping=Cluster.LITTLE)])
    with pytest.raises(ContractViolation):
        apply_migration(2, state, cfg)
    with pytest.raises(ContractViolation):
        apply_migration(1, state, cfg)


def test_default_mapper_returns_after_hold(default_model):
    state = make_state(default_model, [background(mapping=Cluster.LITTLE, sticky_until=10.05)], time=10.0)
    assert default_mapper(state).process(2).mapping is Cluster.LITTLE
    later = make_state(default_model, [background(mapping=Cluster.LITTLE, sticky_until=10.05)], time=10.1)
    assert default_mapper(later).process(2).mapping is Cluster.BIG
    pinned = make_state(default_model, [background(mapping=Cluster.LITTLE, preferred=Cluster.LITTLE)])
    assert default_mapper(pinned).process(2).mapping is Cluster.LITTLE


def test_performance_scales_with_bottleneck_domain():
    cfg = GovernorConfig()
    assert performance(foreground(), TOP, cfg) == 1.0
    assert performance(foreground(), {"little": 0, "big": 0, "gpu": 4}, cfg) == pytest.approx(350 / 600)
    assert performance(background(mapping=Cluster.LITTLE), TOP, cfg) == pytest.approx(0.3)


def test_cool_fixed_point_needs_no_action(default_model):
    decision = control_tick(make_state(default_model, [foreground()]), GovernorConfig(), default_model)
    assert decision.action.kind is ActionKind.NONE
    assert not decision.violation_imminent
    assert decision.t_fp_predicted < to_kelvin(85.0)


def test_distant_violation_is_not_imminent(default_model):
    decision = control_tick(make_state(default_model, [foreground(), background()]), GovernorConfig(),
                            default_model)
    assert decision.t_fp_predicted > to_kelvin(85.0)
    assert decision.t_fp_eta > 60.0
    assert not decision.violation_imminent
    assert decision.action.kind is ActionKind.NONE


def test_imminent_violation_migrates_hottest(default_model):
    state = make_state(default_model, [foreground(), background()], celsius=80.0)
    decision = control_tick(state, GovernorConfig(), default_model)
    assert decision.violation_imminent
    assert decision.t_fp_eta < 60.0
    assert decision.action.kind is ActionKind.MIGRATE
    assert decision.action.pid == 2


def test_realtime_process_is_never_selected(default_model):
    state = make_state(default_model, [background(realtime=True)], celsius=80.0)
    state.base_power[3] = 1.2
    decision = control_tick(state, GovernorConfig(), default_model)
    assert decision.violation_imminent
    assert decision.action.kind is ActionKind.NONE
    assert "realtime" in decision.reason


def test_solver_failure_counts_as_imminent(default_model):
    state = make_state(default_model, [foreground(), background()])
    state.base_power[:] = [2.0, 8.0, 2.0, 8.0]
    decision = control_tick(state, GovernorConfig(), default_model)
    assert decision.violation_imminent
    assert decision.t_fp_eta == 0.0
    assert decision.action.kind is ActionKind.MIGRATE


@pytest.mark.parametrize(
    "celsius, levels, expected",
    [
        (86.0, TOP, {"little": 1, "big": 1, "gpu": 1}),
        (80.0, {"little": 2, "big": 3, "gpu": 1}, {"little": 1, "big": 2, "gpu": 0}),
    ],
)
def test_baseline_steps_levels(default_model, celsius, levels, expected):
    state = make_state(default_model, [foreground()], celsius=celsius, levels=levels)
    decision = baseline_tick(state, GovernorConfig())
    assert decision.action.kind is ActionKind.THROTTLE
    assert decision.action.levels == expected
    assert apply_throttle(state, decision.action).levels == expected


def test_baseline_holds_inside_band_and_at_limits(default_model):
    cfg = GovernorConfig()
    band = baseline_tick(make_state(default_model, [foreground()], celsius=84.0), cfg)
    assert band.action.kind is ActionKind.NONE
    floor = {d: cfg.n_levels(d) - 1 for d in ("little", "big", "gpu")}
    pinned = baseline_tick(make_state(default_model, [foreground()], celsius=90.0, levels=floor), cfg)
    assert pinned.action.kind is ActionKind.NONE
    assert baseline_tick(make_state(default_model, [foreground()], celsius=30.0), cfg).action.kind is ActionKind.NONE


def test_apply_throttle_rejects_other_actions(default_model):
    state = make_state(default_model, [foreground()])
    decision = control_tick(state, GovernorConfig(), default_model)
    with pytest.raises(ContractViolation):
        apply_throttle(state, decision.action)
