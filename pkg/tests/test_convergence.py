import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from src.thermal.convergence import (
    PowerRange,
    SweepSpec,
    boundary_cells,
    boundary_frame,
    check_contraction,
    leakage_axes,
    region_knee,
    sweep,
)
from src.thermal.errors import DomainError
from src.thermal.mimo import solve

COARSE = PowerRange(min=0.0024, max=4.0, step=0.4)


@pytest.fixture(scope="module")
def coarse_spec():
    return SweepSpec(cpu_power_range=COARSE, gpu_power_range=COARSE,
                     fixed_powers={"little": 0.1, "mem": 0.2}, temp_grid_density=5)


@pytest.fixture(scope="module")
def coarse_result(coarse_spec, default_model):
    return sweep(coarse_spec, default_model, workers=1)


def test_power_range_values():
    values = PowerRange(min=0.0024, max=4.0, step=0.1).values()
    assert values.size == 40
    assert values[0] == pytest.approx(0.0024)
    assert values[-1] == pytest.approx(3.9024)
    assert PowerRange(min=1.0, max=1.0, step=0.5).values().tolist() == [1.0]
    with pytest.raises(ValidationError):
        PowerRange(min=2.0, max=1.0, step=0.1)


def test_leakage_axes(default_model):
    assert leakage_axes(default_model).tolist() == [2, 4]


def test_low_power_is_guaranteed(default_model, coarse_spec):
    cell = check_contraction(coarse_spec.power_vector(default_model, 0.5, 0.5), default_model, coarse_spec)
    assert cell.guaranteed
    assert cell.range_contained
    assert 0.0 < cell.max_jacobian_norm < 1.0


def test_high_power_is_not_guaranteed(default_model, coarse_spec):
    cell = check_contraction(coarse_spec.power_vector(default_model, 4.0, 4.0), default_model, coarse_spec)
    assert not cell.guaranteed


def test_negative_power_is_rejected(default_model, coarse_spec):
    with pytest.raises(DomainError):
        check_contraction(np.array([0.1, -1.0, 0.2, 0.5]), default_model, coarse_spec)


def test_linear_model_contracts_trivially(model_factory, rng):
    model = model_factory(rng, leaky=False)
    spec = SweepSpec(cpu_resource="r0", gpu_resource="r1", temp_grid_density=3)
    cell = check_contraction(spec.power_vector(model, 0.5, 0.5), model, spec)
    assert cell.max_jacobian_norm == 0.0
    assert cell.guaranteed


def test_sweep_grid_shape_and_frame(coarse_result):
    assert coarse_result.shape == (10, 10)
    frame = coarse_result.to_frame()
    assert list(frame.columns) == ["p_cpu_w", "p_gpu_w", "max_jac_norm", "range_contained", "guaranteed"]
    assert len(frame) == 100
    # row-major: CPU outer, GPU inner
    assert frame["p_cpu_w"].iloc[1] == frame["p_cpu_w"].iloc[0]
    assert frame["p_gpu_w"].iloc[1] > frame["p_gpu_w"].iloc[0]


def test_region_shrinks_with_power(coarse_result):
    grid = coarse_result.guaranteed_grid()
    assert grid[0, 0]
    assert not grid[-1, -1]
    assert coarse_result.is_monotone()


def test_region_knee(coarse_result):
    knee = region_knee(coarse_result)
    assert knee is not None
    assert 2.0 < knee < 4.0


def test_boundary_cells_are_guaranteed_edge_cells(coarse_result):
    boundary = boundary_cells(coarse_result)
    assert boundary
    assert all(c.guaranteed for c in boundary)
    frame = boundary_frame(boundary)
    assert (frame["p_total_w"] == frame["p_cpu_w"] + frame["p_gpu_w"]).all()


def test_empty_region_has_no_knee(default_model):
    hot = PowerRange(min=3.6, max=4.0, step=0.4)
    spec = SweepSpec(cpu_power_range=hot, gpu_power_range=hot, temp_grid_density=3)
    result = sweep(spec, default_model, workers=1)
    assert not result.guaranteed_grid().any()
    assert region_knee(result) is None
    assert boundary_cells(result) == []


def test_sweep_is_independent_of_worker_count(default_model):
    small = PowerRange(min=0.5, max=3.5, step=1.0)
    spec = SweepSpec(cpu_power_range=small, gpu_power_range=small, temp_grid_density=3)
    serial = sweep(spec, default_model, workers=1).to_frame()
    threaded = sweep(spec, default_model, workers=3).to_frame()
    pd.testing.assert_frame_equal(serial, threaded)


@pytest.fixture(scope="module")
def full_spec():
    return SweepSpec(fixed_powers={"little": 0.1, "mem": 0.2}, temp_grid_density=5)


@pytest.fixture(scope="module")
def full_result(full_spec, default_model):
    return sweep(full_spec, default_model, workers=4)


def test_full_resolution_region_is_delimited_by_range(full_result):
    result = full_result
    assert result.shape == (40, 40)
    assert result.max_jacobian_norm() < 1.0
    assert all(not c.range_contained for c in result.cells if not c.guaranteed)
    assert result.is_monotone()
    assert 3.0 <= region_knee(result) <= 4.0


def test_guaranteed_cells_have_in_domain_fixed_points(full_spec, full_result, default_model):
    guaranteed = [c for c in full_result.cells if c.guaranteed]
    rng = np.random.default_rng(17)
    picks = rng.choice(len(guaranteed), size=min(50, len(guaranteed)), replace=False)
    for i in picks:
        cell = guaranteed[i]
        sol = solve(full_spec.power_vector(default_model, cell.p_cpu, cell.p_gpu), default_model)
        assert sol.converged
        assert not sol.out_of_domain
