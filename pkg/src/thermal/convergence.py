"""
Region of guaranteed Newton convergence over a (CPU power, GPU power) grid.

A power composition is guaranteed when the Newton function g(T) = T + dT(T)
maps the temperature domain into itself and its Jacobian has infinity-norm
below one everywhere on the sampled grid.
"""
import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, field_validator, model_validator

from ..config.settings import settings

from .errors import DegenerateLeakageError, DomainError, SingularJacobianError
from .mimo import AcceleratedWorkspace, build_workspace, newton_step_accelerated
from .model import ThermalModel, _check_vector, leakage_vector

logger = logging.getLogger(__name__)

FD_STEP = 0.01


class PowerRange(BaseModel):
    min: float = Field(ge=0)
    max: float
    step: float = Field(gt=0)

    @model_validator(mode="after")
    def _nonempty(self):
        if self.max < self.min:
            raise ValueError(f"empty range [{self.min}, {self.max}]")
        return self

    def values(self) -> np.ndarray:
        n = int(np.floor((self.max - self.min) / self.step + 1e-9)) + 1
        return self.min + self.step * np.arange(n)


class SweepSpec(BaseModel):
    cpu_power_range: PowerRange = PowerRange(min=0.0024, max=4.0, step=0.1)
    gpu_power_range: PowerRange = PowerRange(min=0.0024, max=4.0, step=0.1)
    fixed_powers: Dict[str, float] = {}
    temp_grid_density: int = Field(default_factory=lambda: settings.SWEEP_DENSITY)
    domain: Optional[Tuple[float, float]] = None
    cpu_resource: str = "big"
    gpu_resource: str = "gpu"

    @field_validator("temp_grid_density")
    @classmethod
    def _density(cls, v: int) -> int:
        if v < 2:
            raise ValueError(f"temp_grid_density must be >= 2, got {v}")
        return v

    @field_validator("domain")
    @classmethod
    def _domain(cls, v):
        if v is not None and not 0 < v[0] < v[1]:
            raise ValueError(f"domain must satisfy 0 < T_min < T_max, got {v}")
        return v

    def power_vector(self, model: ThermalModel, p_cpu: float, p_gpu: float) -> np.ndarray:
        p_c = np.zeros(model.n_resources)
        for name, value in self.fixed_powers.items():
            p_c[model.resource_index(name)] = value
        p_c[model.resource_index(self.cpu_resource)] = p_cpu
        p_c[model.resource_index(self.gpu_resource)] = p_gpu
        return p_c


class ConvergenceCell(BaseModel):
    p_cpu: float
    p_gpu: float
    max_jacobian_norm: float
    range_contained: bool
    guaranteed: bool
    note: str = ""


def leakage_axes(model: ThermalModel) -> np.ndarray:
    """Hotspots that drive some active resource's leakage."""
    return np.unique(model.driving[model.active])


def _grid_states(p_c: np.ndarray, model: ThermalModel, axes: np.ndarray, levels: np.ndarray):
    """Full temperature vectors for each grid point on the leakage axes.

    The other hotspots sit at the affine response to the leakage the gridded
    temperatures produce.
    """
    base = np.full(model.n_hotspots, levels[0])
    for point in itertools.product(levels, repeat=axes.size):
        t = base.copy()
        t[axes] = point
        total = p_c + leakage_vector(t, model)
        affine = model.ambient + model.steady_gain @ total
        mask = np.ones(model.n_hotspots, dtype=bool)
        mask[axes] = False
        t[mask] = affine[mask]
        yield t


def check_contraction(p_c, model: ThermalModel, spec: SweepSpec,
                      workspace: Optional[AcceleratedWorkspace] = None) -> ConvergenceCell:
    p_c = _check_vector(p_c, model.n_resources, "p_c")
    if np.any(p_c < 0):
        raise DomainError("p_c must be non-negative")
    ws = workspace or build_workspace(model)
    t_min, t_max = spec.domain or model.domain
    axes = leakage_axes(model)
    levels = np.linspace(t_min, t_max, spec.temp_grid_density)
    p_cpu = float(p_c[model.resource_index(spec.cpu_resource)])
    p_gpu = float(p_c[model.resource_index(spec.gpu_resource)])

    def g(t):
        return t + newton_step_accelerated(t, p_c, model, ws)

    max_norm = 0.0
    contained = True
    try:
        for t in _grid_states(p_c, model, axes, levels):
            gt = g(t)
            if np.any(gt < t_min) or np.any(gt > t_max):
                contained = False
            # g is flat along hotspots that drive no leakage, so only the axis columns are nonzero
            cols = np.empty((model.n_hotspots, axes.size))
            for c, k in enumerate(axes):
                h = np.zeros(model.n_hotspots)
                h[k] = FD_STEP
                cols[:, c] = (g(t + h) - g(t - h)) / (2.0 * FD_STEP)
            max_norm = max(max_norm, float(np.max(np.abs(cols).sum(axis=1))) if axes.size else 0.0)
    except (SingularJacobianError, DegenerateLeakageError) as e:
        logger.debug(f"Cell ({p_cpu:.4g} W, {p_gpu:.4g} W) not guaranteed: {e}")
        return ConvergenceCell(p_cpu=p_cpu, p_gpu=p_gpu, max_jacobian_norm=float("inf"),
                               range_contained=False, guaranteed=False, note=str(e))
    return ConvergenceCell(
        p_cpu=p_cpu,
        p_gpu=p_gpu,
        max_jacobian_norm=max_norm,
        range_contained=contained,
        guaranteed=bool(max_norm < 1.0 and contained),
    )


@dataclass(frozen=True)
class SweepResult:
    """Cells in row-major order: CPU power outer, GPU power inner."""
    cpu_values: np.ndarray
    gpu_values: np.ndarray
    cells: Tuple[ConvergenceCell, ...]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.cpu_values.size, self.gpu_values.size

    def guaranteed_grid(self) -> np.ndarray:
        return np.array([c.guaranteed for c in self.cells], dtype=bool).reshape(self.shape)

    def is_monotone(self) -> bool:
        """More power never turns a non-guaranteed cell into a guaranteed one."""
        grid = self.guaranteed_grid()
        return bool(np.all(grid[1:, :] <= grid[:-1, :]) and np.all(grid[:, 1:] <= grid[:, :-1]))

    def max_jacobian_norm(self) -> float:
        return max(c.max_jacobian_norm for c in self.cells)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "p_cpu_w": [c.p_cpu for c in self.cells],
            "p_gpu_w": [c.p_gpu for c in self.cells],
            "max_jac_norm": [c.max_jacobian_norm for c in self.cells],
            "range_contained": [c.range_contained for c in self.cells],
            "guaranteed": [c.guaranteed for c in self.cells],
        })


def sweep(spec: SweepSpec, model: ThermalModel, workers: Optional[int] = None) -> SweepResult:
    """One ConvergenceCell per grid point; output order is independent of ``workers``."""
    cpu_values = spec.cpu_power_range.values()
    gpu_values = spec.gpu_power_range.values()
    ws = build_workspace(model)
    compositions = [spec.power_vector(model, pc, pg) for pc in cpu_values for pg in gpu_values]
    workers = workers or settings.SWEEP_WORKERS

    def cell(p_c):
        return check_contraction(p_c, model, spec, workspace=ws)

    logger.info(f"Sweeping {len(compositions)} power cells at density {spec.temp_grid_density} "
                f"with {workers} worker(s)")
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(cell, compositions))
    else:
        cells = [cell(p_c) for p_c in compositions]
    return SweepResult(cpu_values=cpu_values, gpu_values=gpu_values, cells=tuple(cells))


def boundary_cells(result: SweepResult) -> List[ConvergenceCell]:
    """Guaranteed cells with at least one non-guaranteed 4-neighbour."""
    grid = result.guaranteed_grid()
    rows, cols = grid.shape
    boundary = []
    for i, j in itertools.product(range(rows), range(cols)):
        if not grid[i, j]:
            continue
        neighbours = [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)]
        if any(0 <= a < rows and 0 <= b < cols and not grid[a, b] for a, b in neighbours):
            boundary.append(result.cells[i * cols + j])
    logger.info(f"{len(boundary)} boundary cells")
    return boundary


def boundary_frame(cells: List[ConvergenceCell]) -> pd.DataFrame:
    return pd.DataFrame({
        "p_cpu_w": [c.p_cpu for c in cells],
        "p_gpu_w": [c.p_gpu for c in cells],
        "p_total_w": [c.p_cpu + c.p_gpu for c in cells],
    })


def region_knee(result: SweepResult) -> Optional[float]:
    """Largest p_cpu + p_gpu among guaranteed cells, or None for an empty region."""
    totals = [c.p_cpu + c.p_gpu for c in result.cells if c.guaranteed]
    return max(totals) if totals else None
