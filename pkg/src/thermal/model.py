"""
Coupled power-temperature state-space model.

Temperatures are kelvin everywhere inside the package; Celsius only appears in
model files and CLI output. The linear network relaxes towards ``ambient``:

    T[k+1] = A (T[k] - T_amb) + B P[k] + T_amb

which is exactly ``A T + B P`` for a zero-ambient model.
"""
import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from scipy.linalg import lu_factor, lu_solve

from .errors import ContractViolation, DomainError, ModelValidationError, ShapeError

logger = logging.getLogger(__name__)

CELSIUS_OFFSET = 273.15
SYMMETRY_TOL = 1e-12
MAX_CONDITION = 1e12


def to_kelvin(celsius):
    if np.ndim(celsius):
        return np.asarray(celsius, dtype=float) + CELSIUS_OFFSET
    return float(celsius) + CELSIUS_OFFSET


def to_celsius(kelvin):
    if np.ndim(kelvin):
        return np.asarray(kelvin, dtype=float) - CELSIUS_OFFSET
    return float(kelvin) - CELSIUS_OFFSET


@dataclass(frozen=True)
class LeakageParams:
    """Leakage coefficients of one resource: P_leak = V * kappa1 * T^2 * exp(kappa2 / T)."""
    voltage: float
    kappa1: float
    kappa2: float
    driving_hotspot: int
    active: bool = True

    @property
    def p2(self) -> float:
        """Temperature-independent prefactor V * kappa1."""
        return self.voltage * self.kappa1

    def validate(self, n_hotspots: int, name: str = "resource") -> None:
        if not 0 <= self.driving_hotspot < n_hotspots:
            raise ModelValidationError(
                "driving_hotspot_range",
                f"{name}: driving_hotspot {self.driving_hotspot} outside [0, {n_hotspots})",
            )
        if not self.active:
            return
        if not self.kappa1 > 0:
            raise ModelValidationError("kappa1_positive", f"{name}: kappa1 = {self.kappa1}")
        if not self.kappa2 < 0:
            raise ModelValidationError("kappa2_negative", f"{name}: kappa2 = {self.kappa2}")
        if not self.voltage > 0:
            raise ModelValidationError("voltage_positive", f"{name}: V = {self.voltage}")


def leakage_power(T: float, params: LeakageParams) -> float:
    """Leakage power in watts at absolute temperature ``T``; increasing in T since kappa2 < 0."""
    if not params.active:
        raise ContractViolation("leakage_power called with inactive leakage parameters")
    if not T > 0:
        raise DomainError(f"temperature must be positive kelvin, got {T}")
    return params.p2 * T * T * np.exp(params.kappa2 / T)


def leakage_slope(T: float, params: LeakageParams) -> float:
    """dP_leak/dT = V kappa1 exp(kappa2/T) (2T - kappa2)."""
    if not params.active:
        raise ContractViolation("leakage_slope called with inactive leakage parameters")
    if not T > 0:
        raise DomainError(f"temperature must be positive kelvin, got {T}")
    return params.p2 * np.exp(params.kappa2 / T) * (2.0 * T - params.kappa2)


@dataclass(frozen=True)
class PowerBreakdown:
    p_c: np.ndarray
    p_leak: np.ndarray
    total: np.ndarray


def _frozen(array) -> np.ndarray:
    out = np.array(array, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ThermalModel:
    """Immutable N-hotspot / M-resource model; validated on construction."""
    A: np.ndarray
    B: np.ndarray
    hotspot_names: Tuple[str, ...]
    resource_names: Tuple[str, ...]
    leakage: Tuple[LeakageParams, ...]
    domain: Tuple[float, float]
    ambient: float
    sample_period: float
    name: str = field(default="model", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "A", _frozen(np.atleast_2d(self.A)))
        object.__setattr__(self, "B", _frozen(np.atleast_2d(self.B)))
        object.__setattr__(self, "hotspot_names", tuple(self.hotspot_names))
        object.__setattr__(self, "resource_names", tuple(self.resource_names))
        object.__setattr__(self, "leakage", tuple(self.leakage))
        object.__setattr__(self, "domain", (float(self.domain[0]), float(self.domain[1])))
        self._validate()

    def _validate(self) -> None:
        A, B = self.A, self.B
        n = A.shape[0]
        if A.ndim != 2 or A.shape != (n, n):
            raise ModelValidationError("A_square", f"A has shape {A.shape}")
        if B.ndim != 2 or B.shape[0] != n:
            raise ModelValidationError("B_shape", f"B has shape {B.shape}, expected ({n}, M)")
        m = B.shape[1]
        if len(self.hotspot_names) != n:
            raise ModelValidationError("hotspot_names", f"{len(self.hotspot_names)} names for {n} hotspots")
        if len(self.resource_names) != m or len(self.leakage) != m:
            raise ModelValidationError(
                "resource_names",
                f"{len(self.resource_names)} names and {len(self.leakage)} leakage entries for {m} resources",
            )
        if not np.all(np.isfinite(A)) or not np.all(np.isfinite(B)):
            raise ModelValidationError("finite", "A and B must be finite")
        asym = float(np.max(np.abs(A - A.T)))
        if asym > SYMMETRY_TOL:
            raise ModelValidationError("A_symmetric", f"max |A - A^T| = {asym:.3e}")
        radius = float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (A + A.T)))))
        if not radius < 1.0:
            raise ModelValidationError("A_stable", f"spectral radius {radius:.6f} >= 1")
        if np.any(B < 0):
            raise ModelValidationError("B_nonnegative", "B has negative entries")
        cond = float(np.linalg.cond(A - np.eye(n)))
        if not np.isfinite(cond) or cond > MAX_CONDITION:
            raise ModelValidationError("A_minus_I_invertible", f"cond(A - I) = {cond:.3e}")
        t_min, t_max = self.domain
        if not 0 < t_min < t_max:
            raise ModelValidationError("domain", f"need 0 < T_min < T_max, got [{t_min}, {t_max}]")
        if not self.sample_period > 0:
            raise ModelValidationError("sample_period", f"Ts = {self.sample_period}")
        if not self.ambient >= 0:
            raise ModelValidationError("ambient", f"ambient = {self.ambient} K")
        for name, params in zip(self.resource_names, self.leakage):
            params.validate(n, name)

    @property
    def n_hotspots(self) -> int:
        return self.A.shape[0]

    @property
    def n_resources(self) -> int:
        return self.B.shape[1]

    @cached_property
    def a_minus_i(self) -> np.ndarray:
        return _frozen(self.A - np.eye(self.n_hotspots))

    @cached_property
    def a_minus_i_lu(self):
        return lu_factor(self.a_minus_i)

    @cached_property
    def a_minus_i_inv(self) -> np.ndarray:
        """(A - I)^-1, factored once per model."""
        return _frozen(lu_solve(self.a_minus_i_lu, np.eye(self.n_hotspots)))

    @cached_property
    def steady_gain(self) -> np.ndarray:
        """G = (I - A)^-1 B in K/W: steady-state rise of each hotspot per watt of each resource."""
        return _frozen(-self.a_minus_i_inv @ self.B)

    @cached_property
    def active(self) -> np.ndarray:
        idx = np.array([j for j, p in enumerate(self.leakage) if p.active], dtype=int)
        idx.setflags(write=False)
        return idx

    @cached_property
    def driving(self) -> np.ndarray:
        idx = np.array([p.driving_hotspot for p in self.leakage], dtype=int)
        idx.setflags(write=False)
        return idx

    @cached_property
    def p2(self) -> np.ndarray:
        return _frozen([p.p2 if p.active else 0.0 for p in self.leakage])

    @cached_property
    def kappa2(self) -> np.ndarray:
        return _frozen([p.kappa2 for p in self.leakage])

    @cached_property
    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvalsh(self.A))))

    @property
    def dominant_time_constant(self) -> float:
        """Slowest thermal time constant in seconds, -Ts / ln(rho(A))."""
        return -self.sample_period / np.log(self.spectral_radius)

    def ambient_vector(self) -> np.ndarray:
        return np.full(self.n_hotspots, self.ambient)

    def in_domain(self, T: np.ndarray) -> bool:
        t_min, t_max = self.domain
        return bool(np.all(T >= t_min) and np.all(T <= t_max))

    def hotspot_index(self, name_or_index) -> int:
        if isinstance(name_or_index, (int, np.integer)):
            index = int(name_or_index)
        elif str(name_or_index).isdigit():
            index = int(name_or_index)
        elif name_or_index in self.hotspot_names:
            index = self.hotspot_names.index(name_or_index)
        else:
            raise IndexError(f"unknown hotspot {name_or_index!r}; known: {self.hotspot_names}")
        if not 0 <= index < self.n_hotspots:
            raise IndexError(f"hotspot index {index} outside [0, {self.n_hotspots})")
        return index

    def resource_index(self, name: str) -> int:
        if name not in self.resource_names:
            raise IndexError(f"unknown resource {name!r}; known: {self.resource_names}")
        return self.resource_names.index(name)


def _check_vector(x, size: int, what: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.shape != (size,):
        raise ShapeError(f"{what} has shape {arr.shape}, expected ({size},)")
    return arr


def leakage_vector(T: np.ndarray, model: ThermalModel) -> np.ndarray:
    """Leakage of every resource driven by its hotspot temperature; zero where inactive."""
    T = _check_vector(T, model.n_hotspots, "T")
    if np.any(T <= 0):
        raise DomainError(f"non-physical temperature {T.min()} K")
    p_leak = np.zeros(model.n_resources)
    idx = model.active
    if idx.size:
        Td = T[model.driving[idx]]
        p_leak[idx] = model.p2[idx] * Td * Td * np.exp(model.kappa2[idx] / Td)
    return p_leak


def power_vector(T: np.ndarray, p_c: np.ndarray, model: ThermalModel) -> PowerBreakdown:
    """Per-resource total power: P_C plus leakage at each resource's driving hotspot."""
    p_c = _check_vector(p_c, model.n_resources, "p_c")
    p_leak = leakage_vector(T, model)
    return PowerBreakdown(p_c=p_c, p_leak=p_leak, total=p_c + p_leak)


def step(T: np.ndarray, P: np.ndarray, model: ThermalModel) -> np.ndarray:
    """One sample of the linear thermal network."""
    T = _check_vector(T, model.n_hotspots, "T")
    P = _check_vector(P, model.n_resources, "P")
    if model.ambient == 0.0:
        return model.A @ T + model.B @ P
    return model.A @ (T - model.ambient) + model.B @ P + model.ambient


# --- model files -------------------------------------------------------------

class LeakageEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    V: float
    kappa1: float
    kappa2: float
    driving_hotspot: int
    active: bool = True


class ModelFile(BaseModel):
    """JSON schema of a model file."""
    model_config = ConfigDict(extra="forbid")

    A: List[List[float]]
    B: List[List[float]]
    hotspots: List[str]
    resources: List[str]
    leakage: List[LeakageEntry]
    domain_celsius: Tuple[float, float]
    ambient_celsius: float
    sample_period_s: float = Field(gt=0)
    description: str = ""


def model_from_file(doc: ModelFile, name: str = "model") -> ThermalModel:
    try:
        A = np.array(doc.A, dtype=float)
        B = np.array(doc.B, dtype=float)
    except ValueError as e:
        raise ModelValidationError("parse", f"ragged matrix: {e}") from e
    return ThermalModel(
        A=A,
        B=B,
        hotspot_names=doc.hotspots,
        resource_names=doc.resources,
        leakage=[
            LeakageParams(e.V, e.kappa1, e.kappa2, e.driving_hotspot, e.active) for e in doc.leakage
        ],
        domain=(to_kelvin(doc.domain_celsius[0]), to_kelvin(doc.domain_celsius[1])),
        ambient=to_kelvin(doc.ambient_celsius),
        sample_period=doc.sample_period_s,
        name=name,
    )


def model_to_file(model: ThermalModel, description: str = "") -> ModelFile:
    return ModelFile(
        A=model.A.tolist(),
        B=model.B.tolist(),
        hotspots=list(model.hotspot_names),
        resources=list(model.resource_names),
        leakage=[
            LeakageEntry(V=p.voltage, kappa1=p.kappa1, kappa2=p.kappa2,
                         driving_hotspot=p.driving_hotspot, active=p.active)
            for p in model.leakage
        ],
        domain_celsius=(to_celsius(model.domain[0]), to_celsius(model.domain[1])),
        ambient_celsius=to_celsius(model.ambient),
        sample_period_s=model.sample_period,
        description=description,
    )


def load_model(path) -> ThermalModel:
    """Load and validate a model file."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
        doc = ModelFile.model_validate(raw)
    except FileNotFoundError:
        raise
    except (json.JSONDecodeError, ValidationError) as e:
        raise ModelValidationError("parse", f"{path}: {e}") from e
    model = model_from_file(doc, name=path.stem)
    logger.debug(f"Loaded model {path.name}: {model.n_hotspots} hotspots, {model.n_resources} resources")
    return model


def ambient_linear_response(p_c: Sequence[float], model: ThermalModel) -> np.ndarray:
    """Leakage-free steady state T_amb + G p_c."""
    return model.ambient + model.steady_gain @ _check_vector(p_c, model.n_resources, "p_c")
