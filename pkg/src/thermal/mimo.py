"""
Steady state of the coupled model by Newton's method.

The residual f(T) = (A - I)(T - T_amb) + B P(T) has Jacobian (A - I) plus one
rank-one term per leakage-active resource. The accelerated step premultiplies
by the stored (A - I)^-1 and inverts the low-rank part with the matrix
inversion lemma, so only an r x r system is solved per iteration.
"""
import logging
import time
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, Field

from ..config.settings import settings

from .errors import (
    ConvergenceError,
    DegenerateLeakageError,
    DomainError,
    ShapeError,
    SingularJacobianError,
)
from .model import ThermalModel, _check_vector, power_vector
from .siso import Existence, analyze, reduce_hotspot

logger = logging.getLogger(__name__)

DEGENERATE_SLOPE = 1e-300


class NewtonConfig(BaseModel):
    tol: float = Field(default_factory=lambda: settings.NEWTON_TOL, gt=0)
    max_iter: int = Field(default_factory=lambda: settings.NEWTON_MAX_ITER, ge=1)
    use_acceleration: bool = True
    seed_from_siso: bool = True


@dataclass(frozen=True)
class AcceleratedWorkspace:
    """Per-model constants of the accelerated step."""
    ainv: np.ndarray
    u_cols: np.ndarray
    v_select: np.ndarray
    c_cols: np.ndarray
    vu: np.ndarray
    active: np.ndarray
    driving: np.ndarray

    @property
    def rank(self) -> int:
        return self.u_cols.shape[1]


def build_workspace(model: ThermalModel) -> AcceleratedWorkspace:
    active = model.active
    driving = model.driving[active]
    ainv = model.a_minus_i_inv
    u_cols = ainv @ (model.B[:, active] * model.p2[active])
    v_select = np.zeros((active.size, model.n_hotspots))
    v_select[np.arange(active.size), driving] = 1.0
    return AcceleratedWorkspace(
        ainv=ainv,
        u_cols=u_cols,
        v_select=v_select,
        c_cols=ainv @ model.B,
        vu=u_cols[driving, :],
        active=active,
        driving=driving,
    )


class MimoSolution(BaseModel):
    t_star: List[float]
    p_star: List[float]
    iterations: int
    residual_norm: float
    converged: bool
    seed: List[float]
    seed_kind: str
    accelerated: bool
    out_of_domain: bool = False
    step_norms: List[float] = []
    message: str = ""

    @property
    def hottest(self) -> float:
        return max(self.t_star)


def _positive_state(t, model: ThermalModel) -> np.ndarray:
    t = _check_vector(t, model.n_hotspots, "t")
    if np.any(t <= 0) or not np.all(np.isfinite(t)):
        raise DomainError("temperatures must be finite positive kelvin")
    return t


def _slopes(t: np.ndarray, model: ThermalModel, active: np.ndarray, driving: np.ndarray):
    """s = T^2 e^(k2/T) and its derivative e^(k2/T)(2T - k2) at each active resource's driver."""
    Td = t[driving]
    k2 = model.kappa2[active]
    e = np.exp(k2 / Td)
    return Td * Td * e, e * (2.0 * Td - k2)


def residual(t, p_c, model: ThermalModel) -> np.ndarray:
    """f(T) = (A - I)(T - T_amb) + B P(T)."""
    t = _positive_state(t, model)
    total = power_vector(t, p_c, model).total
    return model.a_minus_i @ (t - model.ambient) + model.B @ total


def jacobian(t, p_c, model: ThermalModel) -> np.ndarray:
    t = _positive_state(t, model)
    _check_vector(p_c, model.n_resources, "p_c")
    J = np.array(model.a_minus_i)
    active = model.active
    if active.size:
        driving = model.driving[active]
        _, s_tilde = _slopes(t, model, active, driving)
        for j, d, st in zip(active, driving, s_tilde):
            J[:, d] += model.p2[j] * st * model.B[:, j]
    return J


def newton_step_plain(t, p_c, model: ThermalModel) -> np.ndarray:
    """Dense Newton correction: solve J dT = -f."""
    f = residual(t, p_c, model)
    J = jacobian(t, p_c, model)
    try:
        dt = np.linalg.solve(J, -f)
    except np.linalg.LinAlgError as e:
        raise SingularJacobianError(str(e), condition=float(np.linalg.cond(J))) from e
    if not np.all(np.isfinite(dt)):
        raise SingularJacobianError("Jacobian is numerically singular", condition=float(np.linalg.cond(J)))
    return dt


def _solve_core(core: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    r = rhs.size
    if r == 1:
        det = core[0, 0]
        if det == 0 or not np.isfinite(det):
            raise SingularJacobianError("singular 1x1 core", condition=float("inf"))
        return rhs / det
    if r == 2:
        det = core[0, 0] * core[1, 1] - core[0, 1] * core[1, 0]
        if det == 0 or not np.isfinite(det):
            raise SingularJacobianError("singular 2x2 core", condition=float("inf"))
        return np.array([
            core[1, 1] * rhs[0] - core[0, 1] * rhs[1],
            core[0, 0] * rhs[1] - core[1, 0] * rhs[0],
        ]) / det
    try:
        return np.linalg.solve(core, rhs)
    except np.linalg.LinAlgError as e:
        raise SingularJacobianError(f"singular {r}x{r} core: {e}", condition=float(np.linalg.cond(core))) from e


def newton_step_accelerated(t, p_c, model: ThermalModel, ws: AcceleratedWorkspace) -> np.ndarray:
    """Newton correction through (A - I)^-1 and an r x r core solve."""
    t = _positive_state(t, model)
    p_c = _check_vector(p_c, model.n_resources, "p_c")
    f1 = (t - model.ambient) + ws.c_cols @ p_c
    if ws.rank == 0:
        return -f1
    s, s_tilde = _slopes(t, model, ws.active, ws.driving)
    if np.any(np.abs(s_tilde) < DEGENERATE_SLOPE):
        raise DegenerateLeakageError(f"leakage slope underflow at T = {t[ws.driving].min():.3g} K")
    f1 = f1 + ws.u_cols @ s
    core = np.diag(1.0 / s_tilde) + ws.vu
    y = _solve_core(core, f1[ws.driving])
    return -(f1 - ws.u_cols @ y)


def siso_seed(p_c, model: ThermalModel) -> Optional[np.ndarray]:
    """Stable SISO fixed point of each hotspot, ambient where a hotspot has none."""
    seed = model.ambient_vector()
    found = False
    for i in range(model.n_hotspots):
        try:
            fp = analyze(reduce_hotspot(model, i, p_c))
        except (DomainError, ConvergenceError) as e:
            logger.debug(f"No SISO seed for hotspot {model.hotspot_names[i]}: {e}")
            continue
        if fp.existence is Existence.TWO_FIXED_POINTS:
            seed[i] = fp.t_s
            found = True
    return seed if found else None


def _initial_point(p_c: np.ndarray, model: ThermalModel, cfg: NewtonConfig):
    if cfg.seed_from_siso:
        seed = siso_seed(p_c, model)
        if seed is not None:
            return seed, "siso"
    seed = model.ambient_vector()
    if model.ambient <= 0:
        # zero-ambient models start from the bottom of the domain
        seed = np.full(model.n_hotspots, model.domain[0])
    return seed, "ambient"


def solve(p_c, model: ThermalModel, cfg: Optional[NewtonConfig] = None,
          workspace: Optional[AcceleratedWorkspace] = None,
          seed: Optional[np.ndarray] = None) -> MimoSolution:
    """Newton iteration to the fixed point for a given P_C composition.

    Non-convergence is reported through ``converged``; a solution outside the
    model domain sets ``out_of_domain``.
    """
    cfg = cfg or NewtonConfig()
    p_c = _check_vector(p_c, model.n_resources, "p_c")
    if np.any(p_c < 0):
        raise DomainError("p_c must be non-negative")
    if seed is None:
        seed, seed_kind = _initial_point(p_c, model, cfg)
    else:
        seed, seed_kind = _check_vector(seed, model.n_hotspots, "seed"), "given"

    if cfg.use_acceleration:
        ws = workspace or build_workspace(model)

        def newton_step(t):
            return newton_step_accelerated(t, p_c, model, ws)
    else:
        def newton_step(t):
            return newton_step_plain(t, p_c, model)

    t = np.array(seed, dtype=float)
    step_norms: List[float] = []
    message = ""
    converged = False
    iterations = 0
    previous = None
    retried = False
    dt = None
    while True:
        try:
            dt = newton_step(t)
        except (SingularJacobianError, DegenerateLeakageError) as e:
            if previous is None or retried:
                message = f"{type(e).__name__}: {e}"
                dt = None
                break
            logger.debug(f"Retrying with a half step after {type(e).__name__}")
            retried = True
            t = t - 0.5 * previous
            continue
        except DomainError as e:
            message = f"non-physical iterate: {e}"
            dt = None
            break
        norm = float(np.max(np.abs(dt))) if dt.size else 0.0
        if not np.isfinite(norm):
            message = "non-finite Newton step"
            break
        if norm < cfg.tol:
            t = t + dt
            converged = True
            break
        if iterations >= cfg.max_iter:
            message = f"no convergence after {cfg.max_iter} iterations"
            break
        t = t + dt
        previous = dt
        iterations += 1
        step_norms.append(norm)
        logger.debug(f"Newton iteration {iterations}: |dT| = {norm:.3e} K")

    residual_norm = float(np.max(np.abs(dt))) if dt is not None and dt.size else float("inf")
    if np.all(t > 0) and np.all(np.isfinite(t)):
        p_star = power_vector(t, p_c, model).total
    else:
        p_star = np.full(model.n_resources, np.nan)
    out_of_domain = converged and not model.in_domain(t)
    if out_of_domain:
        logger.warning(f"Fixed point {t.max():.2f} K lies outside the model domain {model.domain}")
    elif not converged:
        logger.warning(f"Newton solve did not converge: {message}")

    return MimoSolution(
        t_star=t.tolist(),
        p_star=p_star.tolist(),
        iterations=iterations,
        residual_norm=residual_norm,
        converged=converged,
        seed=np.asarray(seed, dtype=float).tolist(),
        seed_kind=seed_kind,
        accelerated=cfg.use_acceleration,
        out_of_domain=out_of_domain,
        step_norms=step_norms,
        message=message,
    )


class BenchmarkRow(BaseModel):
    iterations: int
    plain_ns: int
    accelerated_ns: int


def benchmark_steps(model: ThermalModel, p_c, max_iterations: int = 10, repeats: int = 1000,
                    warmup: int = 100) -> List[BenchmarkRow]:
    """Median wall time of k consecutive plain and accelerated Newton steps, k = 1..max_iterations."""
    if max_iterations < 1 or repeats < 1 or warmup < 0:
        raise ShapeError("max_iterations and repeats must be >= 1, warmup >= 0")
    p_c = _check_vector(p_c, model.n_resources, "p_c")
    ws = build_workspace(model)
    seed, _ = _initial_point(p_c, model, NewtonConfig(seed_from_siso=False))

    def run_plain(k):
        t = seed
        for _ in range(k):
            t = t + newton_step_plain(t, p_c, model)

    def run_accelerated(k):
        t = seed
        for _ in range(k):
            t = t + newton_step_accelerated(t, p_c, model, ws)

    def median_ns(fn, k):
        for _ in range(warmup):
            fn(k)
        samples = np.empty(repeats, dtype=np.int64)
        for n in range(repeats):
            start = time.perf_counter_ns()
            fn(k)
            samples[n] = time.perf_counter_ns() - start
        return int(np.median(samples))

    rows = []
    for k in range(1, max_iterations + 1):
        rows.append(BenchmarkRow(
            iterations=k,
            plain_ns=median_ns(run_plain, k),
            accelerated_ns=median_ns(run_accelerated, k),
        ))
        logger.debug(f"bench k={k}: plain {rows[-1].plain_ns} ns, accelerated {rows[-1].accelerated_ns} ns")
    return rows
