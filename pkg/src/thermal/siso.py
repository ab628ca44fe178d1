"""
Single-hotspot fixed-point theory.

The scalar map T <- a T + b (P_C + V k1 T^2 e^(k2/T)) is rewritten in the
auxiliary temperature T~ = -k2/T, where its fixed points are the roots of the
concave function

    F(T~) = ln(beta) + ln(T~) + ln(1 - alpha T~) + T~,   0 < T~ < 1/alpha.

F has a single maximum at T~_m, so there are either two fixed points or none.
The root below T~_m (the hotter one in kelvin) is unstable, the one above it is
stable.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel
from scipy.optimize import brentq

from .errors import ConvergenceError, DomainError, SeparatrixError
from .model import LeakageParams, ThermalModel

logger = logging.getLogger(__name__)

ROOT_XTOL = 1e-14
ROOT_RTOL = 4 * np.finfo(float).eps
ROOT_MAXITER = 200
TANGENCY_TOL = 1e-12
_MAX_BRACKET_HALVINGS = 2000


class Existence(str, Enum):
    TWO_FIXED_POINTS = "TwoFixedPoints"
    NO_FIXED_POINT = "NoFixedPoint"


class StartClass(str, Enum):
    RUNAWAY = "Runaway"
    CONVERGES_TO_STABLE = "ConvergesToStable"


def to_auxiliary(T, kappa2: float):
    """T~ = -kappa2 / T."""
    T_arr = np.asarray(T, dtype=float)
    if not kappa2 < 0:
        raise DomainError(f"kappa2 must be negative, got {kappa2}")
    if np.any(T_arr <= 0):
        raise DomainError("temperature must be positive kelvin")
    out = -kappa2 / T_arr
    return float(out) if out.ndim == 0 else out


def from_auxiliary(t_tilde, kappa2: float):
    """Inverse of to_auxiliary; the map is its own inverse up to the constant."""
    t_arr = np.asarray(t_tilde, dtype=float)
    if not kappa2 < 0:
        raise DomainError(f"kappa2 must be negative, got {kappa2}")
    if np.any(t_arr <= 0):
        raise DomainError("auxiliary temperature must be positive")
    out = -kappa2 / t_arr
    return float(out) if out.ndim == 0 else out


def derive_alpha_beta(a: float, b: float, p_c: float, leakage: LeakageParams) -> Tuple[float, float]:
    if not 0 < a < 1:
        raise DomainError(f"sign violation: need 0 < a < 1, got a = {a}")
    if not b > 0:
        raise DomainError(f"sign violation: need b > 0, got b = {b}")
    if not p_c > 0:
        raise DomainError(f"sign violation: need p_c > 0, got p_c = {p_c}")
    if not (leakage.kappa1 > 0 and leakage.kappa2 < 0 and leakage.voltage > 0):
        raise DomainError(
            f"sign violation: leakage V={leakage.voltage}, kappa1={leakage.kappa1}, kappa2={leakage.kappa2}"
        )
    alpha = (b / (a - 1.0)) * (p_c / leakage.kappa2)
    beta = ((a - 1.0) / b) / (leakage.voltage * leakage.kappa1 * leakage.kappa2)
    return alpha, beta


@dataclass(frozen=True)
class SisoParams:
    """Scalar model T <- a T + b P of one hotspot, with its leakage."""
    a: float
    b: float
    p_c: float
    leakage: LeakageParams

    def __post_init__(self):
        if not 0 < self.a < 1:
            raise DomainError(f"need 0 < a < 1, got a = {self.a}")
        if not self.b > 0:
            raise DomainError(f"need b > 0, got b = {self.b}")

    @property
    def alpha_beta(self) -> Tuple[float, float]:
        return derive_alpha_beta(self.a, self.b, self.p_c, self.leakage)

    @property
    def theta(self) -> float:
        return self.b / (1.0 - self.a)

    def next_temperature(self, T):
        T = np.asarray(T, dtype=float)
        leak = self.leakage.p2 * T * T * np.exp(self.leakage.kappa2 / T)
        return self.a * T + self.b * (self.p_c + leak)


class SisoFixedPoints(BaseModel):
    existence: Existence
    alpha: float
    beta: float
    t_tilde_m: float
    f_at_max: float
    t_tilde_u: Optional[float] = None
    t_tilde_s: Optional[float] = None
    t_u: Optional[float] = None
    t_s: Optional[float] = None
    tangent: bool = False


def f_fixed_point(t_tilde, alpha: float, beta: float):
    """F(T~); -inf at the endpoints 0 and 1/alpha."""
    if not (alpha > 0 and beta > 0):
        raise DomainError(f"alpha and beta must be positive, got {alpha}, {beta}")
    t = np.asarray(t_tilde, dtype=float)
    if np.any(t < 0) or np.any(t > 1.0 / alpha):
        raise DomainError(f"t_tilde outside (0, 1/alpha = {1.0 / alpha})")
    with np.errstate(divide="ignore"):
        value = np.log(beta) + np.log(t) + np.log(np.clip(1.0 - alpha * t, 0.0, None)) + t
    return float(value) if value.ndim == 0 else value


def t_tilde_maxima(alpha: float) -> float:
    """Location of the maximum of F: 1/(2 alpha) - 1 + sqrt(1/(4 alpha^2) + 1)."""
    if not alpha > 0:
        raise DomainError(f"alpha must be positive, got {alpha}")
    x = 0.5 / alpha
    # x - 1 + sqrt(x^2 + 1) without the cancellation at large alpha
    return x + x * x / (np.sqrt(x * x + 1.0) + 1.0)


def beta_critical(alpha: float) -> float:
    """Smallest beta for which fixed points exist: (2/T~_m + 1) e^(-T~_m)."""
    tm = t_tilde_maxima(alpha)
    return (2.0 / tm + 1.0) * np.exp(-tm)


def existence_test(alpha: float, beta: float) -> Existence:
    if not (alpha > 0 and beta > 0):
        raise DomainError(f"alpha and beta must be positive, got {alpha}, {beta}")
    if beta >= beta_critical(alpha):
        return Existence.TWO_FIXED_POINTS
    return Existence.NO_FIXED_POINT


def _lower_bracket(f, tm: float) -> float:
    lo = 0.5 * tm
    for _ in range(_MAX_BRACKET_HALVINGS):
        if f(lo) < 0:
            return lo
        lo *= 0.5
        if lo == 0.0:
            break
    raise ConvergenceError("could not bracket the unstable fixed point")


def _stable_root(alpha: float, beta: float, tm: float) -> float:
    """Stable root, found in u = 1/T~ where F = 0 reads u^2 e^(-1/u) = beta (u - alpha).

    In T~ the root can sit closer to 1/alpha than any double resolves; in u it is
    bracketed by [alpha, 1/T~_m] and separated from alpha by alpha^2 e^(-1/alpha) / beta.
    """
    def h(u):
        return u * u * np.exp(-1.0 / u) - beta * (u - alpha)

    u_s = _brent(h, alpha, 1.0 / tm)
    return min(1.0 / u_s, np.nextafter(1.0 / alpha, 0.0))


def _brent(f, lo: float, hi: float) -> float:
    try:
        root, info = brentq(f, lo, hi, xtol=ROOT_XTOL, rtol=ROOT_RTOL, maxiter=ROOT_MAXITER,
                            full_output=True, disp=False)
    except ValueError as e:
        raise ConvergenceError(f"root not bracketed on [{lo}, {hi}]: {e}") from e
    if not info.converged:
        raise ConvergenceError(f"root finder stopped after {info.iterations} iterations: {info.flag}")
    return root


def solve_fixed_points(alpha: float, beta: float, kappa2: Optional[float] = None) -> SisoFixedPoints:
    """Both fixed points of F by bracketed root finding on each monotone half.

    When ``kappa2`` is given the roots are also reported in kelvin.
    """
    existence = existence_test(alpha, beta)
    tm = t_tilde_maxima(alpha)
    f_max = f_fixed_point(tm, alpha, beta)
    report = dict(existence=existence, alpha=alpha, beta=beta, t_tilde_m=tm, f_at_max=f_max)
    if existence is Existence.NO_FIXED_POINT:
        return SisoFixedPoints(**report)

    if f_max <= TANGENCY_TOL:
        logger.warning(f"Fixed points coincide at T~ = {tm:.6g} (marginally stable)")
        t_u = t_s = tm
        report["tangent"] = True
    else:
        def f(t):
            return f_fixed_point(t, alpha, beta)

        t_u = _brent(f, _lower_bracket(f, tm), tm)
        t_s = _stable_root(alpha, beta, tm)
    report.update(t_tilde_u=t_u, t_tilde_s=t_s)
    if kappa2 is not None:
        report.update(t_u=from_auxiliary(t_u, kappa2), t_s=from_auxiliary(t_s, kappa2))
    return SisoFixedPoints(**report)


def classify_start(t_tilde_0: float, fixed_points: SisoFixedPoints) -> StartClass:
    """Basin of a start in auxiliary coordinates: below T~_u runs away, above it settles."""
    if not 0 < t_tilde_0 < 1.0 / fixed_points.alpha:
        raise DomainError(f"t_tilde_0 must lie in (0, 1/alpha = {1.0 / fixed_points.alpha}), got {t_tilde_0}")
    if fixed_points.existence is Existence.NO_FIXED_POINT:
        return StartClass.RUNAWAY
    if t_tilde_0 == fixed_points.t_tilde_u:
        raise SeparatrixError(f"start {t_tilde_0} lies exactly on the unstable fixed point")
    if t_tilde_0 < fixed_points.t_tilde_u:
        return StartClass.RUNAWAY
    return StartClass.CONVERGES_TO_STABLE


def analyze(params: SisoParams) -> SisoFixedPoints:
    alpha, beta = params.alpha_beta
    return solve_fixed_points(alpha, beta, kappa2=params.leakage.kappa2)


def reduce_hotspot(model: ThermalModel, hotspot: int, p_c) -> SisoParams:
    """Scalar reduction of one hotspot of a MIMO model.

    a is set by the hotspot's total steady-state response, b by its mean gain over
    resources. Ambient is folded into P_C and the active leakage terms are merged
    into a single V k1 with a weighted k2.
    """
    p_c = np.asarray(p_c, dtype=float)
    if p_c.shape != (model.n_resources,):
        raise DomainError(f"p_c has shape {p_c.shape}, expected ({model.n_resources},)")
    i = model.hotspot_index(hotspot)
    active = model.active
    if active.size == 0:
        raise DomainError("model has no leakage-active resource to reduce")
    response = -model.a_minus_i_inv[i].sum()
    a = 1.0 - 1.0 / response
    b = (1.0 - a) * float(model.steady_gain[i].mean())
    total = float(p_c.sum()) + model.ambient * (1.0 - a) / b
    weights = model.p2[active]
    leakage = LeakageParams(
        voltage=1.0,
        kappa1=float(weights.sum()),
        kappa2=float(np.average(model.kappa2[active], weights=weights)),
        driving_hotspot=0,
    )
    return SisoParams(a=a, b=b, p_c=total, leakage=leakage)


def sample_f(alpha: float, beta: float, n: int = 512) -> Tuple[np.ndarray, np.ndarray]:
    """F on a uniform grid over [0, 1/alpha]; both endpoints are -inf."""
    if n < 3:
        raise DomainError("need at least 3 samples")
    grid = np.linspace(0.0, 1.0 / alpha, n)
    values = f_fixed_point(grid, alpha, beta)
    values[0] = values[-1] = -np.inf
    return grid, values


@dataclass(frozen=True)
class ScalarIteration:
    final: np.ndarray
    diverged: np.ndarray
    converged: np.ndarray
    steps: int


def iterate_scalar(a, b, p_c, p2, kappa2, t0, *, ceiling=np.inf, max_steps: int = 100_000,
                   tol: float = 1e-12) -> ScalarIteration:
    """Run T <- a T + b (p_c + p2 T^2 e^(kappa2/T)) elementwise until each entry settles or diverges.

    All arguments broadcast, so many configurations iterate at once. An entry
    diverges once it exceeds ``ceiling`` and converges once a step moves it by
    less than ``tol`` relative to its magnitude.
    """
    a, b, p_c, p2, kappa2, ceiling, T = np.broadcast_arrays(
        *(np.asarray(x, dtype=float) for x in (a, b, p_c, p2, kappa2, ceiling, t0))
    )
    T = T.copy()
    diverged = np.zeros(T.shape, dtype=bool)
    converged = np.zeros(T.shape, dtype=bool)
    running = np.ones(T.shape, dtype=bool)
    steps = 0
    while steps < max_steps and running.any():
        x = T[running]
        nxt = a[running] * x + b[running] * (p_c[running] + p2[running] * x * x * np.exp(kappa2[running] / x))
        T[running] = nxt
        idx = np.flatnonzero(running.ravel())
        hot = ~(nxt <= ceiling[running])
        still = np.abs(nxt - x) < tol * np.maximum(1.0, np.abs(x))
        diverged.ravel()[idx[hot]] = True
        converged.ravel()[idx[still & ~hot]] = True
        running = ~(diverged | converged)
        steps += 1
    return ScalarIteration(final=T, diverged=diverged, converged=converged, steps=steps)
