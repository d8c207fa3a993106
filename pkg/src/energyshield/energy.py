"""Energy functions: the curves mapping a fairness value to an intervention
probability, plus steepness comparison and calibration helpers.

Every variant reduces to an integer kernel code and a parameter vector so
the compiled loops can evaluate it without calling back into Python.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DomainError, IncomparablePivotsError, ParameterError
from .fairness import domain_bounds

MONOTONIC_EXPONENT = 2
_DOMAIN_TOL = 1e-12


def _as_pair(v) -> tuple[float, float]:
    if isinstance(v, (int, float)):
        return (float(v), float(v))
    lo, hi = v
    return (float(lo), float(hi))


class EnergyFunction:
    """Common behaviour; concrete variants are the frozen dataclasses below."""

    family: str = ""
    domain: str = "unit"

    @property
    def bounds(self) -> tuple[float, float]:
        return domain_bounds(self.domain)

    @property
    def pivot(self) -> float | None:
        raise NotImplementedError

    def kernel_spec(self) -> tuple[int, np.ndarray]:
        raise NotImplementedError

    def breakpoints(self) -> list[float]:
        return []

    def params_json(self) -> dict:
        raise NotImplementedError

    def to_json(self) -> dict:
        return {"family": self.family, "params": self.params_json(), "domain": self.domain}

    def eval(self, x):
        lo, hi = self.bounds
        arr = np.asarray(x, dtype=np.float64)
        if np.any(arr < lo - _DOMAIN_TOL) or np.any(arr > hi + _DOMAIN_TOL) or np.any(np.isnan(arr)):
            raise DomainError(f"fairness value outside [{lo}, {hi}]: {x!r}")
        code, prm = self.kernel_spec()
        out = kernels.zeta_array(code, prm, np.ascontiguousarray(arr.ravel()))
        if arr.ndim == 0:
            return float(out[0])
        return out.reshape(arr.shape)

    def __call__(self, x):
        return self.eval(x)


def _spec(code: int, *values: float) -> tuple[int, np.ndarray]:
    prm = np.zeros(8)
    prm[: len(values)] = values
    return code, prm


@dataclass(frozen=True)
class Idle(EnergyFunction):
    domain: str = "unit"
    family = "idle"

    @property
    def pivot(self) -> float | None:
        return None

    def kernel_spec(self):
        return _spec(kernels.IDLE)

    def params_json(self) -> dict:
        return {}


@dataclass(frozen=True)
class Naive(EnergyFunction):
    """Zero strictly inside the running interval, one everywhere else."""

    lower: float
    upper: float
    domain: str = "unit"
    family = "naive"

    def __post_init__(self):
        lo, hi = self.bounds
        if not (lo <= self.lower <= self.upper <= hi):
            raise ParameterError(f"naive interval [{self.lower}, {self.upper}] invalid for domain [{lo}, {hi}]")

    @property
    def pivot(self) -> float:
        return 0.5 * (self.lower + self.upper)

    def kernel_spec(self):
        return _spec(kernels.NAIVE, self.lower, self.upper)

    def breakpoints(self):
        return [self.lower, self.upper]

    def params_json(self) -> dict:
        return {"running": [self.lower, self.upper]}


@dataclass(frozen=True)
class Polynomial(EnergyFunction):
    """alpha * |x - kappa| ** beta.

    With ``allow_clipping`` the upper bound on alpha is lifted and values
    above one are clipped; calibrated and adaptive shields need this because
    their pivot moves with the estimate.
    """

    kappa: float
    alpha: float
    beta: float
    domain: str = "unit"
    allow_clipping: bool = False
    family = "polynomial"

    def __post_init__(self):
        lo, hi = self.bounds
        if not self.beta > 1.0:
            raise ParameterError(f"beta must exceed 1, got {self.beta}")
        if not self.alpha > 0.0:
            raise ParameterError(f"alpha must be positive, got {self.alpha}")
        if self.allow_clipping:
            if not lo <= self.kappa <= hi:
                raise ParameterError(f"kappa {self.kappa} outside the domain")
            return
        if not lo < self.kappa < hi:
            raise ParameterError(f"kappa {self.kappa} must lie in the open domain interior")
        cap = 1.0 / max(self.kappa - lo, hi - self.kappa) ** self.beta
        if self.alpha > cap * (1 + 1e-12):
            raise ParameterError(f"alpha {self.alpha} exceeds {cap:.6g}; pass allow_clipping to permit overshoot")

    @property
    def pivot(self) -> float:
        return self.kappa

    def kernel_spec(self):
        return _spec(kernels.POL, self.kappa, self.alpha, self.beta)

    def breakpoints(self):
        pts = [self.kappa]
        reach = (1.0 / self.alpha) ** (1.0 / self.beta)
        pts += [self.kappa - reach, self.kappa + reach]
        return pts

    def params_json(self) -> dict:
        return {"kappa": self.kappa, "alpha": self.alpha, "beta": self.beta, "allow_clipping": self.allow_clipping}

    def with_pivot(self, kappa: float) -> "Polynomial":
        return Polynomial(kappa, self.alpha, self.beta, self.domain, True)


@dataclass(frozen=True)
class Exponential(EnergyFunction):
    """rho * (1 - exp(-sigma * (x - kappa) ** 2))."""

    kappa: float
    rho: float
    sigma: float
    domain: str = "unit"
    allow_clipping: bool = False
    family = "exponential"

    def __post_init__(self):
        lo, hi = self.bounds
        if not self.sigma > 0.0:
            raise ParameterError(f"sigma must be positive, got {self.sigma}")
        if not self.rho > 0.0:
            raise ParameterError(f"rho must be positive, got {self.rho}")
        if self.allow_clipping:
            if not lo <= self.kappa <= hi:
                raise ParameterError(f"kappa {self.kappa} outside the domain")
            return
        if not lo < self.kappa < hi:
            raise ParameterError(f"kappa {self.kappa} must lie in the open domain interior")
        near = min(self.kappa - lo, hi - self.kappa)
        cap = 1.0 / -math.expm1(-self.sigma * near * near)
        if self.rho > cap * (1 + 1e-12):
            raise ParameterError(f"rho {self.rho} exceeds {cap:.6g}; pass allow_clipping to permit overshoot")

    @property
    def pivot(self) -> float:
        return self.kappa

    def kernel_spec(self):
        return _spec(kernels.EXPO, self.kappa, self.rho, self.sigma)

    def breakpoints(self):
        pts = [self.kappa]
        if self.rho > 1.0:
            reach = math.sqrt(-math.log1p(-1.0 / self.rho) / self.sigma)
            pts += [self.kappa - reach, self.kappa + reach]
        return pts

    def params_json(self) -> dict:
        return {"kappa": self.kappa, "rho": self.rho, "sigma": self.sigma, "allow_clipping": self.allow_clipping}

    def with_pivot(self, kappa: float) -> "Exponential":
        return Exponential(kappa, self.rho, self.sigma, self.domain, True)


@dataclass(frozen=True)
class Monotonic(EnergyFunction):
    """Member r of the steepness-ordered family built around a bias.

    ``bias`` is the acceptance probability p for a single group, or the
    rate difference d = p_A - p_B when ``domain == "signed"``. The case is
    chosen by where the bias sits relative to the limit set; larger r gives
    a pointwise larger curve whose fixpoint ``anchor`` moves across the
    limit set away from the bias.
    """

    r: float
    bias: float
    running: tuple[float, float]
    limit: tuple[float, float]
    domain: str = "unit"
    family = "monotonic"
    case: str = field(init=False)
    kappa: float = field(init=False)
    anchor: float = field(init=False)
    level: float = field(init=False)
    shape: float = field(init=False)
    m: int = field(init=False, default=MONOTONIC_EXPONENT)

    def __post_init__(self):
        if not 0.0 < self.r < 1.0:
            raise ParameterError(f"family index r must lie in (0, 1), got {self.r}")
        running, limit = _as_pair(self.running), _as_pair(self.limit)
        object.__setattr__(self, "running", running)
        object.__setattr__(self, "limit", limit)
        lo, hi = self.bounds
        if not lo < self.bias < hi:
            raise ParameterError(f"bias {self.bias} must lie strictly inside ({lo}, {hi})")
        if not (lo <= running[0] <= limit[0] <= limit[1] <= running[1] <= hi):
            raise ParameterError("need domain ⊇ running ⊇ limit")
        signed = self.domain == "signed"
        r, b = self.r, self.bias
        (s_lo, s_hi), (l_lo, l_hi) = running, limit
        # the pivot sits halfway between the limit set and S, so that side of the limit set must be strictly inside S
        if b < l_lo and not l_hi < s_hi:
            raise ParameterError("bias below the limit set needs max(limit) < max(running)")
        if b > l_hi and not s_lo < l_lo:
            raise ParameterError("bias above the limit set needs min(running) < min(limit)")
        if b < l_lo:
            case = "low"
            kappa = 0.5 * (l_hi + s_hi)
            anchor = (1 - r) * l_lo + r * l_hi
            level = (anchor - b) / (1 - b)
            shape = (1 - r) / r
        elif b > l_hi:
            case = "high"
            kappa = 0.5 * (s_lo + l_lo)
            anchor = r * l_lo + (1 - r) * l_hi
            level = (b - anchor) / (1 + b) if signed else (b - anchor) / b
            shape = (1 - r) / r
        else:
            case = "central"
            kappa = b
            anchor = b
            level = 0.0
            shape = r / (1 - r)
        object.__setattr__(self, "case", case)
        object.__setattr__(self, "kappa", kappa)
        object.__setattr__(self, "anchor", anchor)
        object.__setattr__(self, "level", level)
        object.__setattr__(self, "shape", shape)

    @property
    def pivot(self) -> float:
        return self.kappa

    def kernel_spec(self):
        if self.case == "low":
            return _spec(kernels.MON_LOW, self.anchor, self.level, self.shape, self.kappa, self.m)
        if self.case == "high":
            return _spec(kernels.MON_HIGH, self.anchor, self.level, self.shape, self.kappa, self.m)
        return _spec(kernels.MON_CENTRAL, self.kappa, self.shape, self.m)

    def plateau(self) -> tuple[float, float]:
        """Central case only: the interval outside which the value is 1."""
        reach = self.shape ** (-1.0 / self.m)
        return (self.kappa - reach, self.kappa + reach)

    def breakpoints(self):
        if self.case == "central":
            return [self.kappa, *self.plateau()]
        return [self.kappa, self.anchor]

    def params_json(self) -> dict:
        return {"r": self.r, "bias": self.bias, "running": list(self.running), "limit": list(self.limit)}


def eval_monotonic(r: float, bias: float, running, limit, x, domain: str = "unit"):
    """Evaluate family member r at x.

    Unlike ``EnergyFunction.eval`` this accepts any real x, since the
    closed-form pieces are defined on the whole line.
    """
    zeta = Monotonic(r, bias, _as_pair(running), _as_pair(limit), domain)
    code, prm = zeta.kernel_spec()
    arr = np.asarray(x, dtype=np.float64)
    out = kernels.zeta_array(code, prm, np.ascontiguousarray(arr.ravel()))
    return float(out[0]) if arr.ndim == 0 else out.reshape(arr.shape)


_FAMILIES = {"idle": Idle, "naive": Naive, "polynomial": Polynomial, "exponential": Exponential, "monotonic": Monotonic}


def from_json(obj: dict) -> EnergyFunction:
    family = obj.get("family")
    params = dict(obj.get("params", {}))
    domain = obj.get("domain", "unit")
    if family == "idle":
        return Idle(domain)
    if family == "naive":
        lo, hi = _as_pair(params["running"])
        return Naive(lo, hi, domain)
    if family == "polynomial":
        return Polynomial(params["kappa"], params["alpha"], params["beta"], domain, bool(params.get("allow_clipping", False)))
    if family == "exponential":
        return Exponential(params["kappa"], params["rho"], params["sigma"], domain, bool(params.get("allow_clipping", False)))
    if family == "monotonic":
        return Monotonic(params["r"], params["bias"], _as_pair(params["running"]), _as_pair(params["limit"]), domain)
    raise ParameterError(f"unknown energy family {family!r}; expected one of {sorted(_FAMILIES)}")


# calibration


def required_energy_at_target(p: float, mu_star: float) -> float:
    """Energy at mu_star that makes mu_star the fixpoint for acceptance probability p."""
    if p < mu_star:
        return (mu_star - p) / (1.0 - p)
    return (p - mu_star) / p


def required_energy_two_group(d: float, mu_star: float) -> float:
    if d < mu_star:
        return (mu_star - d) / (1.0 - d)
    return (d - mu_star) / (1.0 + d)


def calibrated_pivot(shape: Polynomial | Exponential, bias: float, mu_star: float) -> float:
    """Pivot that makes ``shape`` (alpha/beta or rho/sigma kept) hit the required energy at mu_star.

    The pivot sits on the far side of mu_star from the bias. Exponential
    shapes that cannot reach the required energy saturate at the domain edge.
    """
    lo, hi = shape.bounds
    if shape.domain == "signed":
        e = required_energy_two_group(bias, mu_star)
    else:
        e = required_energy_at_target(bias, mu_star)
    if isinstance(shape, Polynomial):
        off = math.pow(e / shape.alpha, 1.0 / shape.beta)
    elif isinstance(shape, Exponential):
        ratio = e / shape.rho
        off = hi - lo if ratio >= 1.0 else math.sqrt(-math.log1p(-ratio) / shape.sigma)
    else:
        raise ParameterError("calibration needs a polynomial or exponential shape")
    kappa = mu_star + off if bias < mu_star else mu_star - off
    return min(max(kappa, lo), hi)


def calibrate(shape: Polynomial | Exponential, bias: float, mu_star: float) -> Polynomial | Exponential:
    """Shift the pivot of ``shape`` so its fixpoint for ``bias`` is mu_star."""
    return shape.with_pivot(calibrated_pivot(shape, bias, mu_star))


# steepness and validation


class Steepness(enum.Enum):
    FIRST_STEEPER = "first_steeper"
    SECOND_STEEPER = "second_steeper"
    INCOMPARABLE = "incomparable"
    EQUAL = "equal"


@dataclass(frozen=True)
class SteepnessOrder:
    result: Steepness
    witness: float | None = None


def _grid(zetas, grid_size: int) -> np.ndarray:
    lo, hi = zetas[0].bounds
    pts = [np.linspace(lo, hi, grid_size + 1)]
    for z in zetas:
        extra = [b for b in z.breakpoints() if lo <= b <= hi]
        pts.append(np.asarray(extra, dtype=np.float64))
    return np.unique(np.concatenate(pts))


def compare_steepness(z1: EnergyFunction, z2: EnergyFunction, grid_size: int = 10000) -> SteepnessOrder:
    if z1.domain != z2.domain:
        raise IncomparablePivotsError("incomparable pivots: functions live on different domains")
    k1, k2 = z1.pivot, z2.pivot
    # a missing pivot (idle) is compatible with any pivot
    if k1 is not None and k2 is not None and abs(k1 - k2) > 1e-12:
        raise IncomparablePivotsError(f"incomparable pivots: {k1} vs {k2}")
    xs = _grid([z1, z2], grid_size)
    v1, v2 = z1.eval(xs), z2.eval(xs)
    ge = v1 >= v2
    le = v1 <= v2
    if ge.all() and le.all():
        return SteepnessOrder(Steepness.EQUAL)
    if ge.all():
        return SteepnessOrder(Steepness.FIRST_STEEPER)
    if le.all():
        return SteepnessOrder(Steepness.SECOND_STEEPER)
    return SteepnessOrder(Steepness.INCOMPARABLE, float(xs[np.argmax(~ge)]))


def validate(zeta: EnergyFunction, grid_size: int = 10000) -> list[str]:
    """Names of the violated energy-function conditions; empty when valid."""
    problems = []
    lo, hi = zeta.bounds
    xs = _grid([zeta], grid_size)
    vs = zeta.eval(xs)
    k = zeta.pivot
    if k is not None:
        if abs(zeta.eval(k)) > 1e-12:
            problems.append("pivot value")
        left = vs[xs <= k]
        right = vs[xs >= k]
        if np.any(np.diff(left) > 1e-12) or np.any(np.diff(right) < -1e-12):
            problems.append("monotone shape")
    if not (zeta.eval(lo) > 0.0 and zeta.eval(hi) > 0.0):
        problems.append("endpoint positivity")
    # a jump of half the range between neighbouring grid points is a discontinuity
    if np.any(np.abs(np.diff(vs)) > 0.5):
        problems.append("continuity")
    elif _has_kink(zeta, lo, hi):
        problems.append("differentiability")
    return problems


def _has_kink(zeta: EnergyFunction, lo: float, hi: float, h: float = 1e-6) -> bool:
    for b in zeta.breakpoints():
        if b == zeta.pivot or not (lo + h < b < hi - h):
            continue
        left = (zeta.eval(b) - zeta.eval(b - h)) / h
        right = (zeta.eval(b + h) - zeta.eval(b)) / h
        if abs(left - right) > 1e-3 * (1.0 + abs(left) + abs(right)):
            return True
    return False
