"""Concrete drivers: forward-performance driver, closed-form benchmarks, projections.

The forward-performance driver is the concave maximization

    f^i(v, z) = sup_{pi in Pi^i} [ 1/2 delta (delta-1) |pi|^2 + delta pi.(theta^i(v) + z) ] + |z|^2 / 2

written in closed form through the Euclidean projection onto Pi^i.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, special

from .core_model import (
    DriverSet,
    ModelSpec,
    ValidationConfig,
    _halton,
    ou_factor,
    validate_model,
    validate_rate_matrix,
)
from .errors import AssumptionViolation, ModelValidationError

SQRT2 = np.sqrt(2.0)
SQRT2PI = np.sqrt(2.0 * np.pi)

# ---------------------------------------------------------------------------
# Constraint sets
# ---------------------------------------------------------------------------

KINDS = ("full_space", "interval", "box", "subspace_axis")


@dataclass(frozen=True)
class ConstraintSet:
    """Closed convex set with an exact projection.

    ``mask`` is only used by ``subspace_axis``: True keeps an axis free,
    False pins it to zero (e.g. R x {0} is ``mask=(True, False)``).
    """

    kind: str
    d: int = 1
    lower: tuple = ()
    upper: tuple = ()
    mask: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ModelValidationError(f"unknown constraint kind {self.kind!r}")
        if self.kind in ("interval", "box"):
            if len(self.lower) != self.d or len(self.upper) != self.d:
                raise ModelValidationError("bounds must have one entry per axis")
            if any(lo > hi for lo, hi in zip(self.lower, self.upper)):
                raise ModelValidationError("lower bound exceeds upper bound")
            if self.kind == "interval" and self.d != 1:
                raise ModelValidationError("interval constraints are one-dimensional; use box")
        if self.kind == "subspace_axis" and len(self.mask) != self.d:
            raise ModelValidationError("mask must have one entry per axis")

    @classmethod
    def full(cls, d: int = 1) -> "ConstraintSet":
        return cls("full_space", d)

    @classmethod
    def interval(cls, lo: float, hi: float) -> "ConstraintSet":
        return cls("interval", 1, (float(lo),), (float(hi),))

    @classmethod
    def box(cls, lower: Sequence[float], upper: Sequence[float]) -> "ConstraintSet":
        return cls("box", len(lower), tuple(map(float, lower)), tuple(map(float, upper)))

    @classmethod
    def subspace(cls, mask: Sequence[bool]) -> "ConstraintSet":
        return cls("subspace_axis", len(mask), mask=tuple(bool(m) for m in mask))

    def radius(self) -> float:
        """sup of |pi| over the set (inf when unbounded)."""
        if self.kind in ("interval", "box"):
            ext = np.maximum(np.abs(self.lower), np.abs(self.upper))
            return float(np.linalg.norm(ext))
        return np.inf

    def project(self, x) -> np.ndarray:
        return project(self, x)


def project(cs: ConstraintSet, x) -> np.ndarray:
    """Euclidean projection of ``x`` (trailing axis d) onto ``cs``."""
    x = np.asarray(x, dtype=float)
    if cs.kind == "full_space":
        return x.copy()
    if cs.kind in ("interval", "box"):
        return np.clip(x, np.asarray(cs.lower), np.asarray(cs.upper))
    return x * np.asarray(cs.mask, dtype=float)


def dist2(cs: ConstraintSet, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    r = x - project(cs, x)
    return np.sum(r * r, axis=-1)


# ---------------------------------------------------------------------------
# Market price of risk families
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TanhTheta:
    """theta(v) = a + b * tanh(v), componentwise; bounded by |a|+|b|, Lipschitz max|b|."""

    a: tuple
    b: tuple

    def __call__(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return np.asarray(self.a) + np.asarray(self.b) * np.tanh(v)

    @property
    def sup(self) -> float:
        return float(np.linalg.norm(np.abs(self.a) + np.abs(self.b)))

    @property
    def lip(self) -> float:
        return float(np.max(np.abs(self.b))) if len(self.b) else 0.0


def constant_theta(c: Sequence[float]) -> TanhTheta:
    return TanhTheta(tuple(map(float, c)), tuple(0.0 for _ in c))


# ---------------------------------------------------------------------------
# Forward-performance driver
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ForwardPerformanceDriver:
    delta: float
    theta: tuple  # one theta family per regime
    constraints: tuple  # one ConstraintSet per regime

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ModelValidationError(f"delta must lie in (0,1), got {self.delta}")
        if len(self.theta) != len(self.constraints):
            raise ModelValidationError("need one constraint set per regime")
        if any(cs.d != self.d for cs in self.constraints):
            raise ModelValidationError("constraint sets must share the factor dimension")

    @property
    def m0(self) -> int:
        return len(self.theta)

    @property
    def d(self) -> int:
        return self.constraints[0].d

    def structural_constants(self) -> tuple[float, float, float]:
        """(C_v, C_z, K_f) implied by delta, sup|theta|, Lip(theta) and the sets.

        Uses grad_w of the sup term = delta * Proj(w / (1-delta)) with
        w = z + theta, and |Proj(x)| <= min(radius, |Proj(0)| + |x|).
        """
        dl = self.delta
        c_v = c_z = k_f = 0.0
        for th, cs in zip(self.theta, self.constraints):
            big_t, lip = th.sup, th.lip
            r = cs.radius()
            p0 = float(np.linalg.norm(project(cs, np.zeros(self.d))))
            if np.isfinite(r):
                cv = dl * lip * r
                cz = max(dl * r, 1.0)
            else:
                cv = dl * lip * max(p0 + big_t / (1 - dl), 1 / (1 - dl))
                cz = max(dl * (p0 + big_t / (1 - dl)), 1 / (1 - dl))
            kf = max(dl * big_t**2 / (2 * (1 - dl)), 0.5 * dl * (1 - dl) * p0**2 + dl * p0 * big_t)
            c_v, c_z, k_f = max(c_v, cv), max(c_z, cz), max(k_f, kf)
        return c_v, c_z, k_f

    def as_driver_set(self) -> DriverSet:
        c_v, c_z, k_f = self.structural_constants()
        return DriverSet(m0=self.m0, d=self.d, f=lambda i, v, z: eval_fp_driver(self, i, v, z),
                         c_v=c_v, c_z=c_z, k_f=k_f, description=f"forward_performance(delta={self.delta})")


def validate_theta(drv: ForwardPerformanceDriver, cfg: ValidationConfig = ValidationConfig()) -> None:
    """Sampled boundedness and Lipschitz continuity of every theta^i."""
    d = drv.d
    u = _halton(2 * d, cfg.n_samples)
    v = (2 * u[:, :d] - 1) * cfg.box
    w = (2 * u[:, d:] - 1) * cfg.box
    for i, th in enumerate(drv.theta):
        tv = th(v)
        if np.any(np.linalg.norm(tv, axis=-1) > th.sup + 1e-10):
            raise AssumptionViolation(f"theta^{i} exceeds its declared bound")
        lhs = np.linalg.norm(tv - th(w), axis=-1)
        if np.any(lhs > th.lip * np.linalg.norm(v - w, axis=-1) + 1e-10):
            raise AssumptionViolation(f"theta^{i} exceeds its declared Lipschitz constant")


def eval_fp_driver(drv: ForwardPerformanceDriver, i: int, v, z) -> np.ndarray:
    dl = drv.delta
    z = np.asarray(z, dtype=float)
    w = z + drv.theta[i](v)
    return (0.5 * dl * (dl - 1) * dist2(drv.constraints[i], w / (1 - dl))
            + dl / (2 * (1 - dl)) * np.sum(w * w, axis=-1)
            + 0.5 * np.sum(z * z, axis=-1))


def cost_functional(i: int, v, pi, delta: float, theta) -> np.ndarray:
    """Running reward 1/2 delta(delta-1)|pi|^2 + delta pi.theta^i(v).

    ``theta`` is either the regime-indexed sequence of families or a
    forward-performance driver.
    """
    if isinstance(theta, ForwardPerformanceDriver):
        theta = theta.theta
    pi = np.asarray(pi, dtype=float)
    th = theta[i](v)
    return 0.5 * delta * (delta - 1) * np.sum(pi * pi, axis=-1) + delta * np.sum(pi * th, axis=-1)


def eval_controlled_driver(drv: ForwardPerformanceDriver, i: int, v, z, pi) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    pi = np.asarray(pi, dtype=float)
    return (cost_functional(i, v, pi, drv.delta, drv.theta)
            + drv.delta * np.sum(pi * z, axis=-1) + 0.5 * np.sum(z * z, axis=-1))


def optimal_strategy(drv: ForwardPerformanceDriver, i: int, v, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return project(drv.constraints[i], (z + drv.theta[i](v)) / (1 - drv.delta))


# ---------------------------------------------------------------------------
# Closed-form benchmarks (d = m0 = 1, eta(v) = -v/2, kappa = 1)
# ---------------------------------------------------------------------------


def normal_cdf(x):
    return special.ndtr(x)


@dataclass(frozen=True)
class ClosedFormBenchmark:
    """Explicit ergodic triplets for the scalar OU factor.

    example1: f(v) = v/2 exp(-v^2/2), lambda = 0.
    example2: f(v) = |v|/2 exp(-v^2/2), lambda = 1/(2 sqrt(2 pi)).

    ``y`` is reported in the gauge y(0) = 0.
    """

    variant: str

    def __post_init__(self):
        if self.variant not in ("example1", "example2"):
            raise ModelValidationError(f"unknown benchmark variant {self.variant!r}")

    @property
    def lam(self) -> float:
        return 0.0 if self.variant == "example1" else 1.0 / (2.0 * SQRT2PI)

    def f(self, v, z=None) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        g = np.exp(-0.5 * v * v)
        return 0.5 * (v if self.variant == "example1" else np.abs(v)) * g

    def z(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if self.variant == "example1":
            return 0.5 * np.exp(-0.5 * v * v)
        # e^{v^2/2}(N(v)-1) = -erfcx(v/sqrt2)/2 keeps the tail free of cancellation
        a = np.abs(v)
        odd = 0.5 * np.exp(-0.5 * a * a) - 0.5 * special.erfcx(a / SQRT2)
        return np.sign(v) * odd

    def dz(self, v) -> np.ndarray:
        """Analytic derivative of z (equals y'' since kappa = 1)."""
        v = np.asarray(v, dtype=float)
        g = np.exp(-0.5 * v * v)
        if self.variant == "example1":
            return -0.5 * v * g
        a = np.abs(v)
        return -0.5 * a * g - 0.5 * a * special.erfcx(a / SQRT2) + 1.0 / SQRT2PI

    def y(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if self.variant == "example1":
            return np.sqrt(np.pi / 2.0) * (normal_cdf(v) - 0.5)
        return _example2_y(np.abs(v))

    def model(self) -> ModelSpec:
        k_f = 0.5 * np.exp(-0.5)  # max of |v|/2 e^{-v^2/2}, attained at |v| = 1
        bench = self
        drv = DriverSet(m0=1, d=1, f=lambda i, v, z: bench.f(np.asarray(v)[..., 0]),
                        c_v=0.5, c_z=0.0, k_f=float(k_f), description=f"benchmark_{self.variant}")
        return ModelSpec(factor=ou_factor(0.5), driver=drv, rates=validate_rate_matrix([[0.0]]),
                         borderline=True, name=f"benchmark_{self.variant}")

    def stationary_residual(self, v) -> np.ndarray:
        """1/2 y'' + eta y' + f - lambda with analytic derivatives."""
        v = np.asarray(v, dtype=float)
        return 0.5 * self.dz(v) - 0.5 * v * self.z(v) + self.f(v) - self.lam


def _example2_z_pos(u: float) -> float:
    return 0.5 * np.exp(-0.5 * u * u) - 0.5 * special.erfcx(u / SQRT2)


def _example2_y(a: np.ndarray) -> np.ndarray:
    # y is even; integrate z over [0, |v|]
    out = np.empty_like(a)
    flat, res = a.ravel(), out.ravel()
    cache: dict[float, float] = {}
    for k, x in enumerate(flat):
        if x not in cache:
            cache[x] = integrate.quad(_example2_z_pos, 0.0, float(x), epsabs=1e-14, epsrel=1e-13, limit=200)[0]
        res[k] = cache[x]
    return out


def benchmark_solution(b: ClosedFormBenchmark, v) -> tuple[np.ndarray, np.ndarray, float]:
    return b.y(v), b.z(v), b.lam


# ---------------------------------------------------------------------------
# Simple drivers used by tests and the comparison harness
# ---------------------------------------------------------------------------


def constant_driver(c: float, m0: int = 1, d: int = 1) -> DriverSet:
    return DriverSet(m0=m0, d=d, f=lambda i, v, z: np.full(np.shape(v)[:-1], float(c)),
                     c_v=0.0, c_z=0.0, k_f=abs(float(c)), description=f"constant({c})")


def driver_from_callables(fs: Sequence[Callable], d: int, c_v: float, c_z: float, k_f: float,
                          description: str = "") -> DriverSet:
    fs = tuple(fs)
    return DriverSet(m0=len(fs), d=d, f=lambda i, v, z: fs[i](v, z), c_v=c_v, c_z=c_z, k_f=k_f,
                     description=description)


def forward_performance_model(fp: ForwardPerformanceDriver, factor, q, name: str = "",
                              validate: bool = True) -> ModelSpec:
    """ModelSpec of the forward-performance system on ``factor`` with rate matrix ``q``."""
    model = ModelSpec(factor=factor, driver=fp.as_driver_set(), rates=validate_rate_matrix(q), name=name,
                      meta={"fp_driver": fp})
    if validate:
        validate_theta(fp)
        validate_model(model)
    return model
