"""Model data types, structural validators, a priori constants and truncations.

Shapes follow one convention throughout: a state or gradient vector carries a
trailing axis of length ``d``, so a batch of ``n`` factor values is ``(n, d)``.
Driver and drift callables are vectorized over leading axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import qmc

from .errors import (
    AssumptionViolation,
    DegenerateDissipativity,
    ModelValidationError,
    NegativeOffDiagonal,
    RowSumViolation,
    ZeroDiscount,
)

LINEAR_TOL = 1e-12
SAMPLED_TOL = 1e-10

DriftFn = Callable[[np.ndarray], np.ndarray]
DriverFn = Callable[[int, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class RateMatrix:
    """Transition-rate matrix of the regime chain.

    ``q_min`` is ``inf`` for a single regime, where no off-diagonal entry
    exists and the irreducibility condition is vacuous but ``K_diff`` is
    inapplicable.
    """

    m0: int
    q: np.ndarray
    q_min: float
    q_max: float

    @property
    def irreducible(self) -> bool:
        return self.m0 > 1 and self.q_min > 0.0

    def embedded_jump_probs(self) -> np.ndarray:
        """Row-stochastic jump matrix q^{ik}/(-q^{ii}); rows of absorbing states are zero."""
        out = np.zeros_like(self.q)
        for i in range(self.m0):
            rate = -self.q[i, i]
            if rate > 0:
                out[i] = self.q[i] / rate
                out[i, i] = 0.0
        return out


def validate_rate_matrix(q) -> RateMatrix:
    q = np.array(q, dtype=float)
    if q.ndim != 2 or q.shape[0] != q.shape[1] or q.shape[0] < 1:
        raise ModelValidationError(f"rate matrix must be square and non-empty, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise ModelValidationError("rate matrix has non-finite entries")
    m0 = q.shape[0]
    for i in range(m0):
        off = np.delete(q[i], i)
        if np.any(off < 0):
            raise NegativeOffDiagonal(f"row {i} has a negative off-diagonal rate", path=f"[{i}]")
        s = q[i].sum()
        if abs(s) > LINEAR_TOL:
            raise RowSumViolation(f"row {i} sums to {float(s)!r}, expected 0", path=f"[{i}]")
    if m0 == 1:
        q_min = np.inf
    else:
        q_min = float(min(q[i, k] for i in range(m0) for k in range(m0) if i != k))
    q.setflags(write=False)
    return RateMatrix(m0=m0, q=q, q_min=q_min, q_max=float(q.max()))


@dataclass(frozen=True)
class ValidationConfig:
    """Sample box and size for the sampled assumption checks."""

    box: float = 6.0
    z_box: float = 3.0
    n_samples: int = 10_000


def _halton(dim: int, n: int) -> np.ndarray:
    return qmc.Halton(d=dim, scramble=False).random(n + 1)[1:]


@dataclass(frozen=True)
class FactorModel:
    """Factor dynamics dV = eta(V) dt + kappa dW.

    ``kappa`` is normalized in the Frobenius norm.
    """

    d: int
    eta: DriftFn
    kappa: np.ndarray
    c_eta: float
    description: str = ""

    def diffusion_matrix(self) -> np.ndarray:
        return self.kappa.T @ self.kappa


def validate_factor(factor: FactorModel, cfg: ValidationConfig = ValidationConfig()) -> FactorModel:
    d = factor.d
    kappa = np.atleast_2d(np.asarray(factor.kappa, dtype=float))
    if kappa.shape != (d, d):
        raise ModelValidationError(f"kappa must be {d}x{d}, got {kappa.shape}")
    if abs(np.linalg.norm(kappa) - 1.0) > LINEAR_TOL:
        raise ModelValidationError(f"|kappa| must be 1 (Frobenius), got {np.linalg.norm(kappa)!r}")
    sym = 0.5 * (kappa + kappa.T)
    if np.min(np.linalg.eigvalsh(sym)) <= 0:
        raise ModelValidationError("kappa must be positive definite")
    if factor.c_eta <= 0:
        raise ModelValidationError("C_eta must be positive")
    u = _halton(2 * d, cfg.n_samples)
    v = (2 * u[:, :d] - 1) * cfg.box
    vb = (2 * u[:, d:] - 1) * cfg.box
    dv = v - vb
    lhs = np.sum((factor.eta(v) - factor.eta(vb)) * dv, axis=-1)
    rhs = -factor.c_eta * np.sum(dv * dv, axis=-1) + SAMPLED_TOL
    bad = np.flatnonzero(lhs > rhs)
    if bad.size:
        j = bad[0]
        raise AssumptionViolation(f"dissipativity fails at v={v[j]}, v_bar={vb[j]}")
    return factor


def ou_factor(c_eta: float, d: int = 1, kappa=None) -> FactorModel:
    """Linear mean-reverting factor eta(v) = -c_eta v."""
    if kappa is None:
        kappa = np.eye(d) / np.sqrt(d)
    kappa = np.atleast_2d(np.asarray(kappa, dtype=float))
    return FactorModel(d=d, eta=lambda v: -c_eta * np.asarray(v), kappa=kappa, c_eta=c_eta,
                       description=f"ou(c_eta={c_eta})")


@dataclass(frozen=True)
class DriverSet:
    """Regime-indexed driver family with its structural constants."""

    m0: int
    d: int
    f: DriverFn
    c_v: float
    c_z: float
    k_f: float
    description: str = ""

    def __call__(self, i: int, v, z) -> np.ndarray:
        return self.f(i, v, z)


def validate_driver(drv: DriverSet, cfg: ValidationConfig = ValidationConfig()) -> DriverSet:
    d = drv.d
    u = _halton(4 * d, cfg.n_samples)
    v = (2 * u[:, :d] - 1) * cfg.box
    w = (2 * u[:, d:2 * d] - 1) * cfg.box
    z = (2 * u[:, 2 * d:3 * d] - 1) * cfg.z_box
    zb = (2 * u[:, 3 * d:] - 1) * cfg.z_box
    zero = np.zeros_like(z)
    nz = np.linalg.norm(z, axis=-1)
    nzb = np.linalg.norm(zb, axis=-1)
    for i in range(drv.m0):
        f0 = np.abs(drv.f(i, v, zero))
        if np.any(f0 > drv.k_f + SAMPLED_TOL):
            raise AssumptionViolation(f"|f^{i}(v,0)| exceeds K_f={drv.k_f}: max {float(f0.max())!r}")
        lhs = np.abs(drv.f(i, v, z) - drv.f(i, w, z))
        rhs = drv.c_v * (1 + nz) * np.linalg.norm(v - w, axis=-1) + SAMPLED_TOL
        if np.any(lhs > rhs):
            raise AssumptionViolation(f"f^{i} violates the v-Lipschitz bound with C_v={drv.c_v}")
        lhs = np.abs(drv.f(i, v, z) - drv.f(i, v, zb))
        rhs = drv.c_z * (1 + nz + nzb) * np.linalg.norm(z - zb, axis=-1) + SAMPLED_TOL
        if np.any(lhs > rhs):
            raise AssumptionViolation(f"f^{i} violates the local z-Lipschitz bound with C_z={drv.c_z}")
    return drv


@dataclass(frozen=True)
class ModelSpec:
    """Factor, driver family and regime chain of one BSDE system.

    ``borderline`` admits C_eta == C_v, which the closed-form benchmarks need;
    the gradient bound K_z is then infinite.
    """

    factor: FactorModel
    driver: DriverSet
    rates: RateMatrix
    borderline: bool = False
    name: str = ""
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def m0(self) -> int:
        return self.rates.m0

    @property
    def d(self) -> int:
        return self.factor.d


def validate_model(model: ModelSpec, cfg: ValidationConfig = ValidationConfig()) -> ModelSpec:
    if model.driver.m0 != model.rates.m0:
        raise ModelValidationError(
            f"driver has {model.driver.m0} regimes but rate matrix has {model.rates.m0}")
    if model.driver.d != model.factor.d:
        raise ModelValidationError("driver and factor dimensions differ")
    _check_dissipativity_gap(model.factor.c_eta, model.driver.c_v, model.borderline)
    validate_factor(model.factor, cfg)
    validate_driver(model.driver, cfg)
    return model


def _check_dissipativity_gap(c_eta: float, c_v: float, borderline: bool) -> None:
    if c_eta > c_v:
        return
    if borderline and c_eta == c_v:
        return
    raise DegenerateDissipativity(f"need C_eta > C_v, got C_eta={c_eta}, C_v={c_v}")


@dataclass(frozen=True)
class AprioriConstants:
    """Bounds on Y, Z and regime differences; ``nan`` marks an inapplicable bound."""

    k_y: float
    k_z: float
    k_diff: float
    rho: float


def apriori_constants(model: ModelSpec, rho: float = 0.0, need_k_y: bool = False) -> AprioriConstants:
    drv = model.driver
    c_eta = model.factor.c_eta
    if rho < 0:
        raise ModelValidationError("rho must be nonnegative")
    if need_k_y and rho == 0:
        raise ZeroDiscount("K_y = K_f / rho is undefined for rho = 0")
    _check_dissipativity_gap(c_eta, drv.c_v, model.borderline)
    gap = c_eta - drv.c_v
    if gap > 0:
        k_z = drv.c_v / gap
        ode_term = drv.c_v * c_eta * drv.c_z / gap**2
    else:
        k_z = 0.0 if drv.c_v == 0 else np.inf
        ode_term = 0.0 if drv.c_v * drv.c_z == 0 else np.inf
    k_y = drv.k_f / rho if rho > 0 else np.nan
    if model.rates.m0 == 1:
        k_diff = np.nan
    elif model.rates.q_min > 0:
        k_diff = (drv.k_f + ode_term) / model.rates.q_min
    else:
        k_diff = np.inf
    return AprioriConstants(k_y=k_y, k_z=k_z, k_diff=k_diff, rho=rho)


def truncate_scalar(y, k_y: float):
    return np.clip(y, -k_y, k_y)


def truncate_vector(z, k_z: float) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    norm = np.linalg.norm(z, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norm > k_z, k_z / norm, 1.0)
    return z * scale
