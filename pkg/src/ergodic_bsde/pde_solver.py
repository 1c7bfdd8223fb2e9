"""One-dimensional IMEX finite-difference solver for the coupled semilinear system

    d_t y^i = 1/2 kappa^2 y^i'' + eta(v) y^i' + F^i(v, kappa y^i') + G^i(v, y) - rho y^i - lambda_shift

on a uniform grid.  Diffusion, drift and the discount are implicit (one
tridiagonal solve shared by all regimes); the Hamiltonian F and the regime
coupling G are explicit with the gradient lagged by one step.

For the BSDE system G^i(y) = sum_k q^{ik}(exp(y^k - y^i) - 1) with the exponent
clamped at K_diff + 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import lapack

from .core_model import ModelSpec, apriori_constants
from .errors import MaxStepsExceeded, ModelValidationError, NonFiniteState

BOUNDARIES = ("linear_extrapolation", "clamped_gradient")


@dataclass(frozen=True)
class Grid1D:
    v_min: float = -6.0
    v_max: float = 6.0
    n: int = 801

    def __post_init__(self):
        if not self.v_min < self.v_max:
            raise ModelValidationError("grid needs v_min < v_max")
        if self.n < 5:
            raise ModelValidationError("grid needs at least 5 nodes")

    @property
    def h(self) -> float:
        return (self.v_max - self.v_min) / (self.n - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.v_min, self.v_max, self.n)

    def index_of(self, v: float) -> int:
        """Index of the node nearest to ``v``."""
        return int(np.clip(round((v - self.v_min) / self.h), 0, self.n - 1))

    def central_window(self, fraction: float) -> slice:
        """Slice of nodes covering the middle ``fraction`` of the domain."""
        half = 0.5 * fraction * (self.v_max - self.v_min)
        mid = 0.5 * (self.v_min + self.v_max)
        v = self.nodes
        idx = np.flatnonzero((v >= mid - half - 1e-12) & (v <= mid + half + 1e-12))
        return slice(int(idx[0]), int(idx[-1]) + 1)


@dataclass(frozen=True)
class SchemeConfig:
    """Time-stepping controls.

    ``dt`` is an upper bound: the solver lowers it to the recorded stability
    limit when needed.  ``accelerate`` removes the slowly decaying
    spatially-constant mode of discounted solves in closed form; the
    stationarity criterion is unchanged.
    """

    dt: float = 0.01
    theta_scheme: float = 1.0
    boundary: str = "linear_extrapolation"
    stationarity_tol: float = 1e-8
    max_steps: int = 2_000_000
    accelerate: bool = True

    def __post_init__(self):
        if self.dt <= 0:
            raise ModelValidationError("dt must be positive")
        if not 0.5 <= self.theta_scheme <= 1.0:
            raise ModelValidationError("theta_scheme must lie in [0.5, 1]")
        if self.boundary not in BOUNDARIES:
            raise ModelValidationError(f"boundary must be one of {BOUNDARIES}")
        if self.stationarity_tol <= 0:
            raise ModelValidationError("stationarity_tol must be positive")


@dataclass
class ParabolicSolution:
    grid: Grid1D
    times: np.ndarray
    y: np.ndarray  # [time][regime][node]
    z: np.ndarray
    scheme_config: SchemeConfig
    diagnostics: dict = field(default_factory=dict)


@dataclass
class StationarySolution:
    grid: Grid1D
    rho: float
    y: np.ndarray  # [regime][node]
    z: np.ndarray
    steps: int
    residual: float
    diagnostics: dict = field(default_factory=dict)


def compute_z(y, kappa, h: float) -> np.ndarray:
    """kappa * dy/dv: central differences inside, second-order one-sided at the ends."""
    y = np.asarray(y, dtype=float)
    k = float(np.asarray(kappa).reshape(-1)[0])
    dy = np.empty_like(y)
    dy[..., 1:-1] = (y[..., 2:] - y[..., :-2]) / (2 * h)
    dy[..., 0] = (-3 * y[..., 0] + 4 * y[..., 1] - y[..., 2]) / (2 * h)
    dy[..., -1] = (3 * y[..., -1] - 4 * y[..., -2] + y[..., -3]) / (2 * h)
    return k * dy


def exp_coupling(q: np.ndarray, clamp: float):
    """G^i(y) = sum_k q^{ik}(exp(y^k - y^i) - 1) with the exponent clipped at +-clamp.

    Returns a callable y -> (G, number of clipped off-diagonal entries).
    """
    q = np.asarray(q, dtype=float)
    m0 = q.shape[0]
    active = (q > 0) & ~np.eye(m0, dtype=bool)

    def coupling(y: np.ndarray):
        if m0 == 1:
            return np.zeros_like(y), 0
        diff = y[None, :, :] - y[:, None, :]  # [i][k][node] = y^k - y^i
        fired = 0
        if np.isfinite(clamp):
            over = np.abs(diff) > clamp
            fired = int(np.count_nonzero(over & active[:, :, None]))
            diff = np.clip(diff, -clamp, clamp)
        return np.einsum("ik,ikn->in", q, np.expm1(diff)), fired

    return coupling


def stable_dt(grid: Grid1D, c_z: float, z_bound: float, q_diag_max: float = 0.0,
              coupling_clamp: float = np.inf) -> float:
    """Largest admissible step for the explicit terms.

    Hamiltonian: dt <= h / (2 C_z (1 + 2 |z|_max)); the drift is implicit so
    max|eta| does not enter.  Coupling: dt <= 1 / (max_i |q^{ii}| e^{clamp}).
    """
    dt = np.inf
    if c_z > 0:
        dt = grid.h / (2 * c_z * (1 + 2 * z_bound)) if np.isfinite(z_bound) else 0.0
    if q_diag_max > 0:
        growth = math.exp(coupling_clamp) if np.isfinite(coupling_clamp) else np.inf
        dt = min(dt, 1.0 / (q_diag_max * growth)) if np.isfinite(growth) else dt
    return dt


class SemilinearOperator:
    """Discrete operator and IMEX stepper for one regime system on one grid.

    ``hamiltonian(i, v_nodes, z_nodes)`` receives arrays of shape (n, 1);
    ``coupling(y)`` maps the full state (m0, n) to (G, clamp_count).
    """

    def __init__(self, grid: Grid1D, kappa, eta: Callable, hamiltonian: Callable, coupling: Callable,
                 m0: int, cfg: SchemeConfig, rho: float = 0.0, lambda_shift: float = 0.0,
                 dt: float | None = None, z_clip: float = np.inf):
        self.grid, self.cfg, self.m0 = grid, cfg, m0
        self.rho, self.lambda_shift = float(rho), float(lambda_shift)
        self.kappa = float(np.asarray(kappa).reshape(-1)[0])
        self.hamiltonian, self.coupling = hamiltonian, coupling
        self.z_clip = z_clip
        self.dt = float(cfg.dt if dt is None else dt)
        self.clamp_count = 0
        self.last_clamp = 0
        v = grid.nodes
        self.v = v
        self.v_col = v[:, None]
        h = grid.h
        diff = 0.5 * self.kappa**2 / h**2
        eta_v = np.asarray(eta(self.v_col), dtype=float).reshape(-1)
        self.eta_v = eta_v
        central = np.abs(eta_v) * h <= self.kappa**2
        self.upwind_nodes = int(np.count_nonzero(~central[1:-1]))
        a = np.where(central, diff - eta_v / (2 * h), diff + np.maximum(-eta_v, 0) / h)
        c = np.where(central, diff + eta_v / (2 * h), diff + np.maximum(eta_v, 0) / h)
        b = -(a + c)
        self.a, self.b, self.c = a, b, c
        self._factor()

    # -- boundary closure y_0 = al*y_1 + be*y_2 + ga (mirrored on the right) --
    def _closure(self):
        if self.cfg.boundary == "linear_extrapolation":
            return 2.0, -1.0
        return 1.0, 0.0

    def _closure_offsets(self, y: np.ndarray):
        if self.cfg.boundary == "linear_extrapolation":
            zero = np.zeros(y.shape[0])
            return zero, zero
        h = self.grid.h
        lim = self.z_clip / self.kappa
        gl = np.clip((y[:, 2] - y[:, 1]) / h, -lim, lim)
        gr = np.clip((y[:, -2] - y[:, -3]) / h, -lim, lim)
        return -h * gl, h * gr

    def _factor(self):
        th, dt = self.cfg.theta_scheme, self.dt
        al, be = self._closure()
        a, b, c = self.a[1:-1].copy(), self.b[1:-1].copy(), self.c[1:-1].copy()
        # interior operator with the boundary nodes substituted out
        diag, lower, upper = b.copy(), a[1:].copy(), c[:-1].copy()
        diag[0] += a[0] * al
        upper[0] += a[0] * be
        diag[-1] += c[-1] * al
        lower[-1] += c[-1] * be
        self.A_diag, self.A_lower, self.A_upper = diag, lower, upper
        m_diag = (1 + self.rho * dt) - th * dt * diag
        m_lower, m_upper = -th * dt * lower, -th * dt * upper
        dl, d, du, du2, ipiv, info = lapack.dgttrf(m_lower, m_diag, m_upper)
        if info != 0:
            raise NonFiniteState("singular implicit matrix")
        self._lu = (dl, d, du, du2, ipiv)

    def with_dt(self, dt: float) -> "SemilinearOperator":
        new = object.__new__(SemilinearOperator)
        new.__dict__.update(self.__dict__)
        new.dt = float(dt)
        new.clamp_count = 0
        new._factor()
        return new

    def fill_boundary(self, y: np.ndarray, offsets=None) -> np.ndarray:
        al, be = self._closure()
        gl, gr = self._closure_offsets(y) if offsets is None else offsets
        y[:, 0] = al * y[:, 1] + be * y[:, 2] + gl
        y[:, -1] = al * y[:, -2] + be * y[:, -3] + gr
        return y

    def apply_A(self, y: np.ndarray) -> np.ndarray:
        """Spatial operator on interior nodes of a full (boundary-consistent) state."""
        return self.a[1:-1] * y[:, :-2] + self.b[1:-1] * y[:, 1:-1] + self.c[1:-1] * y[:, 2:]

    def explicit_terms(self, y: np.ndarray) -> np.ndarray:
        """F^i(v, z^i) + G^i(y) - lambda_shift at interior nodes."""
        z = compute_z(y, self.kappa, self.grid.h)
        out = np.empty((self.m0, self.grid.n - 2))
        vin = self.v_col[1:-1]
        for i in range(self.m0):
            out[i] = self.hamiltonian(i, vin, z[i, 1:-1, None])
        g, fired = self.coupling(y[:, 1:-1])
        self.last_clamp = fired
        return out + g - self.lambda_shift

    def stationary_residual(self, y: np.ndarray) -> np.ndarray:
        """A y + F + G - rho y - lambda_shift on interior nodes (zero at a fixed point)."""
        return self.apply_A(y) + self.explicit_terms(y) - self.rho * y[:, 1:-1]

    def step(self, y: np.ndarray) -> np.ndarray:
        th, dt = self.cfg.theta_scheme, self.dt
        offsets = self._closure_offsets(y)
        rhs = y[:, 1:-1] + dt * self.explicit_terms(y)
        self.clamp_count += self.last_clamp
        if th < 1.0:
            rhs += (1 - th) * dt * self.apply_A(y)
        gl, gr = offsets
        rhs[:, 0] += th * dt * self.a[1] * gl
        rhs[:, -1] += th * dt * self.c[-2] * gr
        sol, info = lapack.dgttrs(*self._lu, rhs.T.copy())
        out = np.empty_like(y)
        out[:, 1:-1] = sol.T
        self.fill_boundary(out, offsets)
        if not np.all(np.isfinite(out)):
            raise NonFiniteState("non-finite state; reduce dt")
        return out


# ---------------------------------------------------------------------------
# BSDE-system front ends
# ---------------------------------------------------------------------------


def bsde_operator(model: ModelSpec, grid: Grid1D, cfg: SchemeConfig, rho: float = 0.0,
                  lambda_shift: float = 0.0, z_extra: float = 0.0) -> SemilinearOperator:
    """Operator for the BSDE system of ``model``; dt is lowered to the stability limit.

    ``z_extra`` widens the gradient bound used in the step limit (e.g. by the
    Lipschitz constant of initial data).
    """
    if model.d != 1:
        raise ModelValidationError("the PDE solver is one-dimensional")
    consts = apriori_constants(model, rho)
    clamp = consts.k_diff + 1.0 if np.isfinite(consts.k_diff) else np.inf
    z_bound = consts.k_z + z_extra
    q = model.rates.q
    dt_max = stable_dt(grid, model.driver.c_z, z_bound, float(np.max(-np.diag(q))), clamp)
    if dt_max <= 0:
        raise ModelValidationError("no admissible time step: unbounded gradient with z-dependent driver")
    dt = min(cfg.dt, dt_max)
    op = SemilinearOperator(grid, model.factor.kappa, model.factor.eta, model.driver.f,
                            exp_coupling(q, clamp), model.m0, cfg, rho=rho, lambda_shift=lambda_shift,
                            dt=dt, z_clip=consts.k_z if np.isfinite(consts.k_z) else np.inf)
    op.stability = {"dt_max": dt_max, "dt": dt, "coupling_clamp": clamp, "z_bound": z_bound}
    return op


def step_parabolic(state: np.ndarray, op: SemilinearOperator) -> np.ndarray:
    """Advance a regime-indexed grid state by one IMEX step of ``op``."""
    return op.step(np.asarray(state, dtype=float))


def _initial_state(grid: Grid1D, m0: int, initial) -> np.ndarray:
    v = grid.nodes
    if callable(initial):
        y0 = np.array([np.asarray(initial(i, v), dtype=float) * np.ones_like(v) for i in range(m0)])
    else:
        y0 = np.array(initial, dtype=float)
        if y0.ndim == 0:
            y0 = np.full((m0, grid.n), float(y0))
        elif y0.ndim == 1:
            y0 = np.tile(y0, (m0, 1))
    if y0.shape != (m0, grid.n):
        raise ModelValidationError(f"initial data must have shape {(m0, grid.n)}, got {y0.shape}")
    return y0


def run_parabolic(op: SemilinearOperator, y0: np.ndarray, T: float,
                  save_times: Sequence[float] | None = None) -> ParabolicSolution:
    """Integrate op forward to ``T`` from ``y0`` (which is kept verbatim at t=0)."""
    if T <= 0:
        raise ModelValidationError("horizon must be positive")
    n_steps = max(1, math.ceil(T / op.dt - 1e-9))
    dt = T / n_steps
    if abs(dt - op.dt) > 1e-15:
        op = op.with_dt(dt)
    if save_times is None:
        save_idx = np.arange(n_steps + 1)
    else:
        save_idx = np.unique(np.clip(np.round(np.asarray(save_times) / dt).astype(int), 0, n_steps))
    keep = set(save_idx.tolist())
    ys = []
    y = y0.copy()
    if 0 in keep:
        ys.append(y.copy())
    for k in range(1, n_steps + 1):
        y = op.step(y)
        if k in keep:
            ys.append(y.copy())
    ys = np.array(ys)
    h = op.grid.h
    return ParabolicSolution(grid=op.grid, times=save_idx * dt, y=ys, z=compute_z(ys, op.kappa, h),
                             scheme_config=replace(op.cfg, dt=dt),
                             diagnostics={"dt": dt, "n_steps": n_steps, "clamp_count": op.clamp_count,
                                          "upwind_nodes": op.upwind_nodes})


def solve_finite_horizon(model: ModelSpec, grid: Grid1D, initial, T: float, cfg: SchemeConfig = SchemeConfig(),
                         rho: float = 0.0, lambda_shift: float = 0.0,
                         save_times: Sequence[float] | None = None) -> ParabolicSolution:
    """Solve the system forward in PDE time from y(0, .) = h^i."""
    y0 = _initial_state(grid, model.m0, initial)
    c_h = float(np.max(np.abs(np.diff(y0, axis=1)))) / grid.h
    op = bsde_operator(model, grid, cfg, rho=rho, lambda_shift=lambda_shift,
                       z_extra=c_h * float(np.abs(np.asarray(model.factor.kappa)).max()))
    sol = run_parabolic(op, y0, T, save_times)
    sol.diagnostics.update(op.stability)
    return sol


def iterate_to_stationarity(op: SemilinearOperator, y0: np.ndarray) -> StationarySolution:
    cfg, dt = op.cfg, op.dt
    y = y0.copy()
    accelerate = cfg.accelerate and op.rho > 0
    res = np.inf
    for k in range(1, cfg.max_steps + 1):
        y_new = op.step(y)
        ydot = (y_new - y) / dt
        res = float(np.max(np.abs(ydot)))
        if accelerate:
            # the constant mode relaxes like exp(-rho t); jump to its limit
            y_new += np.mean(ydot) / op.rho
        y = y_new
        if res < cfg.stationarity_tol:
            return StationarySolution(grid=op.grid, rho=op.rho, y=y, z=compute_z(y, op.kappa, op.grid.h),
                                      steps=k, residual=res,
                                      diagnostics={"clamp_count_total": op.clamp_count,
                                                   "clamp_count_final": op.last_clamp, "dt": dt})
    raise MaxStepsExceeded(f"no stationarity after {cfg.max_steps} steps (residual {res:.3e})",
                           residual=res, steps=cfg.max_steps)


def solve_discounted_stationary(model: ModelSpec, grid: Grid1D, rho: float,
                                cfg: SchemeConfig = SchemeConfig(), initial=0.0) -> StationarySolution:
    """Fixed point of the discounted system, reached by time stepping from ``initial``."""
    if not rho > 0:
        raise ModelValidationError("rho must be positive for the discounted problem")
    op = bsde_operator(model, grid, cfg, rho=rho)
    sol = iterate_to_stationarity(op, _initial_state(grid, model.m0, initial))
    sol.diagnostics.update(op.stability)
    return sol
