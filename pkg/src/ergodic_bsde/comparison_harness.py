"""Numerical comparison checks for small Markovian BSDE systems.

A system is given by terminal data xi^i(v), a gradient driver F^i(v, z) and a
coupling G^i(v, y) acting on all regimes at one node.  Its Markovian solution
solves, forward in PDE time,

    d_t y^i = 1/2 kappa^2 y^i'' + eta y^i' + F^i(v, kappa y^i') + G^i(v, y),   y(0) = xi.

The ordering check mirrors the four hypotheses of the comparison principle:
ordered terminal data, Lipschitz drivers for the dominated system, an
off-diagonal monotone coupling, and driver ordering evaluated along the
dominating solution only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core_model import FactorModel, ModelSpec, apriori_constants, ou_factor
from .pde_solver import (
    Grid1D,
    ParabolicSolution,
    SchemeConfig,
    SemilinearOperator,
    _initial_state,
    run_parabolic,
    solve_discounted_stationary,
    solve_finite_horizon,
)
from .errors import ModelValidationError

ORDERED = "ORDERED"
COUNTEREXAMPLE = "COUNTEREXAMPLE"
HYPOTHESIS_FAILED = "HYPOTHESIS_FAILED"


@dataclass(frozen=True)
class SystemSide:
    """One side (xi, F, G) of a comparison instance.

    ``xi(i, v)``, ``F(i, v, z)`` and ``G(v, y)`` are vectorized: v and z
    have shape (n,), y has shape (m0, n) and G returns (m0, n).
    """

    xi: Callable
    F: Callable
    G: Callable
    c_f: float = np.nan
    c_g: float = np.nan


@dataclass(frozen=True)
class ComparisonInstance:
    m0: int
    T: float
    lower: SystemSide
    upper: SystemSide
    factor: FactorModel = field(default_factory=lambda: ou_factor(1.0))
    claims: tuple = ("i", "ii", "iii", "iv")
    instance_id: int = 0
    seed: int | None = None


@dataclass(frozen=True)
class ComparisonVerdict:
    verdict: str
    failed_condition: str | None
    max_violation: float
    tolerance: float
    instance_id: int = 0
    seed: int | None = None
    diagnostics: dict = field(default_factory=dict, compare=False)

    @property
    def label(self) -> str:
        return f"{self.verdict}({self.failed_condition})" if self.failed_condition else self.verdict


def _sample(grid: Grid1D, m0: int, n: int, seed: int):
    rng = np.random.default_rng(seed)
    v = rng.uniform(grid.v_min, grid.v_max, n)
    y = rng.uniform(-3, 3, (m0, n))
    yb = rng.uniform(-3, 3, (m0, n))
    z = rng.uniform(-3, 3, n)
    zb = rng.uniform(-3, 3, n)
    return v, y, yb, z, zb


def check_hypotheses(inst: ComparisonInstance, grid: Grid1D, n_samples: int = 2000,
                     seed: int = 0) -> str | None:
    """First violated of (i)-(iii) on the grid and a random sample, or None."""
    m0 = inst.m0
    lo, up = inst.lower, inst.upper
    v_nodes = grid.nodes
    for i in range(m0):
        if np.any(lo.xi(i, v_nodes) > up.xi(i, v_nodes) + 1e-12):
            return "i"
    v, y, yb, z, zb = _sample(grid, m0, n_samples, seed)
    for i in range(m0):
        if np.any(np.abs(lo.F(i, v, z) - lo.F(i, v, zb)) > lo.c_f * np.abs(z - zb) + 1e-10):
            return "ii"
    dg = np.abs(lo.G(v, y) - lo.G(v, yb))
    if np.any(dg > lo.c_g * np.linalg.norm(y - yb, axis=0) + 1e-10):
        return "ii"
    base = lo.G(v, y)
    for k in range(m0):
        bumped = y.copy()
        bumped[k] += np.abs(yb[k]) + 1e-3
        g = lo.G(v, bumped)
        others = np.arange(m0) != k
        if np.any(g[others] < base[others] - 1e-12):
            return "iii"
    return None


def _operator(side: SystemSide, inst: ComparisonInstance, grid: Grid1D, cfg: SchemeConfig) -> SemilinearOperator:
    v_in = grid.nodes[1:-1]
    c_f = side.c_f if np.isfinite(side.c_f) else 1.0
    c_g = side.c_g if np.isfinite(side.c_g) else 1.0
    dt = min(cfg.dt, grid.h / (2 * max(c_f, 1e-12)), 0.5 / max(c_g, 1e-12))

    def ham(i, v_col, z_col):
        return side.F(i, v_col[:, 0], z_col[:, 0])

    def coupling(y):
        return side.G(v_in, y), 0

    return SemilinearOperator(grid, inst.factor.kappa, inst.factor.eta, ham, coupling, inst.m0, cfg, dt=dt)


def solve_small_system(side: SystemSide, inst: ComparisonInstance, grid: Grid1D,
                       cfg: SchemeConfig = SchemeConfig(), save_times=None) -> ParabolicSolution:
    """y^i(t, .) on [0, T] from terminal data xi (t is time to maturity)."""
    if inst.factor.d != 1:
        raise ModelValidationError("comparison instances are one-dimensional")
    op = _operator(side, inst, grid, cfg)
    y0 = _initial_state(grid, inst.m0, lambda i, v: side.xi(i, v))
    return run_parabolic(op, y0, inst.T, save_times)


def check_comparison(inst: ComparisonInstance, grid: Grid1D, cfg: SchemeConfig = SchemeConfig(),
                     tol: float | None = None, n_samples: int = 2000) -> ComparisonVerdict:
    """ORDERED, HYPOTHESIS_FAILED(cond) or COUNTEREXAMPLE for one instance.

    (i)-(iii) are checked before solving; (iv) is checked along the computed
    dominating solution at every stored time and node.  The ordering
    tolerance defaults to h^2 + 1e-10.
    """
    tol = grid.h**2 + 1e-10 if tol is None else tol
    failed = check_hypotheses(inst, grid, n_samples, seed=inst.seed or 0)
    if failed:
        return ComparisonVerdict(HYPOTHESIS_FAILED, failed, np.nan, tol, inst.instance_id, inst.seed)
    upper = solve_small_system(inst.upper, inst, grid, cfg)
    v_in = grid.nodes[1:-1]
    worst_iv = -np.inf
    for k in range(len(upper.times)):
        yb = upper.y[k][:, 1:-1]
        zb = upper.z[k][:, 1:-1]
        dg = inst.lower.G(v_in, yb) - inst.upper.G(v_in, yb)
        worst_iv = max(worst_iv, float(np.max(dg)))
        for i in range(inst.m0):
            worst_iv = max(worst_iv, float(np.max(inst.lower.F(i, v_in, zb[i]) - inst.upper.F(i, v_in, zb[i]))))
    if worst_iv > 1e-12:
        return ComparisonVerdict(HYPOTHESIS_FAILED, "iv", np.nan, tol, inst.instance_id, inst.seed,
                                 {"iv_excess": worst_iv})
    lower = solve_small_system(inst.lower, inst, grid, cfg)
    if lower.y.shape != upper.y.shape:
        raise ModelValidationError("the two sides were stored on different time meshes")
    gap = upper.y - lower.y
    violation = float(np.max(-gap))
    verdict = ORDERED if violation <= tol else COUNTEREXAMPLE
    return ComparisonVerdict(verdict, None, max(violation, 0.0), tol, inst.instance_id, inst.seed,
                             {"min_gap": float(np.min(gap)), "final_gap_mean": float(np.mean(gap[-1])),
                              "dt_lower": lower.diagnostics["dt"], "dt_upper": upper.diagnostics["dt"]})


# ---------------------------------------------------------------------------
# Seeded instance generator
# ---------------------------------------------------------------------------


def random_instance(seed: int, instance_id: int = 0, break_condition: str | None = None) -> ComparisonInstance:
    """Affine-plus-bounded-smooth instance satisfying (i)-(iv).

    ``break_condition="iii"`` makes one off-diagonal coupling weight negative,
    ``"i"`` raises the lower terminal data above the upper one somewhere.
    """
    rng = np.random.default_rng(seed)
    m0 = int(rng.integers(2, 4))
    T = float(rng.uniform(0.5, 2.0))
    xa, xb, xc = rng.normal(0, 1, m0), rng.uniform(-1, 1, m0), rng.uniform(0.5, 2, m0)
    f0, f1, fg, fw = rng.normal(0, 0.5, m0), rng.uniform(-1, 1, m0), rng.uniform(0, 0.5, m0), rng.uniform(0.5, 2, m0)
    fs = rng.uniform(0, 0.5, m0)
    r = rng.uniform(0, 1, m0)
    w = rng.uniform(0, 1, (m0, m0))
    beta = rng.uniform(0, 0.5, (m0, m0))
    np.fill_diagonal(w, 0.0)
    np.fill_diagonal(beta, 0.0)
    if break_condition == "iii":
        i, k = 0, 1
        w[i, k] = -1.0 - rng.uniform(0, 1)
        beta[i, k] = 0.0
    g0 = rng.normal(0, 0.3, m0)
    # nonnegative gaps for the dominating side
    dxi, dxi_v = rng.uniform(0, 0.5, m0), rng.uniform(0, 0.5, m0)
    df, dg = rng.uniform(0, 0.3, m0), rng.uniform(0, 0.3, m0)

    def xi(i, v):
        return xa[i] + xb[i] * np.tanh(xc[i] * v)

    def xi_up(i, v):
        return xi(i, v) + dxi[i] + dxi_v[i] * (1 + np.sin(v)) / 2

    def xi_lo(i, v):
        if break_condition == "i" and i == 0:
            return xi_up(i, v) + 0.1 * np.exp(-v * v)
        return xi(i, v)

    def F(i, v, z):
        return f0[i] + f1[i] * z + fg[i] * np.sin(fw[i] * z) + fs[i] * np.cos(v)

    def F_up(i, v, z):
        return F(i, v, z) + df[i] * (1 + np.cos(v)) / 2

    def G(v, y):
        diff = y[None, :, :] - y[:, None, :]
        out = -r[:, None] * y + np.einsum("ik,ikn->in", w, diff) + np.einsum("ik,kn->in", beta, np.tanh(y))
        return out + g0[:, None] * np.sin(v)[None, :]

    def G_up(v, y):
        return G(v, y) + dg[:, None]

    c_f = float(np.max(np.abs(f1) + fg * fw))
    c_g = float(np.max(r + 2 * np.abs(w).sum(axis=1) + beta.sum(axis=1)))
    lower = SystemSide(xi_lo, F, G, c_f, c_g)
    upper = SystemSide(xi_up, F_up, G_up, c_f, c_g + float(np.max(dg)))
    return ComparisonInstance(m0=m0, T=T, lower=lower, upper=upper, instance_id=instance_id, seed=seed)


def comparison_suite(n_instances: int = 100, base_seed: int = 0, grid: Grid1D = Grid1D(-4.0, 4.0, 161),
                     cfg: SchemeConfig = SchemeConfig(dt=0.01), break_condition: str | None = None):
    """Verdicts of ``n_instances`` seeded random instances (seed = base_seed + k)."""
    return [check_comparison(random_instance(base_seed + k, k, break_condition), grid, cfg)
            for k in range(n_instances)]


# ---------------------------------------------------------------------------
# Uniqueness and ODE-bound echoes on the discounted system
# ---------------------------------------------------------------------------


def uniqueness_gap(model: ModelSpec, grid: Grid1D, rho: float, cfg: SchemeConfig = SchemeConfig()) -> float:
    """Sup distance between the discounted fixed points reached from y = 0 and y = K_y."""
    k_y = apriori_constants(model, rho, need_k_y=True).k_y
    a = solve_discounted_stationary(model, grid, rho, cfg, initial=0.0)
    b = solve_discounted_stationary(model, grid, rho, cfg, initial=k_y)
    return float(np.max(np.abs(a.y - b.y)))


def ode_bound_excess(model: ModelSpec, grid: Grid1D, rho: float, T: float,
                     cfg: SchemeConfig = SchemeConfig(), n_times: int = 20) -> float:
    """max over t, i, v of |y(t, v)| - (K_f/rho)(1 - exp(-rho t)) for the discounted flow from 0."""
    from .oracles import discounted_ode_bound
    times = np.linspace(0.0, T, n_times + 1)
    sol = solve_finite_horizon(model, grid, 0.0, T, cfg, rho=rho, save_times=times)
    bound = discounted_ode_bound(model.driver.k_f, rho, sol.times, 0.0)
    return float(np.max(np.max(np.abs(sol.y), axis=(1, 2)) - bound))
