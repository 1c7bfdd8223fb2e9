"""Ergodic triplet (y^i, z^i, lambda) by vanishing discount, and large-time analysis."""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .core_model import ModelSpec, apriori_constants
from .errors import DegenerateFit, HorizonTooShort, ModelValidationError, NonMonotoneLambda, SolverError
from .pde_solver import (
    Grid1D,
    SchemeConfig,
    bsde_operator,
    compute_z,
    solve_discounted_stationary,
    solve_finite_horizon,
)

DEFAULT_RHOS = (0.1, 0.05, 0.025, 0.0125)


@dataclass
class ErgodicSolution:
    grid: Grid1D
    y: np.ndarray  # [regime][node], one additive gauge for the whole system
    z: np.ndarray
    lam: float
    rho_trace: list  # (rho, lambda_rho, ybar grid)
    lam_extrapolated: float
    ref_regime: int
    v0: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def m0(self) -> int:
        return self.y.shape[0]

    def interp_y(self, i, v) -> np.ndarray:
        return _interp_rows(self.grid, self.y, i, v)

    def interp_z(self, i, v) -> np.ndarray:
        return _interp_rows(self.grid, self.z, i, v)

    def regauged(self, c: float) -> "ErgodicSolution":
        out = ErgodicSolution(**{**self.__dict__})
        out.y = self.y + c
        return out


def _interp_rows(grid: Grid1D, table: np.ndarray, i, v) -> np.ndarray:
    """Linear interpolation of table[i] at v; i and v broadcast, v clamped to the grid."""
    v = np.clip(np.asarray(v, dtype=float), grid.v_min, grid.v_max)
    s = (v - grid.v_min) / grid.h
    k = np.clip(np.floor(s).astype(int), 0, grid.n - 2)
    w = s - k
    i = np.asarray(i)
    return (1 - w) * table[i, k] + w * table[i, k + 1]


def interp_node(grid: Grid1D, row: np.ndarray, v: float) -> float:
    return float(_interp_rows(grid, row[None, :], 0, v))


def richardson(rhos, lams, guard: float = 0.1):
    """Linear-in-rho extrapolation to rho = 0 from the last two points.

    The guard compares with the same extrapolation from the preceding pair;
    when they disagree by more than ``guard`` times the spread of the last
    three values the smallest-rho value is returned.  Returns
    (estimate, weights over the last two points or None, accepted).
    """
    r, l = np.asarray(rhos, float), np.asarray(lams, float)
    if len(r) < 2:
        return float(l[-1]), None, False
    w = _linear_weights(r[-2], r[-1])
    est = w[0] * l[-2] + w[1] * l[-1]
    if len(r) < 3:
        return float(est), w, True
    wa = _linear_weights(r[-3], r[-2])
    est_a = wa[0] * l[-3] + wa[1] * l[-2]
    spread = float(np.ptp(l[-3:]))
    if abs(est - est_a) <= guard * spread + 1e-14:
        return float(est), w, True
    return float(l[-1]), None, False


def _linear_weights(r1: float, r2: float):
    # value at 0 of the line through (r1, l1), (r2, l2)
    return (-r2 / (r1 - r2), r1 / (r1 - r2))


def vanishing_discount(model: ModelSpec, grid: Grid1D, rho_sequence=DEFAULT_RHOS, v0: float = 0.0,
                       cfg: SchemeConfig = SchemeConfig(), ref_regime: int | None = None,
                       polish: bool = True, threads: int = 1) -> ErgodicSolution:
    """Solve the discounted problems, extract lambda, and return the ergodic triplet.

    lambda_rho = rho * y^{ref,rho}(v0) is extrapolated to rho = 0.  With
    ``polish`` the extrapolated pair seeds a Newton solve of the discrete
    ergodic system on the same grid, which makes lambda and y exactly
    consistent with the parabolic scheme.
    """
    rhos = [float(r) for r in rho_sequence]
    if len(rhos) < 1 or any(r <= 0 for r in rhos) or any(a <= b for a, b in zip(rhos, rhos[1:])):
        raise ModelValidationError("rho_sequence must be positive and strictly decreasing")
    if not grid.v_min <= v0 <= grid.v_max:
        raise ModelValidationError("v0 must lie inside the grid")
    ref = model.m0 - 1 if ref_regime is None else int(ref_regime)

    def one(rho):
        return solve_discounted_stationary(model, grid, rho, cfg)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            sols = list(ex.map(one, rhos))
    else:
        sols = [one(r) for r in rhos]

    trace, lam_rho, ybars, disc_checks = [], [], [], []
    for rho, s in zip(rhos, sols):
        yref = interp_node(grid, s.y[ref], v0)
        ybar = s.y - yref
        lam_rho.append(rho * yref)
        ybars.append(ybar)
        trace.append((rho, rho * yref, ybar))
        disc_checks.append(_discounted_bounds(model, rho, s))

    if len(rhos) >= 3:
        d1, d2 = abs(lam_rho[-2] - lam_rho[-3]), abs(lam_rho[-1] - lam_rho[-2])
        if d2 > d1 + 1e-12:
            warnings.warn(f"lambda_rho not contracting: increments {d1:.3e}, {d2:.3e}", NonMonotoneLambda)
    lam_x, w, accepted = richardson(rhos, lam_rho)
    y_init = w[0] * ybars[-2] + w[1] * ybars[-1] if w is not None else ybars[-1]

    diagnostics = {"richardson_accepted": accepted, "discounted": disc_checks,
                   "lambda_rho": list(zip(rhos, lam_rho)),
                   "stationary_steps": [s.steps for s in sols]}
    if polish:
        y, lam, info = solve_ergodic_newton(model, grid, cfg, y_init, lam_x, ref, grid.index_of(v0))
        diagnostics["newton"] = info
    else:
        y, lam = y_init, lam_x
    y = y - interp_node(grid, y[ref], 0.0)
    z = compute_z(y, model.factor.kappa, grid.h)
    sol = ErgodicSolution(grid=grid, y=y, z=z, lam=float(lam), rho_trace=trace, lam_extrapolated=lam_x,
                          ref_regime=ref, v0=v0, diagnostics=diagnostics)
    sol.diagnostics["bounds"] = ergodic_bounds(model, sol)
    return sol


def _discounted_bounds(model: ModelSpec, rho: float, s) -> dict:
    c = apriori_constants(model, rho)
    y, z = s.y, s.z
    diff = float(np.max(np.abs(y[:, None, :] - y[None, :, :]))) if model.m0 > 1 else 0.0
    return {"rho": rho, "sup_y": float(np.max(np.abs(y))), "K_y": c.k_y,
            "sup_z": float(np.max(np.abs(z))), "K_z": c.k_z,
            "sup_diff": diff, "K_diff": c.k_diff,
            "clamp_final": int(s.diagnostics.get("clamp_count_final", 0)),
            "steps": s.steps, "residual": s.residual}


def ergodic_bounds(model: ModelSpec, sol: ErgodicSolution) -> dict:
    c = apriori_constants(model, 0.0)
    v = sol.grid.nodes
    y = sol.y
    diff = float(np.max(np.abs(y[:, None, :] - y[None, :, :]))) if model.m0 > 1 else 0.0
    return {"sup_z": float(np.max(np.abs(sol.z))), "K_z": c.k_z,
            "sup_diff": diff, "K_diff": c.k_diff,
            "C_y": float(np.max(np.abs(y) / (1 + np.abs(v))))}


def solve_ergodic_newton(model: ModelSpec, grid: Grid1D, cfg: SchemeConfig, y_init: np.ndarray,
                         lam_init: float, ref: int, j0: int, tol: float = 1e-12, max_iter: int = 30):
    """Newton's method for A y + F(y) + G(y) = lambda with y^{ref}(v_{j0}) = 0.

    The Jacobian is assembled by finite differences with a 3-colouring of
    the nodes per regime (each interior residual depends on its two
    neighbours and on the other regimes at the same node).
    """
    op = bsde_operator(model, grid, cfg)
    m0, n = model.m0, grid.n
    ni = n - 2
    if not 1 <= j0 <= n - 2:
        raise ModelValidationError("reference node must be interior")
    g0 = j0 - 1

    def full(yi):
        y = np.empty((m0, n))
        y[:, 1:-1] = yi
        return op.fill_boundary(y)

    def residual(yi, lam):
        return op.stationary_residual(full(yi)) - lam

    yi = np.array(y_init, dtype=float)[:, 1:-1].copy()
    yi -= yi[ref, g0]
    lam = float(lam_init)
    nunk = m0 * ni + 1
    hist = []
    for it in range(max_iter):
        r = residual(yi, lam)
        err = float(np.max(np.abs(r)))
        hist.append(err)
        # stop at tol, or once the residual has hit its roundoff floor
        if err < tol or (len(hist) > 1 and err < 1e3 * tol and err > 0.5 * hist[-2]):
            break
        rows, cols, vals = [], [], []
        eps = 1e-7 * max(1.0, float(np.max(np.abs(yi))))
        for reg in range(m0):
            for col in range(3):
                pert = yi.copy()
                idx = np.arange(col, ni, 3)
                pert[reg, idx] += eps
                dr = (residual(pert, lam) - r) / eps
                for jj in (-1, 0, 1):
                    tgt = idx + jj
                    ok = (tgt >= 0) & (tgt < ni)
                    src, tgt = idx[ok], tgt[ok]
                    for i in range(m0):
                        if i != reg and jj != 0:
                            continue
                        rows.append(i * ni + tgt)
                        cols.append(reg * ni + src)
                        vals.append(dr[i, tgt])
        rows.append(np.arange(m0 * ni))
        cols.append(np.full(m0 * ni, nunk - 1))
        vals.append(-np.ones(m0 * ni))
        rows.append(np.array([nunk - 1]))
        cols.append(np.array([ref * ni + g0]))
        vals.append(np.array([1.0]))
        J = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(nunk, nunk))
        rhs = -np.concatenate([r.ravel(), [yi[ref, g0]]])
        du = spsolve(J.tocsc(), rhs)
        if not np.all(np.isfinite(du)):
            raise SolverError("Newton step is not finite")
        yi = yi + du[:-1].reshape(m0, ni)
        lam += float(du[-1])
    else:
        raise SolverError(f"Newton polish did not converge: residual history {hist}")
    y = full(yi)
    return y, lam, {"iterations": len(hist) - 1, "residual": hist[-1], "clamp_final": op.last_clamp}


# ---------------------------------------------------------------------------
# Long-time behaviour
# ---------------------------------------------------------------------------


def long_time_lambda(model: ModelSpec, grid: Grid1D, T1: float, T2: float, cfg: SchemeConfig = SchemeConfig(),
                     initial=0.0, window: float = 0.2, tol: float = 1e-4) -> float:
    """Slope in T of y(T, v) over [T1, T2], averaged over regimes and a central window."""
    if not 0 < T1 < T2:
        raise ModelValidationError("need 0 < T1 < T2")
    tm = 0.5 * (T1 + T2)
    sol = solve_finite_horizon(model, grid, initial, T2, cfg, save_times=[T1, tm, T2])
    win = grid.central_window(window)
    y1, ym, y2 = (sol.y[k][:, win] for k in range(3))
    t1, tmid, t2 = sol.times
    slope = float(np.mean(y2 - y1) / (t2 - t1))
    late = float(np.mean(y2 - ym) / (t2 - tmid))
    if abs(slope - late) > tol:
        raise HorizonTooShort(f"two-point slope {slope:.6g} vs late slope {late:.6g}")
    return slope


@dataclass
class LargeTimeReport:
    L: float
    K_v_fit: float
    C_fit: float
    fit_quality: float
    times: np.ndarray
    delta_y: np.ndarray  # [time][regime] at the probe node
    residuals: np.ndarray  # per-T max over regimes of |deltaY - L|
    L_by_regime: np.ndarray
    L_window_spread: float
    degenerate: bool
    diagnostics: dict = field(default_factory=dict)


def initial_data_constants(grid: Grid1D, h: np.ndarray) -> tuple[float, float]:
    """(K_h, C_h): sup norm and grid Lipschitz constant of initial data."""
    h = np.asarray(h, dtype=float)
    return float(np.max(np.abs(h))), float(np.max(np.abs(np.diff(h, axis=-1)))) / grid.h


def large_time_report(model: ModelSpec, grid: Grid1D, ergodic: ErgodicSolution, initial, T_list,
                      cfg: SchemeConfig = SchemeConfig(), window: float = 0.2,
                      noise_floor: float = 1e-10) -> LargeTimeReport:
    """deltaY(T, v) = y(T, v) - lambda T - y(v) at the grid centre; L and an exponential fit."""
    T_list = np.sort(np.asarray(T_list, dtype=float))
    if len(T_list) < 3:
        raise ModelValidationError("need at least three horizons")
    if ergodic.grid != grid:
        raise ModelValidationError("ergodic solution lives on a different grid")
    from .pde_solver import _initial_state
    h0 = _initial_state(grid, model.m0, initial)
    k_h, c_h = initial_data_constants(grid, h0)
    sol = solve_finite_horizon(model, grid, h0, float(T_list[-1]), cfg, save_times=T_list)
    times = sol.times
    dY = sol.y - ergodic.lam * times[:, None, None] - ergodic.y[None]
    jc = grid.n // 2
    probe = dY[:, :, jc]
    L_by_regime = probe[-1].copy()
    L = float(np.mean(L_by_regime))
    win = grid.central_window(window)
    L_window_spread = float(np.ptp(dY[-1][:, win]))
    residuals = np.max(np.abs(probe - L), axis=1)
    fit_T, fit_r = times[:-1], residuals[:-1]
    degenerate = bool(np.max(fit_r) < noise_floor)
    if degenerate:
        k_v = c_fit = q = np.nan
    else:
        keep = fit_r > noise_floor
        if keep.sum() < 2:
            raise DegenerateFit("fewer than two residuals above the noise floor")
        A = np.vstack([np.ones(keep.sum()), -fit_T[keep]]).T
        logr = np.log(fit_r[keep])
        coef, *_ = np.linalg.lstsq(A, logr, rcond=None)
        pred = A @ coef
        ss_res = float(np.sum((logr - pred) ** 2))
        ss_tot = float(np.sum((logr - logr.mean()) ** 2))
        q = 1 - ss_res / ss_tot if ss_tot > 0 else 0.0
        c_fit, k_v = float(np.exp(coef[0])), float(coef[1])
    return LargeTimeReport(L=L, K_v_fit=k_v, C_fit=c_fit, fit_quality=q, times=times, delta_y=probe,
                           residuals=residuals, L_by_regime=L_by_regime, L_window_spread=L_window_spread,
                           degenerate=degenerate,
                           diagnostics={"K_h": k_h, "C_h": c_h, "dt": sol.diagnostics["dt"],
                                        "probe_v": float(grid.nodes[jc]), "clamp_count": sol.diagnostics["clamp_count"]})
