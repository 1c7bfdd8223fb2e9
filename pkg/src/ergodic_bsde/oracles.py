"""Independent reference computations for tests.

Everything here is deliberately plain (grid search, quadrature, explicit
formulas) and imports nothing from the solver modules.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, linalg

METHODS = ("closed_form", "grid_search", "finite_difference", "ode_quadrature")


@dataclass(frozen=True)
class OracleReport:
    name: str
    inputs_digest: str
    reference: object
    method: str
    tolerance: float
    details: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown oracle method {self.method!r}")


def digest(obj) -> str:
    """Short stable digest of JSON-able inputs (arrays are hashed by their bytes)."""
    h = hashlib.sha256()

    def feed(x):
        if isinstance(x, np.ndarray):
            h.update(np.ascontiguousarray(x, dtype=float).tobytes())
        else:
            h.update(json.dumps(x, sort_keys=True, default=str).encode())

    if isinstance(obj, (list, tuple)):
        for x in obj:
            feed(x)
    else:
        feed(obj)
    return h.hexdigest()[:16]


def fd_gradient_check(y, kappa: float, z_exact, h: float, exclude=None) -> OracleReport:
    """Max node-wise gap between the 3-point stencil gradient of y and an analytic z.

    ``exclude`` is an optional boolean mask of nodes left out (e.g. a kink).
    """
    y = np.asarray(y, dtype=float)
    g = np.empty_like(y)
    g[1:-1] = (y[2:] - y[:-2]) / (2 * h)
    g[0] = (-3 * y[0] + 4 * y[1] - y[2]) / (2 * h)
    g[-1] = (3 * y[-1] - 4 * y[-2] + y[-3]) / (2 * h)
    err = np.abs(kappa * g - np.asarray(z_exact, dtype=float))
    skipped = []
    if exclude is not None:
        skipped = np.flatnonzero(exclude).tolist()
        err = np.where(exclude, 0.0, err)
    return OracleReport("fd_gradient_check", digest([y, np.asarray(z_exact)]), float(np.max(err)),
                        "finite_difference", 2 * h * h, {"excluded_nodes": skipped})


def box_grid(lower, upper, resolution: float, clip: float = 5.0) -> np.ndarray:
    """Points of a regular grid with spacing ``resolution`` over the box intersected with [-clip, clip]^d."""
    lower = np.maximum(np.atleast_1d(np.asarray(lower, dtype=float)), -clip)
    upper = np.minimum(np.atleast_1d(np.asarray(upper, dtype=float)), clip)
    axes = []
    for lo, hi in zip(lower, upper):
        k = max(1, int(round((hi - lo) / resolution)))
        axes.append(np.linspace(lo, hi, k + 1) if hi > lo else np.array([lo]))
    return np.array(list(itertools.product(*axes)))


def sup_search(payoff: Callable, lower, upper, resolution: float = 1e-3) -> OracleReport:
    """Brute-force max of ``payoff`` over a box (pass equal bounds for a fixed axis).

    ``payoff`` maps an (n, d) array of candidates to n values.
    """
    pts = box_grid(lower, upper, resolution)
    vals = np.asarray(payoff(pts), dtype=float)
    k = int(np.argmax(vals))
    return OracleReport("sup_search", digest([np.asarray(lower, float), np.asarray(upper, float), resolution]),
                        (pts[k], float(vals[k])), "grid_search", resolution, {"n_points": len(pts)})


def discounted_ode_bound(k_f: float, rho: float, m, t):
    """(K_f/rho)(1 - exp(-rho (m - t))), the solution of Y' = -(K_f - rho Y), Y(m) = 0."""
    m, t = np.asarray(m, dtype=float), np.asarray(t, dtype=float)
    return k_f / rho * -np.expm1(-rho * (m - t))


def discounted_ode_bound_numeric(k_f: float, rho: float, m: float, t: float) -> float:
    """Same bound by integrating the ODE backward from m with a stiff-safe solver."""
    if m == t:
        return 0.0
    sol = integrate.solve_ivp(lambda s, y: -(k_f - rho * y), (m, t), [0.0], rtol=1e-12, atol=1e-14,
                              method="DOP853")
    return float(sol.y[0, -1])


def normal_cdf_quad(v: float) -> float:
    """N(v) by quadrature of the Gaussian density."""
    if v < 0:
        return 1.0 - normal_cdf_quad(-v)
    val, _ = integrate.quad(lambda u: np.exp(-0.5 * u * u), 0.0, v, epsabs=1e-14, epsrel=1e-13)
    return 0.5 + val / np.sqrt(2 * np.pi)


def chain_marginal(q, i0: int, T: float) -> np.ndarray:
    """Row i0 of exp(Q T)."""
    return linalg.expm(np.asarray(q, dtype=float) * T)[i0]


def chain_occupation(q, i0: int, T: float, n_nodes: int = 2001) -> np.ndarray:
    """Expected fraction of [0, T] spent in each state, (1/T) int_0^T exp(Q s)[i0] ds by Simpson's rule."""
    s = np.linspace(0.0, T, n_nodes)
    q = np.asarray(q, dtype=float)
    rows = np.array([linalg.expm(q * u)[i0] for u in s])
    return integrate.simpson(rows, x=s, axis=0) / T


def merton_growth(delta: float, theta: float, pi: float) -> float:
    """Exact (1/T) ln E[X_T^delta] - (1/T) ln x0^delta for constant theta and constant pi."""
    return delta * pi * theta - 0.5 * delta * (1 - delta) * pi * pi
