"""Command-line front end.

    ergodic-bsde <command> --config CFG.json --out DIR [--seed N] [--threads N] [--strict]

Exit codes: 0 success, 2 invalid model or config, 3 solver failure,
4 degenerate large-time fit, 5 statistical guard escalated under --strict.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_config, scheme_meta
from .errors import (
    DegenerateFit,
    HeavyTailWarning,
    InconclusiveBias,
    ModelValidationError,
    SolverError,
)
from .io import base_meta, read_csv, write_csv, write_json

EXIT_OK, EXIT_MODEL, EXIT_SOLVER, EXIT_FIT, EXIT_STRICT = 0, 2, 3, 4, 5


class StrictEscalation(Exception):
    pass


def _meta(cfg: ExperimentConfig, with_scheme: bool = True) -> dict:
    sm = scheme_meta(cfg) if with_scheme else {}
    return base_meta(cfg.digest, cfg.mc.seed, sm.get("grid"), sm.get("scheme")) | {"name": cfg.name}


def _ergodic(cfg: ExperimentConfig, threads: int):
    from .ergodic_solver import vanishing_discount
    e = cfg.ergodic
    return vanishing_discount(cfg.model, cfg.grid, e.rho_sequence, e.v0, cfg.scheme, e.ref_regime,
                              polish=e.polish, threads=threads)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_solve_ergodic(cfg: ExperimentConfig, out: Path, args) -> int:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        sol = _ergodic(cfg, args.threads)
    meta = _meta(cfg)
    v = cfg.grid.nodes
    write_csv(out / "ergodic_profile.csv", ["regime", "v", "y", "z"],
              ((i, v[j], sol.y[i, j], sol.z[i, j]) for i in range(sol.m0) for j in range(cfg.grid.n)), meta)
    write_csv(out / "lambda_trace.csv", ["rho", "lambda_rho"], sol.diagnostics["lambda_rho"], meta)
    diag = {"lambda": sol.lam, "lambda_extrapolated": sol.lam_extrapolated, "ref_regime": sol.ref_regime,
            "v0": sol.v0, "richardson_accepted": sol.diagnostics["richardson_accepted"],
            "bounds": sol.diagnostics["bounds"], "discounted": sol.diagnostics["discounted"],
            "newton": sol.diagnostics.get("newton"),
            "clamp_final": [d["clamp_final"] for d in sol.diagnostics["discounted"]],
            "warnings": [f"{w.category.__name__}: {w.message}" for w in caught]}
    bench = cfg.model.meta.get("benchmark")
    if bench is not None:
        win = cfg.grid.central_window(0.8)
        diag["benchmark"] = {"lambda_exact": bench.lam, "lambda_error": abs(sol.lam - bench.lam),
                             "y_error_central80": float(np.max(np.abs(sol.y[0] - bench.y(v))[win])),
                             "z_error_central80": float(np.max(np.abs(sol.z[0] - bench.z(v))[win]))}
    write_json(out / "diagnostics.json", diag, meta)
    return EXIT_OK


def load_ergodic(cfg: ExperimentConfig, directory: Path):
    """Rebuild an ErgodicSolution from a solve-ergodic output directory."""
    from .ergodic_solver import ErgodicSolution
    diag = json.loads((directory / "diagnostics.json").read_text())
    _, header, rows = read_csv(directory / "ergodic_profile.csv")
    arr = np.array(rows, dtype=float)
    m0 = int(arr[:, 0].max()) + 1
    n = arr.shape[0] // m0
    if m0 != cfg.model.m0 or n != cfg.grid.n or not np.allclose(arr[:n, 1], cfg.grid.nodes, atol=1e-12):
        raise ModelValidationError("stored ergodic profile does not match the configured grid or model",
                                   path="large_time.ergodic_input")
    return ErgodicSolution(grid=cfg.grid, y=arr[:, 2].reshape(m0, n), z=arr[:, 3].reshape(m0, n),
                           lam=float(diag["lambda"]), rho_trace=[], lam_extrapolated=float(diag["lambda_extrapolated"]),
                           ref_regime=int(diag["ref_regime"]), v0=float(diag["v0"]), diagnostics={})


def cmd_large_time(cfg: ExperimentConfig, out: Path, args) -> int:
    from .ergodic_solver import large_time_report, long_time_lambda
    lt = cfg.large_time
    if lt.ergodic_input:
        erg = load_ergodic(cfg, Path(lt.ergodic_input))
    elif lt.inline:
        erg = _ergodic(cfg, args.threads)
    else:
        raise ModelValidationError("no ergodic input and inline computation disabled",
                                   path="large_time.ergodic_input")
    if isinstance(lt.initial, str):
        if lt.initial != "ergodic":
            raise ModelValidationError("initial must be a number or 'ergodic'", path="large_time.initial")
        initial = erg.y
    else:
        initial = float(lt.initial)
    rep = large_time_report(cfg.model, cfg.grid, erg, initial, lt.T_list, cfg.scheme, window=lt.window)
    meta = _meta(cfg)
    rows = [(T, i, rep.delta_y[k, i], abs(rep.delta_y[k, i] - rep.L))
            for k, T in enumerate(rep.times) for i in range(cfg.model.m0)]
    write_csv(out / "large_time.csv", ["T", "regime", "deltaY", "residual"], rows, meta)
    slope = long_time_lambda(cfg.model, cfg.grid, *lt.long_time_T, cfg.scheme)
    fit = {"L": rep.L, "C_fit": rep.C_fit, "K_v_fit": rep.K_v_fit, "fit_quality": rep.fit_quality,
           "degenerate": rep.degenerate, "L_by_regime": rep.L_by_regime, "L_window_spread": rep.L_window_spread,
           "lambda": erg.lam, "lambda_long_time": slope, "lambda_gap": abs(slope - erg.lam),
           "residuals": rep.residuals, "times": rep.times, **rep.diagnostics}
    write_json(out / "large_time_fit.json", fit, meta)
    if rep.degenerate:
        raise DegenerateFit("residuals are below the discretization noise floor; fit skipped")
    return EXIT_OK


def _market(cfg: ExperimentConfig):
    from .mc_market import MarketSpec
    fp = cfg.fp_driver
    if fp is None:
        raise ModelValidationError("Monte Carlo commands need a forward_performance driver", path="model.driver.kind")
    m = cfg.mc
    return MarketSpec(cfg.model.factor, cfg.model.rates, fp, i0=m.i0, x0=m.x0, v0=m.v0).validate()


def _strategy(spec, name: str, cfg: ExperimentConfig):
    from .mc_market import perturbed_strategy
    if name == "perturbed":
        return perturbed_strategy(spec, cfg.mc.perturb_shift)
    return name


def cmd_simulate(cfg: ExperimentConfig, out: Path, args) -> int:
    from .mc_market import simulate_paths
    spec, m = _market(cfg), cfg.mc
    erg = _ergodic(cfg, args.threads) if spec.d == 1 else None
    n_steps = max(1, round(m.T / m.dt))
    b = simulate_paths(spec, _strategy(spec, m.strategy, cfg), erg, m.T, m.n_paths, n_steps, m.seed,
                       threads=args.threads, pi_bound=m.pi_bound)
    meta = _meta(cfg) | {"strategy": m.strategy}
    d = spec.d
    header = ["path_id", "t"] + [f"V{k}" for k in range(d)] + ["alpha", "X", "U"]
    rows = ([p, b.t[r], *b.V[p, r], b.alpha[p, r], b.X[p, r], b.U[p, r]]
            for p in range(min(m.dump_paths, b.n_paths)) for r in range(len(b.t)))
    write_csv(out / "paths.csv", header, rows, meta)
    summary = {"n_paths": b.n_paths, "n_steps": b.n_steps, "dt": b.dt, "n_jumps": int(b.jumps["time"].size),
               "mean_X_T": float(np.mean(b.X[:, -1])), "min_X": float(np.min(b.X)),
               "mean_V2": np.mean(np.sum(b.V**2, axis=-1), axis=0), "t": b.t,
               "regime_fraction_T": np.bincount(b.alpha[:, -1], minlength=spec.m0) / b.n_paths,
               **b.diagnostics}
    write_json(out / "simulate.json", summary, meta)
    return EXIT_OK


def cmd_martingale_test(cfg: ExperimentConfig, out: Path, args) -> int:
    from .mc_market import martingale_test
    spec, m = _market(cfg), cfg.mc
    erg = _ergodic(cfg, args.threads)
    rows, reports, escalate = [], {}, []
    for name in m.strategies:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            try:
                r = martingale_test(spec, erg, _strategy(spec, name, cfg), m.t, m.s, m.n_paths, m.seed, dt=m.dt,
                                    bias_constants=m.bias_constants, threads=args.threads, pi_bound=m.pi_bound,
                                    min_ess=m.min_ess)
                rows.append((m.t, m.s, name, r.delta, r.stderr, r.bias_budget, r.verdict))
                reports[name] = {"delta": r.delta, "stderr": r.stderr, "bias_budget": r.bias_budget,
                                 "verdict": r.verdict, "U0": r.diagnostics["U0"], "ess": r.diagnostics["ess"]}
            except InconclusiveBias as e:
                rows.append((m.t, m.s, name, np.nan, np.nan, np.nan, "INCONCLUSIVE"))
                reports[name] = {"verdict": "INCONCLUSIVE", "detail": str(e)}
                escalate.append(f"InconclusiveBias: {e}")
        escalate += [f"HeavyTailWarning: {w.message}" for w in caught if issubclass(w.category, HeavyTailWarning)]
    meta = _meta(cfg)
    write_csv(out / "martingale.csv", ["t", "s", "strategy", "delta", "stderr", "bias_budget", "verdict"], rows, meta)
    write_json(out / "martingale.json", {"lambda": erg.lam, "reports": reports, "guards": escalate}, meta)
    if escalate and args.strict:
        raise StrictEscalation("; ".join(escalate))
    return EXIT_OK


def cmd_growth_rate(cfg: ExperimentConfig, out: Path, args) -> int:
    from .mc_market import risk_sensitive_growth_rate
    spec, m = _market(cfg), cfg.mc
    erg = _ergodic(cfg, args.threads)
    rows, reports, escalate = [], {}, []
    for name in m.strategies:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            g = risk_sensitive_growth_rate(spec, erg, _strategy(spec, name, cfg), m.growth_T, m.n_paths, m.seed,
                                           dt=m.growth_dt, threads=args.threads, pi_bound=m.pi_bound,
                                           min_ess=m.min_ess)
        rows.append((m.growth_T, name, g.estimate, g.stderr))
        reports[name] = {"estimate": g.estimate, "stderr": g.stderr, "top_share": g.top_share,
                         "ess": g.diagnostics["ess"]}
        escalate += [f"HeavyTailWarning: {w.message}" for w in caught if issubclass(w.category, HeavyTailWarning)]
    meta = _meta(cfg)
    write_csv(out / "growth_rate.csv", ["T", "strategy", "estimate", "stderr"], rows, meta)
    write_json(out / "growth_rate.json", {"lambda": erg.lam, "reports": reports, "guards": escalate}, meta)
    if escalate and args.strict:
        raise StrictEscalation("; ".join(escalate))
    return EXIT_OK


def cmd_comparison(cfg: ExperimentConfig, out: Path, args) -> int:
    from concurrent.futures import ThreadPoolExecutor

    from .comparison_harness import check_comparison, random_instance
    from .pde_solver import Grid1D, SchemeConfig
    c = cfg.comparison
    grid = Grid1D(c.v_min, c.v_max, c.n)
    scheme = SchemeConfig(dt=c.dt)

    def one(k):
        return check_comparison(random_instance(c.base_seed + k, k, c.break_condition), grid, scheme)

    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as ex:
        verdicts = list(ex.map(one, range(c.n_instances)))
    meta = base_meta(cfg.digest, c.base_seed, asdict(grid), asdict(scheme)) | {"name": cfg.name}
    write_csv(out / "comparison.csv", ["instance_id", "seed", "verdict", "max_violation"],
              ((v.instance_id, v.seed, v.label, v.max_violation) for v in verdicts), meta)
    counts: dict = {}
    for v in verdicts:
        counts[v.label] = counts.get(v.label, 0) + 1
    write_json(out / "comparison.json", {"counts": counts}, meta)
    return EXIT_OK


COMMANDS = {
    "solve-ergodic": cmd_solve_ergodic,
    "large-time": cmd_large_time,
    "simulate": cmd_simulate,
    "martingale-test": cmd_martingale_test,
    "growth-rate": cmd_growth_rate,
    "comparison": cmd_comparison,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ergodic-bsde", description=__doc__.split("\n\n")[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override mc.seed (unsigned 64-bit)")
    p.add_argument("--threads", type=int, default=1, help="parallelism cap; results do not depend on it")
    p.add_argument("--strict", action="store_true", help="turn statistical guard warnings into exit code 5")
    return p


def _fail(out: Path, code: int, exc: BaseException) -> int:
    detail = {"exit_code": code, "error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ModelValidationError) and exc.path:
        detail["path"] = exc.path
    for attr in ("residual", "steps"):
        if hasattr(exc, attr):
            detail[attr] = getattr(exc, attr)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "error.json", detail, {})
    print(json.dumps(detail, default=str), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    if args.threads < 1:
        args.threads = 1
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ModelValidationError("seed must be an unsigned 64-bit integer", path="mc.seed")
            cfg = cfg.with_seed(args.seed)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out, args)
    except ModelValidationError as e:
        return _fail(out, EXIT_MODEL, e)
    except DegenerateFit as e:
        return _fail(out, EXIT_FIT, e)
    except SolverError as e:
        return _fail(out, EXIT_SOLVER, e)
    except StrictEscalation as e:
        return _fail(out, EXIT_STRICT, e)
    except FileNotFoundError as e:
        return _fail(out, EXIT_MODEL, e)


if __name__ == "__main__":
    sys.exit(main())
