"""JSON experiment configuration.

Every parse error is a ModelValidationError whose ``path`` names the offending
field, e.g. ``model.rates[0]`` or ``grid.n``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core_model import FactorModel, ModelSpec, ou_factor, validate_model, validate_rate_matrix
from .drivers import (
    ClosedFormBenchmark,
    ConstraintSet,
    ForwardPerformanceDriver,
    TanhTheta,
    constant_driver,
    forward_performance_model,
)
from .ergodic_solver import DEFAULT_RHOS
from .errors import ModelValidationError
from .pde_solver import Grid1D, SchemeConfig


@dataclass(frozen=True)
class ErgodicBlock:
    rho_sequence: tuple = DEFAULT_RHOS
    v0: float = 0.0
    ref_regime: int | None = None
    polish: bool = True


@dataclass(frozen=True)
class LargeTimeBlock:
    T_list: tuple = tuple(float(t) for t in range(4, 21, 2))
    initial: object = 0.0  # number, or "ergodic" to start at the ergodic profile
    window: float = 0.2
    inline: bool = True
    ergodic_input: str | None = None
    long_time_T: tuple = (10.0, 20.0)


@dataclass(frozen=True)
class MCBlock:
    T: float = 1.0
    n_paths: int = 200_000
    dt: float = 0.01
    seed: int = 0
    strategy: str = "optimal"
    strategies: tuple = ("optimal", "zero", "perturbed")
    t: float = 0.0
    s: float = 1.0
    i0: int = 0
    x0: float = 1.0
    v0: float = 0.0
    perturb_shift: float = 0.2
    pi_bound: float | None = None
    bias_constants: tuple = (0.05, 0.05)
    growth_T: float = 40.0
    growth_dt: float = 0.05
    dump_paths: int = 20
    min_ess: float = 1000.0


@dataclass(frozen=True)
class ComparisonBlock:
    n_instances: int = 100
    base_seed: int = 0
    break_condition: str | None = None
    v_min: float = -4.0
    v_max: float = 4.0
    n: int = 161
    dt: float = 0.01


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    model: ModelSpec
    grid: Grid1D
    scheme: SchemeConfig
    ergodic: ErgodicBlock
    large_time: LargeTimeBlock
    mc: MCBlock
    comparison: ComparisonBlock
    outputs: dict
    raw: dict = field(repr=False, compare=False, default_factory=dict)

    @property
    def digest(self) -> str:
        return config_digest(self.raw)

    @property
    def fp_driver(self) -> ForwardPerformanceDriver | None:
        return self.model.meta.get("fp_driver")

    def with_seed(self, seed: int) -> "ExperimentConfig":
        raw = json.loads(json.dumps(self.raw))
        raw.setdefault("mc", {})["seed"] = int(seed)
        return parse_config(raw)


def config_digest(raw: dict) -> str:
    return hashlib.sha256(json.dumps(raw, sort_keys=True, separators=(",", ":")).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Field helpers
# ---------------------------------------------------------------------------


def _get(doc: dict, key: str, path: str, default=None, required: bool = False):
    if not isinstance(doc, dict):
        raise ModelValidationError(f"expected an object at {path or 'top level'}", path=path or None)
    if key not in doc:
        if required:
            raise ModelValidationError(f"missing field {key!r}", path=_join(path, key))
        return default
    return doc[key]


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _num(x, path: str, positive: bool = False, integer: bool = False):
    if isinstance(x, bool) or not isinstance(x, (int, float)) or not np.isfinite(x):
        raise ModelValidationError(f"expected a finite number, got {x!r}", path=path)
    if integer and int(x) != x:
        raise ModelValidationError(f"expected an integer, got {x!r}", path=path)
    if positive and not x > 0:
        raise ModelValidationError(f"expected a positive number, got {x!r}", path=path)
    return int(x) if integer else float(x)


def _vec(x, path: str) -> tuple:
    if isinstance(x, (int, float)) and not isinstance(x, bool):
        x = [x]
    if not isinstance(x, list) or not x:
        raise ModelValidationError("expected a non-empty list of numbers", path=path)
    return tuple(_num(v, f"{path}[{k}]") for k, v in enumerate(x))


def _block(cls, doc, path: str, converters: dict):
    if doc is None:
        return cls()
    if not isinstance(doc, dict):
        raise ModelValidationError("expected an object", path=path)
    known = set(cls.__dataclass_fields__)
    for key in doc:
        if key not in known:
            raise ModelValidationError(f"unknown field {key!r}", path=_join(path, key))
    kwargs = {}
    for key, val in doc.items():
        conv = converters.get(key)
        kwargs[key] = conv(val, _join(path, key)) if conv else val
    try:
        return cls(**kwargs)
    except ModelValidationError as e:
        raise ModelValidationError(str(e), path=e.path or path) from None


# ---------------------------------------------------------------------------
# Model block
# ---------------------------------------------------------------------------


def _parse_rates(doc, path: str):
    if not isinstance(doc, list) or not doc or not all(isinstance(r, list) for r in doc):
        raise ModelValidationError("rates must be a square list of lists", path=path)
    for i, row in enumerate(doc):
        for k, x in enumerate(row):
            _num(x, f"{path}[{i}][{k}]")
    try:
        return validate_rate_matrix(doc)
    except ModelValidationError as e:
        raise type(e)(str(e), path=f"{path}{e.path or ''}") from None


def _parse_factor(doc, path: str) -> FactorModel:
    kind = _get(doc, "kind", path, "ou")
    if kind != "ou":
        raise ModelValidationError(f"unknown factor kind {kind!r}", path=_join(path, "kind"))
    c_eta = _num(_get(doc, "c_eta", path, required=True), _join(path, "c_eta"), positive=True)
    d = _num(_get(doc, "d", path, 1), _join(path, "d"), integer=True)
    if d not in (1, 2):
        raise ModelValidationError("d must be 1 or 2", path=_join(path, "d"))
    kappa = _get(doc, "kappa", path)
    if kappa is not None:
        kappa = np.array(kappa, dtype=float).reshape(d, d)
    return ou_factor(c_eta, d=d, kappa=kappa)


def _parse_constraint(doc, path: str, d: int) -> ConstraintSet:
    kind = _get(doc, "kind", path, required=True)
    try:
        if kind in ("full", "full_space"):
            return ConstraintSet.full(d)
        if kind == "interval":
            return ConstraintSet.interval(_num(_get(doc, "lower", path, required=True), _join(path, "lower")),
                                          _num(_get(doc, "upper", path, required=True), _join(path, "upper")))
        if kind == "box":
            return ConstraintSet.box(_vec(_get(doc, "lower", path, required=True), _join(path, "lower")),
                                     _vec(_get(doc, "upper", path, required=True), _join(path, "upper")))
        if kind in ("subspace", "subspace_axis"):
            return ConstraintSet.subspace([bool(x) for x in _get(doc, "mask", path, required=True)])
    except ModelValidationError as e:
        raise ModelValidationError(str(e), path=e.path or path) from None
    raise ModelValidationError(f"unknown constraint kind {kind!r}", path=_join(path, "kind"))


def _parse_fp(doc, path: str, d: int) -> ForwardPerformanceDriver:
    delta = _num(_get(doc, "delta", path, required=True), _join(path, "delta"))
    thetas = _get(doc, "theta", path, required=True)
    sets = _get(doc, "constraints", path, required=True)
    if not isinstance(thetas, list) or not isinstance(sets, list):
        raise ModelValidationError("theta and constraints must be lists (one entry per regime)", path=path)
    theta = []
    for k, th in enumerate(thetas):
        p = f"{path}.theta[{k}]"
        a = _vec(_get(th, "a", p, required=True), _join(p, "a"))
        b = _vec(_get(th, "b", p, [0.0] * len(a)), _join(p, "b"))
        if len(a) != d or len(b) != d:
            raise ModelValidationError(f"theta components must have length {d}", path=p)
        theta.append(TanhTheta(a, b))
    cons = tuple(_parse_constraint(c, f"{path}.constraints[{k}]", d) for k, c in enumerate(sets))
    try:
        return ForwardPerformanceDriver(delta, tuple(theta), cons)
    except ModelValidationError as e:
        raise ModelValidationError(str(e), path=path) from None


def parse_model(doc, path: str = "model") -> ModelSpec:
    drv_doc = _get(doc, "driver", path, required=True)
    dpath = _join(path, "driver")
    kind = _get(drv_doc, "kind", dpath, required=True)
    if kind == "benchmark":
        variant = _get(drv_doc, "variant", dpath, required=True)
        try:
            bench = ClosedFormBenchmark(variant)
        except ModelValidationError as e:
            raise ModelValidationError(str(e), path=_join(dpath, "variant")) from None
        rates = _get(doc, "rates", path)
        if rates is not None:
            rm = _parse_rates(rates, _join(path, "rates"))
            if rm.m0 != 1:
                raise ModelValidationError("benchmarks have a single regime", path=_join(path, "rates"))
        model = bench.model()
        return ModelSpec(model.factor, model.driver, model.rates, borderline=True, name=model.name,
                         meta={"benchmark": bench})
    rates = _parse_rates(_get(doc, "rates", path, required=True), _join(path, "rates"))
    factor = _parse_factor(_get(doc, "factor", path, required=True), _join(path, "factor"))
    name = _get(doc, "name", path, "")
    if kind == "constant":
        c = _num(_get(drv_doc, "c", dpath, required=True), _join(dpath, "c"))
        model = ModelSpec(factor, constant_driver(c, rates.m0, factor.d), rates, name=name)
        return _validated(model, path)
    if kind == "forward_performance":
        fp = _parse_fp(drv_doc, dpath, factor.d)
        if fp.m0 != rates.m0:
            raise ModelValidationError(f"driver has {fp.m0} regimes, rates have {rates.m0}", path=dpath)
        try:
            return forward_performance_model(fp, factor, rates.q, name=name)
        except ModelValidationError as e:
            raise type(e)(str(e), path=e.path or path) from None
    raise ModelValidationError(f"unknown driver kind {kind!r}", path=_join(dpath, "kind"))


def _validated(model: ModelSpec, path: str) -> ModelSpec:
    try:
        return validate_model(model)
    except ModelValidationError as e:
        raise type(e)(str(e), path=e.path or path) from None


# ---------------------------------------------------------------------------
# Whole document
# ---------------------------------------------------------------------------


def _tuple_of_numbers(x, path):
    return _vec(x, path)


def parse_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ModelValidationError("config must be a JSON object")
    known = {"name", "model", "grid", "scheme", "ergodic", "large_time", "mc", "comparison", "outputs"}
    for key in raw:
        if key not in known:
            raise ModelValidationError(f"unknown top-level field {key!r}", path=key)
    model = parse_model(_get(raw, "model", "", required=True))
    grid = _block(Grid1D, _get(raw, "grid", ""), "grid",
                  {"v_min": _num, "v_max": _num, "n": lambda x, p: _num(x, p, integer=True)})
    scheme = _block(SchemeConfig, _get(raw, "scheme", ""), "scheme",
                    {"dt": _num, "theta_scheme": _num, "stationarity_tol": _num,
                     "max_steps": lambda x, p: _num(x, p, positive=True, integer=True)})
    ergodic = _block(ErgodicBlock, _get(raw, "ergodic", ""), "ergodic",
                     {"rho_sequence": _tuple_of_numbers, "v0": _num})
    large = _block(LargeTimeBlock, _get(raw, "large_time", ""), "large_time",
                   {"T_list": _tuple_of_numbers, "window": _num, "long_time_T": _tuple_of_numbers})
    int_pos = lambda x, p: _num(x, p, positive=True, integer=True)  # noqa: E731
    mc = _block(MCBlock, _get(raw, "mc", ""), "mc",
                {"T": _num, "n_paths": int_pos, "dt": _num, "seed": lambda x, p: _num(x, p, integer=True),
                 "strategies": lambda x, p: tuple(x), "bias_constants": _tuple_of_numbers,
                 "growth_T": _num, "growth_dt": _num, "i0": lambda x, p: _num(x, p, integer=True),
                 "t": _num, "s": _num, "x0": _num, "v0": _num, "perturb_shift": _num, "min_ess": _num,
                 "dump_paths": lambda x, p: _num(x, p, integer=True)})
    comp = _block(ComparisonBlock, _get(raw, "comparison", ""), "comparison",
                  {"n_instances": int_pos, "base_seed": lambda x, p: _num(x, p, integer=True)})
    if not 0 <= mc.seed < 2**64:
        raise ModelValidationError("seed must be an unsigned 64-bit integer", path="mc.seed")
    if not 0 <= mc.i0 < model.m0:
        raise ModelValidationError("initial regime out of range", path="mc.i0")
    if ergodic.ref_regime is not None and not 0 <= ergodic.ref_regime < model.m0:
        raise ModelValidationError("reference regime out of range", path="ergodic.ref_regime")
    outputs = _get(raw, "outputs", "", {}) or {}
    return ExperimentConfig(name=str(_get(raw, "name", "", model.name or "experiment")), model=model, grid=grid,
                            scheme=scheme, ergodic=ergodic, large_time=large, mc=mc, comparison=comp,
                            outputs=outputs, raw=raw)


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ModelValidationError(f"invalid JSON: {e}") from None
    return parse_config(raw)


def scheme_meta(cfg: ExperimentConfig) -> dict:
    return {"grid": asdict(cfg.grid), "scheme": asdict(cfg.scheme)}
