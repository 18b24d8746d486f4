"""Run configuration: one JSON file describing grid, time, model and solver.

Example (all sections except ``time.tau`` have defaults)::

    {
      "grid": {"dimension": 1, "resolution": 65, "extents": [[0, 1]]},
      "time": {"T": 1.0, "tau": 0.005},
      "params": {"mu": 1, "nu": 1, "eps": 0.5, "C_emb": "interval"},
      "bundle": {"name": "default", "delta_star": 1.0},
      "initial": {"eta": {"shape": "sine", "offset": 0.5, "amplitude": 0.25, "wavenumber": [1]},
                  "theta": {"csv": "theta0.csv"}},
      "target": {"eta": "uncontrolled", "theta": "uncontrolled"},
      "controls": {"u": 0.0, "v": 0.0},
      "box": {"lower": -1, "upper": 1},
      "optimizer": {"tol": 1e-6, "max_iter": 500},
      "eps_list": [0.5, 0.25],
      "gradcheck": {"delta": 1e-4, "tolerance": 1e-3},
      "check": {"criteria": ["A1", "A2"]},
      "seed": 0
    }

Field specs are a number (constant), ``{"shape": "constant", "value": c}``,
``{"shape": "gaussian-bump", "center": [...], "width": w, "amplitude": A,
"offset": b}`` (``b + A exp(-|x - center|^2 / (2 w^2))``),
``{"shape": "sine", "offset": b, "amplitude": A, "wavenumber": [k...],
"phase": p}`` (``b + A prod_j sin(2 pi k_j x_j + p)``) or ``{"csv": path}``
with header ``x[,y],value`` listing the grid nodes in order.  Relative CSV
paths are resolved against the config file's directory.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .control import OptimizerOptions
from .experiments import CRITERIA, CheckSettings
from .fem import SpatialGrid, TimeGrid, build_grid
from .io import read_field_csv
from .kernel import BoxConstraint, NonlinearityBundle, default_bundle, tabulated_bundle
from .params import ProblemParams, interval_embedding_constant


class ConfigError(ValueError):
    """Invalid configuration; ``where`` names the offending entry."""

    def __init__(self, where: str, message: str):
        super().__init__(f"{where}: {message}")
        self.where = where
        self.message = message


SHAPES = ("constant", "gaussian-bump", "sine")


@dataclass
class RunConfig:
    grid: SpatialGrid
    tgrid: TimeGrid
    params: ProblemParams
    bundle: NonlinearityBundle
    initial: dict
    target: dict
    controls: dict
    box: BoxConstraint
    optimizer: OptimizerOptions
    eps_list: list[float]
    gradcheck: dict
    check: CheckSettings
    criteria: list[str]
    seed: int
    output: str | None
    resolved: dict = field(default_factory=dict)
    source: str = ""


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _expect_keys(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ConfigError(where, f"expected an object, got {type(obj).__name__}")
    extra = sorted(set(obj) - set(allowed))
    if extra:
        raise ConfigError(where, f"unknown key(s) {', '.join(extra)}; allowed: {', '.join(sorted(allowed))}")


def _number(obj, key, where, default=None, positive=False, nonneg=False):
    if key not in obj:
        if default is None:
            raise ConfigError(f"{where}.{key}", "missing required value")
        return default
    val = obj[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{where}.{key}", f"expected a number, got {val!r}")
    val = float(val)
    if not math.isfinite(val):
        raise ConfigError(f"{where}.{key}", "must be finite")
    if positive and not val > 0:
        raise ConfigError(f"{where}.{key}", f"must be positive, got {val}")
    if nonneg and val < 0:
        raise ConfigError(f"{where}.{key}", f"must be nonnegative, got {val}")
    return val


def _vector(val, n, where):
    if isinstance(val, (int, float)) and not isinstance(val, bool):
        return [float(val)] * n
    if not isinstance(val, list) or len(val) != n or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in val
    ):
        raise ConfigError(where, f"expected a number or a list of {n} numbers, got {val!r}")
    return [float(v) for v in val]


def evaluate_field(spec, grid: SpatialGrid, where: str, base: Path) -> np.ndarray:
    """Nodal values of a field spec on ``grid``."""
    X = grid.nodes
    d = grid.dim
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        return np.full(grid.n_nodes, float(spec))
    if not isinstance(spec, dict):
        raise ConfigError(where, f"expected a number or a field object, got {spec!r}")
    if "csv" in spec:
        _expect_keys(spec, {"csv"}, where)
        path = Path(spec["csv"])
        if not path.is_absolute():
            path = base / path
        if not path.exists():
            raise ConfigError(f"{where}.csv", f"file not found: {path}")
        try:
            coords, values = read_field_csv(path)
        except (ValueError, OSError) as exc:
            raise ConfigError(f"{where}.csv", str(exc)) from exc
        if coords.shape != X.shape or not np.allclose(coords, X, atol=1e-9, rtol=0):
            raise ConfigError(f"{where}.csv", "node coordinates do not match the grid (same order required)")
        if not np.all(np.isfinite(values)):
            raise ConfigError(f"{where}.csv", "values must be finite")
        return values.astype(float)
    shape = spec.get("shape")
    if shape == "constant":
        _expect_keys(spec, {"shape", "value"}, where)
        return np.full(grid.n_nodes, _number(spec, "value", where))
    if shape == "gaussian-bump":
        _expect_keys(spec, {"shape", "center", "width", "amplitude", "offset"}, where)
        c = np.array(_vector(spec.get("center", 0.5), d, f"{where}.center"))
        w = _number(spec, "width", where, default=0.1, positive=True)
        A = _number(spec, "amplitude", where, default=1.0)
        b = _number(spec, "offset", where, default=0.0)
        return b + A * np.exp(-np.sum((X - c) ** 2, axis=1) / (2 * w**2))
    if shape == "sine":
        _expect_keys(spec, {"shape", "amplitude", "offset", "wavenumber", "phase"}, where)
        k = np.array(_vector(spec.get("wavenumber", 1.0), d, f"{where}.wavenumber"))
        A = _number(spec, "amplitude", where, default=1.0)
        b = _number(spec, "offset", where, default=0.0)
        ph = _number(spec, "phase", where, default=0.0)
        return b + A * np.prod(np.sin(2 * np.pi * k * X + ph), axis=1)
    raise ConfigError(f"{where}.shape", f"expected one of {', '.join(SHAPES)} or a 'csv' entry, got {shape!r}")


# ---------------------------------------------------------------------------
# sections
# ---------------------------------------------------------------------------


def _grid(raw) -> SpatialGrid:
    _expect_keys(raw, {"dimension", "resolution", "extents"}, "grid")
    dim = raw.get("dimension", 1)
    if dim not in (1, 2) or isinstance(dim, bool):
        raise ConfigError("grid.dimension", f"must be 1 or 2, got {dim!r}")
    res = raw.get("resolution", 65)
    if isinstance(res, int) and not isinstance(res, bool):
        res = [res] * dim
    if not (isinstance(res, list) and len(res) == dim and all(isinstance(r, int) and r >= 2 for r in res)):
        raise ConfigError("grid.resolution", f"expected an integer >= 2 or {dim} of them, got {res!r}")
    ext = raw.get("extents", [[0.0, 1.0]] * dim)
    if not (isinstance(ext, list) and len(ext) == dim and all(isinstance(e, list) and len(e) == 2 for e in ext)):
        raise ConfigError("grid.extents", f"expected {dim} pairs [lo, hi], got {ext!r}")
    try:
        return build_grid(dim, res, [tuple(map(float, e)) for e in ext])
    except (ValueError, TypeError) as exc:
        raise ConfigError("grid", str(exc)) from exc


def _bundle(raw, base: Path) -> tuple[NonlinearityBundle, dict]:
    _expect_keys(raw, {"name", "delta_star", "csv"}, "bundle")
    name = raw.get("name", "default")
    ds = _number(raw, "delta_star", "bundle", default=1.0, positive=True)
    if name == "default":
        if "csv" in raw:
            raise ConfigError("bundle.csv", "only used with name 'tabulated'")
        bundle = default_bundle(ds)
        lo, hi = -3.0, 3.0
    elif name == "tabulated":
        if "csv" not in raw:
            raise ConfigError("bundle.csv", "tabulated bundle needs a CSV with columns s,G,alpha0,alpha")
        path = Path(raw["csv"])
        path = path if path.is_absolute() else base / path
        try:
            with open(path, encoding="utf-8") as fh:
                header = fh.readline().strip().split(",")
                data = np.loadtxt(fh, delimiter=",", ndmin=2)
        except OSError as exc:
            raise ConfigError("bundle.csv", f"cannot read {path}: {exc.strerror or exc}") from exc
        except ValueError as exc:
            raise ConfigError("bundle.csv", f"malformed table: {exc}") from exc
        if header != ["s", "G", "alpha0", "alpha"]:
            raise ConfigError("bundle.csv", "header must be s,G,alpha0,alpha")
        try:
            bundle = tabulated_bundle(data[:, 0], data[:, 1], data[:, 2], data[:, 3], ds)
        except ValueError as exc:
            raise ConfigError("bundle.csv", str(exc)) from exc
        lo, hi = float(data[0, 0]), float(data[-1, 0])
    else:
        raise ConfigError("bundle.name", f"expected 'default' or 'tabulated', got {name!r}")
    try:
        if name == "default":
            bundle.validate(lo, hi)
        else:
            _validate_tabulated(bundle, lo, hi)
    except ValueError as exc:
        raise ConfigError("bundle", str(exc)) from exc
    return bundle, {"name": name, "delta_star": ds, **({"csv": str(raw["csv"])} if "csv" in raw else {})}


def _validate_tabulated(bundle: NonlinearityBundle, lo: float, hi: float):
    s = np.linspace(lo, hi, 2001)
    bad = []
    if np.any(bundle.G(s) < -1e-9):
        bad.append("G >= 0")
    if np.any(bundle.ddalpha(s) < -1e-9):
        bad.append("alpha'' >= 0")
    if np.any(bundle.alpha0(s) < bundle.delta_star - 1e-9):
        bad.append("alpha0 >= delta_star")
    if np.any(bundle.alpha(s) < -1e-9):
        bad.append("alpha >= 0")
    if lo <= 0 <= hi and abs(float(bundle.dalpha(0.0))) > 1e-6:
        bad.append("alpha'(0) = 0")
    if bad:
        raise ValueError(f"tabulated bundle violates: {', '.join(bad)}")


def _params(raw, T, grid) -> tuple[ProblemParams, dict]:
    names = {f.name for f in dataclasses.fields(ProblemParams)} - {"T"}
    _expect_keys(raw, names, "params")
    kw = {}
    for k in names:
        if k == "C_emb" and raw.get(k) == "interval":
            if grid.dim != 1:
                raise ConfigError("params.C_emb", "'interval' is only available for 1D grids")
            a, b = grid.extents[0]
            kw[k] = interval_embedding_constant(b - a)
        elif k in raw:
            kw[k] = _number(raw, k, "params")
    try:
        p = ProblemParams(T=T, **kw)
    except ValueError as exc:
        raise ConfigError("params", str(exc)) from exc
    return p, dataclasses.asdict(p)


def _optimizer(raw) -> OptimizerOptions:
    names = {f.name for f in dataclasses.fields(OptimizerOptions)}
    _expect_keys(raw, names - {"seed"}, "optimizer")
    kw = {}
    for k in names - {"seed"}:
        if k in raw:
            if k in ("max_iter", "max_halvings", "vi_samples"):
                v = raw[k]
                if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                    raise ConfigError(f"optimizer.{k}", f"expected a nonnegative integer, got {v!r}")
                kw[k] = v
            else:
                kw[k] = _number(raw, k, "optimizer", positive=True)
    if "shrink" in kw and not kw["shrink"] < 1:
        raise ConfigError("optimizer.shrink", "must lie in (0, 1)")
    return OptimizerOptions(**kw)


def _check(raw) -> tuple[CheckSettings, list[str]]:
    names = {f.name for f in dataclasses.fields(CheckSettings)} - {"seed"}
    _expect_keys(raw, names | {"criteria"}, "check")
    crit = raw.get("criteria", list(CRITERIA))
    if not isinstance(crit, list) or not crit or any(c not in CRITERIA for c in crit):
        raise ConfigError("check.criteria", f"expected a nonempty list drawn from {', '.join(CRITERIA)}, got {crit!r}")
    kw = {}
    defaults = CheckSettings()
    for k in names:
        if k in raw:
            d = getattr(defaults, k)
            v = raw[k]
            if isinstance(d, int):
                if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                    raise ConfigError(f"check.{k}", f"expected a positive integer, got {v!r}")
                kw[k] = v
            elif isinstance(d, tuple):
                kw[k] = tuple(_vector(v, len(v) if isinstance(v, list) else 1, f"check.{k}"))
            else:
                kw[k] = _number(raw, k, "check", positive=True)
    return CheckSettings(**kw), list(crit)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


TOP_KEYS = {"grid", "time", "params", "bundle", "initial", "target", "controls", "box", "optimizer", "eps_list",
            "gradcheck", "check", "seed", "output"}


def parse_config(raw: dict, base: Path | str = ".", source: str = "") -> RunConfig:
    base = Path(base)
    _expect_keys(raw, TOP_KEYS, "config")
    grid = _grid(raw.get("grid", {}))
    traw = raw.get("time")
    if traw is None:
        raise ConfigError("time", "missing required section (needs T and tau)")
    _expect_keys(traw, {"T", "tau"}, "time")
    T = _number(traw, "T", "time", default=1.0, positive=True)
    tau = _number(traw, "tau", "time", positive=True)
    tgrid = TimeGrid(T, tau)
    params, params_d = _params(raw.get("params", {}), T, grid)
    bundle, bundle_d = _bundle(raw.get("bundle", {}), base)

    init_raw = raw.get("initial", {})
    _expect_keys(init_raw, {"eta", "theta"}, "initial")
    initial = {k: evaluate_field(init_raw.get(k, 0.0), grid, f"initial.{k}", base) for k in ("eta", "theta")}

    targ_raw = raw.get("target", {})
    _expect_keys(targ_raw, {"eta", "theta"}, "target")
    target = {}
    for k in ("eta", "theta"):
        spec = targ_raw.get(k, "uncontrolled")
        target[k] = None if spec == "uncontrolled" else evaluate_field(spec, grid, f"target.{k}", base)

    ctrl_raw = raw.get("controls", {})
    _expect_keys(ctrl_raw, {"u", "v"}, "controls")
    controls = {k: evaluate_field(ctrl_raw.get(k, 0.0), grid, f"controls.{k}", base) for k in ("u", "v")}

    box_raw = raw.get("box", {})
    _expect_keys(box_raw, {"lower", "upper"}, "box")
    lo = _number(box_raw, "lower", "box", default=-1.0)
    hi = _number(box_raw, "upper", "box", default=1.0)
    if lo > hi:
        raise ConfigError("box", f"lower ({lo}) exceeds upper ({hi})")
    box = BoxConstraint(lo, hi)

    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed", f"expected a nonnegative integer, got {seed!r}")
    optimizer = dataclasses.replace(_optimizer(raw.get("optimizer", {})), seed=seed)

    eps_list = raw.get("eps_list", [])
    if not isinstance(eps_list, list) or not all(
        isinstance(e, (int, float)) and not isinstance(e, bool) for e in eps_list
    ):
        raise ConfigError("eps_list", f"expected a list of numbers, got {eps_list!r}")
    eps_list = [float(e) for e in eps_list]
    if any(not e > 0 for e in eps_list) or any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ConfigError("eps_list", "values must be positive and strictly decreasing")

    gc_raw = raw.get("gradcheck", {})
    _expect_keys(gc_raw, {"delta", "tolerance"}, "gradcheck")
    gradcheck = {
        "delta": _number(gc_raw, "delta", "gradcheck", default=1e-4, positive=True),
        "tolerance": _number(gc_raw, "tolerance", "gradcheck", default=1e-3, positive=True),
    }
    check, criteria = _check(raw.get("check", {}))
    check = dataclasses.replace(check, seed=seed)

    output = raw.get("output")
    if output is not None and not isinstance(output, str):
        raise ConfigError("output", "expected a directory path string")

    def field_desc(spec, default):
        return spec if spec is not None else default

    resolved = {
        "grid": {"dimension": grid.dim, "resolution": list(grid.shape), "extents": [list(e) for e in grid.extents]},
        "time": {"T": T, "tau": tau, "n_steps": tgrid.n_steps},
        "params": params_d,
        "bundle": bundle_d,
        "initial": {k: field_desc(init_raw.get(k), 0.0) for k in ("eta", "theta")},
        "target": {k: field_desc(targ_raw.get(k), "uncontrolled") for k in ("eta", "theta")},
        "controls": {k: field_desc(ctrl_raw.get(k), 0.0) for k in ("u", "v")},
        "box": {"lower": lo, "upper": hi},
        "optimizer": dataclasses.asdict(optimizer),
        "eps_list": eps_list,
        "gradcheck": gradcheck,
        "check": {"criteria": criteria, **dataclasses.asdict(check)},
        "seed": seed,
    }
    return RunConfig(grid, tgrid, params, bundle, initial, target, controls, box, optimizer, eps_list, gradcheck,
                     check, criteria, seed, output, resolved, source)


def load_config(path: str | Path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("config", f"cannot read {p}: {exc.strerror or exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"{p} is not valid JSON: {exc}") from exc
    return parse_config(raw, p.parent, str(p))
