"""Run configuration: a flat TOML schema mapped onto solver objects.

Sections mirror the run structure::

    [grid]        d, n
    [time]        T, M
    [physics]     nu, observation, obs_weight, C0, control_bound
    [physics.y0]  kind = "taylor_green" | "abc" | "random" | "checkpoint" | "zero"
    [physics.forcing], [physics.target]   same field specs
    [constraint]  variant, rho, lambda_h
    [control]     space, modes, mask_box, cost, beta, radius
    [penalty]     schedule, inner_tol, abs_tol, max_inner_iters, anchor_weight, ...
    [verify]      stationarity, variational, colinearity, mu_floor, complementarity
    [output]      directory, checkpoints, profiles

Field specs accept ``amplitude`` (taylor_green, abc), ``seed``, ``energy``
and ``kcut`` (random), ``path`` (checkpoint) and an optional ``norm`` that
rescales the field to the given H norm.  Errors name the dotted path of the
offending entry.
"""

import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .checkpoint import load_field
from .constraints import make_constraint
from .control import ControlTrajectory, make_control_space, make_cost
from .dynamics import ProblemData, TimeGrid, existence_time, forcing_l2_sq
from .errors import CheckpointError, ConfigurationError
from .fields import Grid, VelocityField, abc_flow, random_field, taylor_green
from .penalty import PenaltyConfig
from .verify import VerifyTolerances

SCENARIO_DIR = Path(__file__).parent / "scenarios"
EXISTENCE_SAFETY = 0.9


@dataclass(frozen=True)
class RunConfig:
    grid: dict
    time: dict
    physics: dict
    constraint: dict
    control: dict
    penalty: dict = field(default_factory=dict)
    verify: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    source: str = ""


_SECTIONS = {f.name for f in fields(RunConfig)} - {"source"}
_REQUIRED = ("grid", "time", "physics", "constraint", "control")


def resolve_path(name):
    """A config path, or the name of a shipped scenario."""
    p = Path(name)
    if p.exists():
        return p
    for cand in (SCENARIO_DIR / name, SCENARIO_DIR / f"{name}.toml"):
        if cand.exists():
            return cand
    raise ConfigurationError(f"config file not found: {name}", "config")


def load_config(path):
    p = resolve_path(path)
    try:
        text = p.read_text()
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"malformed TOML: {exc}", "config") from exc
    except OSError as exc:
        raise ConfigurationError(f"cannot read {p}: {exc}", "config") from exc
    return parse_config(raw, text, base_dir=p.parent)


def parse_config(raw, source="", base_dir=None):
    unknown = set(raw) - _SECTIONS
    if unknown:
        raise ConfigurationError(f"unknown section(s) {sorted(unknown)}", sorted(unknown)[0])
    for name in _REQUIRED:
        if not isinstance(raw.get(name), dict):
            raise ConfigurationError("section missing", name)
    cfg = RunConfig(**{k: dict(raw.get(k, {})) for k in _SECTIONS}, source=source)
    build(cfg, base_dir)  # validate eagerly
    return cfg


# -- typed getters ----------------------------------------------------------


def _get(section, name, key, kind, default=None, required=False):
    path = f"{name}.{key}"
    if key not in section:
        if required:
            raise ConfigurationError("required entry missing", path)
        return default
    v = section[key]
    if kind is int:
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigurationError(f"expected an integer, got {v!r}", path)
        return v
    if kind is float:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigurationError(f"expected a number, got {v!r}", path)
        v = float(v)
        if not math.isfinite(v):
            raise ConfigurationError(f"expected a finite number, got {v!r}", path)
        return v
    if kind is str:
        if not isinstance(v, str):
            raise ConfigurationError(f"expected a string, got {v!r}", path)
        return v
    if kind is bool:
        if not isinstance(v, bool):
            raise ConfigurationError(f"expected true/false, got {v!r}", path)
        return v
    return v


def _positive(v, path):
    if not v > 0:
        raise ConfigurationError(f"must be positive, got {v}", path)
    return v


def _wrap(path, fn, *args, **kw):
    """Re-label errors raised by constructors with the config path."""
    try:
        return fn(*args, **kw)
    except ConfigurationError as exc:
        if exc.field is not None:
            raise
        raise ConfigurationError(str(exc), path) from exc


def build_field(spec, grid, path, base_dir=None):
    if spec is None:
        return None
    if not isinstance(spec, dict):
        raise ConfigurationError("field spec must be a table", path)
    kind = _get(spec, path, "kind", str, required=True)
    if kind == "zero":
        y = VelocityField.zeros(grid)
    elif kind == "taylor_green":
        y = taylor_green(grid, _get(spec, path, "amplitude", float, 1.0))
    elif kind == "abc":
        y = abc_flow(grid) * _get(spec, path, "amplitude", float, 1.0)
    elif kind == "random":
        seed = _get(spec, path, "seed", int, required=True)
        energy = _get(spec, path, "energy", float)
        kcut = _get(spec, path, "kcut", float)
        y = _wrap(path, random_field, grid, seed=seed, energy=energy, kcut=kcut)
    elif kind == "checkpoint":
        fp = Path(_get(spec, path, "path", str, required=True))
        if not fp.is_absolute() and base_dir is not None:
            fp = base_dir / fp
        try:
            y = load_field(fp)
        except CheckpointError as exc:
            raise ConfigurationError(str(exc), f"{path}.path") from exc
        if y.grid != grid:
            raise ConfigurationError("checkpoint grid differs from [grid]", f"{path}.path")
    else:
        raise ConfigurationError(f"unknown field kind {kind!r}", f"{path}.kind")
    target_norm = _get(spec, path, "norm", float)
    if target_norm is not None:
        if target_norm < 0:
            raise ConfigurationError(f"must be nonnegative, got {target_norm}", f"{path}.norm")
        nrm = y.norm()
        if nrm == 0:
            raise ConfigurationError("cannot rescale a zero field", f"{path}.norm")
        y = y * (target_norm / nrm)
    return y


def _mask_from_box(grid, box, path):
    if not isinstance(box, list) or len(box) != grid.d:
        raise ConfigurationError(f"expected {grid.d} [lo, hi] intervals", path)
    mask = np.ones(grid.shape, dtype=bool)
    for axis, iv in enumerate(box):
        if not (isinstance(iv, list) and len(iv) == 2):
            raise ConfigurationError("each interval must be [lo, hi]", path)
        lo, hi = float(iv[0]), float(iv[1])
        x = grid.coordinates[axis]
        mask &= (x >= lo) & (x < hi)
    return mask


@dataclass
class Problem:
    """Everything a run needs, built from a :class:`RunConfig`."""

    data: ProblemData
    time_grid: TimeGrid
    constraint: object
    cost: object
    penalty: PenaltyConfig
    tolerances: VerifyTolerances
    output: dict

    def initial_control(self):
        return ControlTrajectory.zeros(self.data.space, self.time_grid.M, self.time_grid.dt)


def build(cfg, base_dir=None):
    g = cfg.grid
    d = _get(g, "grid", "d", int, required=True)
    n = _get(g, "grid", "n", int, required=True)
    grid = _wrap("grid", Grid, d, n)

    t = cfg.time
    tg = _wrap("time", TimeGrid, _positive(_get(t, "time", "T", float, required=True), "time.T"),
               _get(t, "time", "M", int, required=True))

    ph = cfg.physics
    nu = _positive(_get(ph, "physics", "nu", float, required=True), "physics.nu")
    y0 = build_field(ph.get("y0"), grid, "physics.y0", base_dir)
    if y0 is None:
        raise ConfigurationError("section missing", "physics.y0")
    forcing = build_field(ph.get("forcing"), grid, "physics.forcing", base_dir)
    target = build_field(ph.get("target"), grid, "physics.target", base_dir)
    observation = _get(ph, "physics", "observation", str, "identity")
    obs_weight = _get(ph, "physics", "obs_weight", float, 1.0)

    c = cfg.control
    variant = _get(c, "control", "space", str, "full")
    modes = c.get("modes")
    mask = None
    if variant == "mask":
        mask = _mask_from_box(grid, c.get("mask_box"), "control.mask_box")
    space = _wrap("control.space", make_control_space, grid, variant, modes=modes, mask=mask)
    cost = _wrap(
        "control.cost",
        make_cost,
        _get(c, "control", "cost", str, "quadratic"),
        beta=_get(c, "control", "beta", float),
        r=_get(c, "control", "radius", float),
    )

    data = _wrap(
        "physics",
        ProblemData,
        grid,
        nu,
        y0,
        space=space,
        forcing=forcing,
        target=target,
        observation=observation,
        obs_weight=obs_weight,
    )

    k = cfg.constraint
    K = _wrap(
        "constraint",
        make_constraint,
        _get(k, "constraint", "variant", str, required=True),
        rho=_get(k, "constraint", "rho", float),
        lambda_h=_get(k, "constraint", "lambda_h", float, 1.0),
    )
    _wrap("constraint.variant", K.check_field, y0)

    if d == 3:
        C0 = _positive(_get(ph, "physics", "C0", float, 1.0), "physics.C0")
        L = _get(ph, "physics", "control_bound", float, 0.0)
        y0v = grid.volume * float(np.sum(grid.k2 * np.abs(y0.coeffs) ** 2))
        T_max = existence_time(C0, nu, y0v, forcing_l2_sq(data, tg), L)
        if tg.T > EXISTENCE_SAFETY * T_max:
            raise ConfigurationError(
                f"horizon {tg.T} exceeds {EXISTENCE_SAFETY} x guaranteed existence time {T_max:.4g}", "time.T"
            )

    p = dict(cfg.penalty)
    unknown = set(p) - set(PenaltyConfig.__dataclass_fields__)
    if unknown:
        raise ConfigurationError("unknown entry", f"penalty.{sorted(unknown)[0]}")
    if "schedule" in p:
        if not isinstance(p["schedule"], list):
            raise ConfigurationError("expected a list", "penalty.schedule")
        p["schedule"] = tuple(p["schedule"])
    penalty = _wrap("penalty", PenaltyConfig, **p)

    v = dict(cfg.verify)
    unknown = set(v) - set(VerifyTolerances.__dataclass_fields__)
    if unknown:
        raise ConfigurationError("unknown entry", f"verify.{sorted(unknown)[0]}")
    tol = VerifyTolerances(**{key: _get(v, "verify", key, float) for key in v})

    return Problem(data, tg, K, cost, penalty, tol, dict(cfg.output))
