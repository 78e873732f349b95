"""Strict YAML configuration files.

A config is a nested mapping with the top-level blocks ``model``,
``simulation``, ``grid``, ``estimation``, ``experiment`` and ``input``.
Unknown keys are rejected, and every error names the file and line of the
offending entry.  ``CONFIG_REFERENCE`` documents every key and its default.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from typing import Any

import yaml

from .intensity import IntensitySyntaxError, parse_intensity
from .model import (
    IntensityModel,
    ModelError,
    markov_illness_death,
    semimarkov_illness_death,
    synthetic_disability,
)
from .oe import TimeDurationGrid, TimeGrid
from .simulate import CensoringSpec

__all__ = [
    "ConfigError",
    "AppConfig",
    "SimulationBlock",
    "EstimationBlock",
    "ExperimentBlock",
    "load_config",
    "parse_config",
    "parse_transition",
    "EXPERIMENT_DEFAULTS",
    "PAPER_SCALE",
    "PRESETS",
    "CONFIG_REFERENCE",
]

PRESETS = {
    "markov_illness_death": markov_illness_death,
    "semimarkov_illness_death": semimarkov_illness_death,
    "synthetic_disability": synthetic_disability,
}

_SURFACE_SLICES = [
    {"transition": "1->2", "d": 0.0},
    {"transition": "1->3", "d": 0.0},
] + [{"transition": "2->3", "d": float(d)} for d in (1, 5, 10, 20)]

# per-subcommand experiment parameters and their defaults
EXPERIMENT_DEFAULTS: dict[str, dict[str, Any]] = {
    "sweep": {"Ms": list(range(5, 85, 5)), "n": 500, "reps": 1000, "t0": 20.0, "transition": "1->2"},
    "clt": {"Ms": [5, 15, 75], "n": 500, "reps": 1000, "t0": 20.0, "transition": "1->2"},
    "independence": {
        "s": 15.0,
        "t": 25.0,
        "M": 15,
        "n": 500,
        "reps": 2000,
        "transition": "1->2",
        "duration_bin": None,
    },
    "lemma-check": {
        "t": 20.0,
        "delta": 0.25,
        "n": 200_000,
        "transition": "1->2",
        "u": None,
        "delta_u": None,
    },
    "surface": {"n": 20_000, "mesh": 2.0, "slices": _SURFACE_SLICES},
    "slice": {"slices": _SURFACE_SLICES},
}

# overrides applied by --paper-scale
PAPER_SCALE: dict[str, dict[str, Any]] = {"surface": {"n": 100_000}}

CONFIG_REFERENCE = """\
configuration keys (YAML; unknown keys are errors):

  model:
    preset        markov_illness_death | semimarkov_illness_death |
                  synthetic_disability (replaces the keys below)
    states        list of state labels                    (required without preset)
    absorbing     list of absorbing states                [default: []]
    kind          markov | semi_markov                    [default: markov]
    transitions   mapping "j->k": intensity expression in t (and u)
  simulation:
    n             number of subjects                      [default: 1000]
    horizon       simulation horizon                      [default: 40]
    initial_state starting state                          [default: first state]
    censoring     {law: uniform, lo, hi} | {law: fixed, r} | {law: none}
                                                          [default: {law: none}]
    master_seed   integer seed                            (required)
    window        thinning look-ahead window              [default: 1.0]
    workers       simulation threads                      [default: 1]
  grid:
    t0, t_max     grid range                              [default: 0, horizon]
    M             number of time bins                     [default: 40]
    delta         bin width (alternative to M)
    duration      {u0, u_max, M | delta}: duration axis for 2D tables
  estimation:
    method        oe | lasso | tree                       [default: oe]
    level         interval level in (0, 1)                [default: 0.95]
    interval_scale linear | log                           [default: linear]
    transition    "j->k" fitted by lasso/tree             [default: first transition]
    lambda        fused LASSO penalty (or list)           [default: [100, 10, 1, 0.1]]
    tree          {max_depth: 3, min_exposure: 1.0, min_deviance_gain: 0.0}
  experiment:
    name          subcommand the overrides belong to
    sweep         Ms [5..80 step 5], n 500, reps 1000, t0 20, transition 1->2
    clt           Ms [5, 15, 75], n 500, reps 1000, t0 20, transition 1->2
    independence  s 15, t 25, M 15, n 500, reps 2000, transition 1->2,
                  duration_bin null ([u_lo, u_hi] for the duration variant)
    lemma-check   t 20, delta 0.25, n 200000, transition 1->2,
                  u null, delta_u null (set both for a time-duration box)
    surface       n 20000 (100000 with --paper-scale), mesh 2, slices
    slice         slices: list of {transition, d}
  input:
    events        event-history CSV (id,time,from,to); relative to the config
    states        state order for ingested data           [default: sorted labels]
    absorbing     absorbing states of ingested data       [default: []]
"""


class ConfigError(ValueError):
    """Invalid configuration; the message carries ``file:line`` when known."""


class _Mapping(dict):
    """dict remembering the source line of each key and of itself."""

    line: int = 0
    lines: dict


class _Loader(yaml.SafeLoader):
    pass


def _construct_mapping(loader, node):
    loader.flatten_mapping(node)
    out = _Mapping()
    out.line = node.start_mark.line + 1
    out.lines = {}
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=True)
        if key in out:
            raise ConfigError(f"line {key_node.start_mark.line + 1}: duplicate key {key!r}")
        out[key] = loader.construct_object(value_node, deep=True)
        out.lines[key] = key_node.start_mark.line + 1
    return out


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)


@dataclass
class SimulationBlock:
    n: int
    horizon: float
    initial_state: str
    censoring: CensoringSpec
    master_seed: int
    window: float = 1.0
    workers: int = 1


@dataclass
class EstimationBlock:
    method: str = "oe"
    level: float = 0.95
    interval_scale: str = "linear"
    transition: tuple[str, str] | None = None
    lambdas: list[float] = field(default_factory=lambda: [100.0, 10.0, 1.0, 0.1])
    max_depth: int = 3
    min_exposure: float = 1.0
    min_deviance_gain: float = 0.0


@dataclass
class ExperimentBlock:
    name: str | None
    overrides: dict


@dataclass
class AppConfig:
    path: str
    raw: dict
    sha256: str
    model: IntensityModel | None = None
    simulation: SimulationBlock | None = None
    grid: TimeGrid | None = None
    duration_grid: TimeGrid | None = None
    estimation: EstimationBlock = field(default_factory=EstimationBlock)
    experiment: ExperimentBlock | None = None
    events: str | None = None
    input_states: list[str] | None = None
    input_absorbing: list[str] = field(default_factory=list)

    @property
    def grid2(self) -> TimeDurationGrid | None:
        if self.grid is None or self.duration_grid is None:
            return None
        return TimeDurationGrid(self.grid, self.duration_grid)

    def experiment_params(self, name: str, paper_scale: bool = False) -> dict:
        """Defaults for subcommand ``name`` updated by the experiment block."""
        params = dict(EXPERIMENT_DEFAULTS.get(name, {}))
        if paper_scale:
            params.update(PAPER_SCALE.get(name, {}))
        exp = self.experiment
        if exp is None:
            return params
        if exp.name is not None and exp.name != name:
            raise ConfigError(f"{self.path}: experiment block is for {exp.name!r}, not {name!r}")
        unknown = set(exp.overrides) - set(params)
        if unknown:
            raise ConfigError(
                f"{self.path}: unknown {name} parameter(s) {sorted(unknown)}; "
                f"allowed: {sorted(params)}"
            )
        params.update(exp.overrides)
        return params


def parse_transition(text) -> tuple[str, str]:
    """``"1->2"`` to ``("1", "2")``."""
    if isinstance(text, (list, tuple)) and len(text) == 2:
        return str(text[0]), str(text[1])
    parts = str(text).split("->")
    if len(parts) != 2 or not all(p.strip() for p in parts):
        raise ConfigError(f"transition must look like 'j->k', got {text!r}")
    return parts[0].strip(), parts[1].strip()


class _Ctx:
    def __init__(self, path: str):
        self.path = path

    def fail(self, block, key, message):
        line = getattr(block, "lines", {}).get(key, getattr(block, "line", 0))
        where = f"{self.path}:{line}" if line else self.path
        raise ConfigError(f"{where}: {message}")

    def block(self, parent, key, allowed, required=()):
        value = parent.get(key)
        if value is None:
            return None
        if not isinstance(value, dict):
            self.fail(parent, key, f"'{key}' must be a mapping")
        for k in value:
            if k not in allowed:
                self.fail(value, k, f"unknown key '{key}.{k}' (allowed: {', '.join(sorted(allowed))})")
        missing = [k for k in required if k not in value]
        if missing:
            self.fail(parent, key, f"missing required key(s) in '{key}': {', '.join(missing)}")
        return value

    def number(self, block, key, default, kind=float, positive=False, nonneg=False):
        if key not in block:
            return default
        v = block[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(block, key, f"'{key}' must be a number, got {v!r}")
        if kind is int:
            if int(v) != v:
                self.fail(block, key, f"'{key}' must be an integer, got {v!r}")
            v = int(v)
        else:
            v = float(v)
        if positive and not v > 0:
            self.fail(block, key, f"'{key}' must be positive, got {v}")
        if nonneg and v < 0:
            self.fail(block, key, f"'{key}' must be nonnegative, got {v}")
        return v

    def choice(self, block, key, default, options):
        v = block.get(key, default)
        if v not in options:
            self.fail(block, key, f"'{key}' must be one of {', '.join(options)}, got {v!r}")
        return v


def _model(ctx: _Ctx, raw) -> IntensityModel | None:
    m = ctx.block(raw, "model", {"preset", "states", "absorbing", "kind", "transitions"})
    if m is None:
        return None
    if "preset" in m:
        extra = set(m) - {"preset"}
        if extra:
            ctx.fail(m, sorted(extra)[0], "a preset model takes no further keys")
        if m["preset"] not in PRESETS:
            ctx.fail(m, "preset", f"unknown preset {m['preset']!r} (known: {', '.join(PRESETS)})")
        return PRESETS[m["preset"]]()
    for key in ("states", "transitions"):
        if key not in m:
            ctx.fail(raw, "model", f"missing required key 'model.{key}'")
    states = m["states"]
    if not isinstance(states, list) or not states:
        ctx.fail(m, "states", "'states' must be a nonempty list")
    absorbing = m.get("absorbing", []) or []
    kind = ctx.choice(m, "kind", "markov", ("markov", "semi_markov"))
    trans = m["transitions"]
    if not isinstance(trans, dict) or not trans:
        ctx.fail(m, "transitions", "'transitions' must be a nonempty mapping 'j->k': expression")
    exprs = {}
    for key, text in trans.items():
        try:
            jk = parse_transition(key)
        except ConfigError as exc:
            ctx.fail(trans, key, str(exc))
        try:
            exprs[jk] = parse_intensity(str(text))
        except IntensitySyntaxError as exc:
            ctx.fail(trans, key, f"intensity {key}: {exc}")
        if kind == "markov" and exprs[jk].uses_duration:
            ctx.fail(trans, key, f"intensity {key} uses duration u but the model kind is markov")
    try:
        return IntensityModel([str(s) for s in states], exprs, [str(a) for a in absorbing], kind)
    except ModelError as exc:
        ctx.fail(raw, "model", str(exc))


def _censoring(ctx: _Ctx, sim, horizon: float) -> CensoringSpec:
    c = ctx.block(sim, "censoring", {"law", "lo", "hi", "r"}, required=("law",))
    if c is None:
        return CensoringSpec.none(horizon)
    law = ctx.choice(c, "law", None, ("uniform", "fixed", "none"))
    try:
        if law == "uniform":
            if "lo" not in c or "hi" not in c:
                ctx.fail(sim, "censoring", "uniform censoring needs 'lo' and 'hi'")
            return CensoringSpec.uniform(ctx.number(c, "lo", 0.0, nonneg=True), ctx.number(c, "hi", 0.0))
        if law == "fixed":
            if "r" not in c:
                ctx.fail(sim, "censoring", "fixed censoring needs 'r'")
            return CensoringSpec.fixed(ctx.number(c, "r", 0.0, positive=True))
        return CensoringSpec.none(horizon)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        ctx.fail(sim, "censoring", str(exc))


def _simulation(ctx: _Ctx, raw, model) -> SimulationBlock | None:
    allowed = {"n", "horizon", "initial_state", "censoring", "master_seed", "window", "workers"}
    s = ctx.block(raw, "simulation", allowed, required=("master_seed",))
    if s is None:
        return None
    if model is None:
        ctx.fail(raw, "simulation", "a simulation block needs a model block")
    horizon = ctx.number(s, "horizon", 40.0, positive=True)
    init = str(s.get("initial_state", model.states[0]))
    if init not in model.index:
        ctx.fail(s, "initial_state", f"initial state {init!r} not among {list(model.states)}")
    if init in model.absorbing:
        ctx.fail(s, "initial_state", f"initial state {init!r} is absorbing")
    cens = _censoring(ctx, s, horizon)
    if cens.upper > horizon:
        ctx.fail(s, "censoring", f"censoring upper bound {cens.upper} exceeds horizon {horizon}")
    seed = ctx.number(s, "master_seed", 0, kind=int, nonneg=True)
    try:
        model.validate(horizon)
    except ModelError as exc:
        ctx.fail(raw, "model", str(exc))
    return SimulationBlock(
        n=ctx.number(s, "n", 1000, kind=int, positive=True),
        horizon=horizon,
        initial_state=init,
        censoring=cens,
        master_seed=seed,
        window=ctx.number(s, "window", 1.0, positive=True),
        workers=ctx.number(s, "workers", 1, kind=int, positive=True),
    )


def _axis(ctx: _Ctx, block, lo_key, hi_key, lo_default, hi_default) -> TimeGrid:
    lo = ctx.number(block, lo_key, lo_default)
    hi = ctx.number(block, hi_key, hi_default)
    if not hi > lo:
        ctx.fail(block, hi_key, f"'{hi_key}' must exceed '{lo_key}'")
    if "M" in block and "delta" in block:
        ctx.fail(block, "delta", "give either 'M' or 'delta', not both")
    if "delta" in block:
        return TimeGrid.with_width(lo, hi, ctx.number(block, "delta", 1.0, positive=True))
    return TimeGrid(lo, hi, ctx.number(block, "M", 40, kind=int, positive=True))


def _grids(ctx: _Ctx, raw, sim):
    g = ctx.block(raw, "grid", {"t0", "t_max", "M", "delta", "duration"})
    if g is None:
        return None, None
    t_max = sim.horizon if sim is not None else 40.0
    grid = _axis(ctx, g, "t0", "t_max", 0.0, t_max)
    d = ctx.block(g, "duration", {"u0", "u_max", "M", "delta"})
    dgrid = None if d is None else _axis(ctx, d, "u0", "u_max", 0.0, grid.t_max)
    return grid, dgrid


def _estimation(ctx: _Ctx, raw, model) -> EstimationBlock:
    allowed = {"method", "level", "interval_scale", "transition", "lambda", "tree"}
    e = ctx.block(raw, "estimation", allowed)
    out = EstimationBlock()
    if e is None:
        return out
    out.method = ctx.choice(e, "method", "oe", ("oe", "lasso", "tree"))
    out.level = ctx.number(e, "level", 0.95)
    if not 0 < out.level < 1:
        ctx.fail(e, "level", f"'level' must lie in (0, 1), got {out.level}")
    out.interval_scale = ctx.choice(e, "interval_scale", "linear", ("linear", "log"))
    if "transition" in e:
        try:
            out.transition = parse_transition(e["transition"])
        except ConfigError as exc:
            ctx.fail(e, "transition", str(exc))
        if model is not None and out.transition not in model.transitions:
            ctx.fail(e, "transition", f"transition {e['transition']!r} is not part of the model")
    if "lambda" in e:
        lam = e["lambda"]
        lams = lam if isinstance(lam, list) else [lam]
        if not lams or any(isinstance(x, bool) or not isinstance(x, (int, float)) or x < 0 for x in lams):
            ctx.fail(e, "lambda", "'lambda' must be a nonnegative number or a list of them")
        out.lambdas = [float(x) for x in lams]
    t = ctx.block(e, "tree", {"max_depth", "min_exposure", "min_deviance_gain"})
    if t is not None:
        out.max_depth = ctx.number(t, "max_depth", 3, kind=int, nonneg=True)
        out.min_exposure = ctx.number(t, "min_exposure", 1.0, nonneg=True)
        out.min_deviance_gain = ctx.number(t, "min_deviance_gain", 0.0, nonneg=True)
    return out


def _experiment(ctx: _Ctx, raw) -> ExperimentBlock | None:
    e = raw.get("experiment")
    if e is None:
        return None
    if not isinstance(e, dict):
        ctx.fail(raw, "experiment", "'experiment' must be a mapping")
    name = e.get("name")
    if name is not None and name not in EXPERIMENT_DEFAULTS:
        ctx.fail(e, "name", f"unknown experiment {name!r} (known: {', '.join(EXPERIMENT_DEFAULTS)})")
    overrides = {k: v for k, v in e.items() if k != "name"}
    if name is not None:
        for k in overrides:
            if k not in EXPERIMENT_DEFAULTS[name]:
                ctx.fail(e, k, f"unknown key 'experiment.{k}' for {name} (allowed: {', '.join(EXPERIMENT_DEFAULTS[name])})")
    return ExperimentBlock(name, overrides)


def parse_config(text: str, path: str = "<config>") -> AppConfig:
    ctx = _Ctx(path)
    try:
        raw = yaml.load(text, Loader=_Loader)
    except ConfigError as exc:
        raise ConfigError(f"{path}:{str(exc).removeprefix('line ')}") from None
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}" if mark is not None else path
        raise ConfigError(f"{where}: malformed YAML: {getattr(exc, 'problem', exc)}") from None
    if raw is None:
        raw = _Mapping()
        raw.line, raw.lines = 1, {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    top = {"model", "simulation", "grid", "estimation", "experiment", "input"}
    for k in raw:
        if k not in top:
            ctx.fail(raw, k, f"unknown top-level key '{k}' (allowed: {', '.join(sorted(top))})")
    model = _model(ctx, raw)
    sim = _simulation(ctx, raw, model)
    grid, dgrid = _grids(ctx, raw, sim)
    cfg = AppConfig(
        path=path,
        raw=_plain(raw),
        sha256=hashlib.sha256(text.encode()).hexdigest(),
        model=model,
        simulation=sim,
        grid=grid,
        duration_grid=dgrid,
        estimation=_estimation(ctx, raw, model),
        experiment=_experiment(ctx, raw),
    )
    inp = ctx.block(raw, "input", {"events", "states", "absorbing"}, required=("events",))
    if inp is not None:
        base = os.path.dirname(os.path.abspath(path)) if os.path.exists(path) else os.getcwd()
        cfg.events = os.path.join(base, str(inp["events"]))
        if "states" in inp:
            cfg.input_states = [str(s) for s in inp["states"]]
        cfg.input_absorbing = [str(s) for s in inp.get("absorbing", []) or []]
    return cfg


def load_config(path: str) -> AppConfig:
    """Read and validate a config file."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, path)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_plain(v) for v in obj]
    return obj
