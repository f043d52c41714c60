"""INI experiment configuration.

Sections::

    [model]            name, dimension, horizon, box
    [model.potential]  name plus registry parameters
    [model.sigma]      name plus registry parameters
    [model.metric]     name plus registry parameters (the field A)
    [model.initial]    weights, means, covariances
    [solver]           nodes, checkpoints, dt, particles, seed
    [checks]           names
    [checks.<name>]    keyword overrides for one check
    [output]           directory, formats, csv_particles

Vectors are whitespace separated; mixture components and box axes are
separated by ``;``.
"""

from __future__ import annotations

import configparser
import inspect
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import DiffusionProblem, GaussianMixture, MetricSpec, ModelError, Registry, default_registry
from .verify import CHECKS

FORMATS = ("json", "csv", "binary")
SCHEMA = {
    "model": {"name", "dimension", "horizon", "box"},
    "model.initial": {"weights", "means", "covariances"},
    "solver": {"nodes", "checkpoints", "dt", "particles", "seed"},
    "checks": {"names"},
    "output": {"directory", "formats", "csv_particles"},
}
REGISTRY_SECTIONS = ("model.potential", "model.sigma", "model.metric")
# Solver keys forwarded to check functions that accept them.
SOLVER_ALIASES = {"nodes": "nodes", "checkpoints": "checkpoints", "dt": "dt", "particles": "N", "seed": "seed"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CheckPlan:
    name: str
    kwargs: dict

    def describe(self) -> str:
        args = ", ".join(f"{k}={v!r}" for k, v in sorted(self.kwargs.items()))
        return f"{self.name}({args})"


@dataclass(frozen=True)
class ExperimentConfig:
    problem: DiffusionProblem
    solver: dict
    checks: list[CheckPlan]
    output_dir: Path
    formats: tuple[str, ...]
    csv_particles: int
    source: Path | None = None
    overrides: dict = field(default_factory=dict)

    def plan(self) -> list[str]:
        p = self.problem
        lines = [
            f"model {p.name}: dimension {p.dimension}, horizon {p.horizon}, box {list(p.domain_box)}",
            f"  potential {p.potential.name} {p.potential.params}",
            f"  sigma {p.sigma.name} {p.sigma.params}",
            f"  metric A {p.metric.a_field.name} {p.metric.a_field.params}",
            f"solver pass: grid {self.solver['nodes']} nodes, {self.solver['checkpoints']} checkpoints, "
            f"{self.solver['particles']} particles, dt {self.solver['dt']}, seed {self.solver['seed']}",
        ]
        lines += [f"check {c.describe()}" for c in self.checks]
        lines.append(f"output {self.output_dir} formats {','.join(self.formats)}")
        return lines


def _line_of(text: str, section: str, key: str | None = None) -> int | None:
    current = None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        m = re.match(r"\[(.+)\]$", line)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return no
            continue
        if current == section and key is not None and re.match(rf"{re.escape(key)}\s*[=:]", line):
            return no
    return None


def _where(text: str, section: str, key: str | None = None) -> str:
    no = _line_of(text, section, key)
    loc = f"[{section}]" + (f" key '{key}'" if key else "")
    return f"line {no}: {loc}" if no else loc


def _number(s: str) -> int | float:
    try:
        return int(s)
    except ValueError:
        return float(s)


def parse_value(s: str):
    """Number, whitespace separated vector of numbers, boolean, or string."""
    s = s.strip()
    parts = s.split()
    try:
        nums = [_number(p) for p in parts]
    except ValueError:
        if s.lower() in ("true", "false"):
            return s.lower() == "true"
        if "," in s:
            return [p.strip() for p in s.split(",") if p.strip()]
        return s
    return nums[0] if len(nums) == 1 else nums


def _vectors(s: str) -> list[list[float]]:
    return [[float(v) for v in chunk.split()] for chunk in s.split(";") if chunk.strip()]


def load_config(path, seed: int | None = None, out: str | None = None, only=None,
                registry: Registry | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    cfg = parse_config(text, registry=registry, seed=seed, out=out, only=only)
    return ExperimentConfig(**{**cfg.__dict__, "source": path})


def parse_config(text: str, registry: Registry | None = None,
                 seed: int | None = None, out: str | None = None, only=None) -> ExperimentConfig:
    registry = registry or default_registry()
    parser = configparser.ConfigParser(interpolation=None, default_section="__defaults__")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.ParsingError as exc:
        line, content = exc.errors[0]
        raise ConfigError(f"line {line}: cannot parse {content.strip()}") from None
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
        raise ConfigError(f"line {exc.lineno}: {exc.message if hasattr(exc, 'message') else exc}") from None
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None

    sections = parser.sections()
    for sec in sections:
        if sec in SCHEMA:
            allowed = SCHEMA[sec]
        elif sec in REGISTRY_SECTIONS:
            continue
        elif sec.startswith("checks."):
            continue
        else:
            raise ConfigError(f"{_where(text, sec)}: unknown section")
        for key in parser[sec]:
            if key not in allowed:
                raise ConfigError(f"{_where(text, sec, key)}: unknown key")
    for sec in ("model", "model.potential", "model.sigma", "model.initial"):
        if sec not in sections:
            raise ConfigError(f"missing section [{sec}]")

    def get(sec, key, conv, default=None):
        if sec not in sections or key not in parser[sec]:
            if default is None:
                raise ConfigError(f"[{sec}] missing key '{key}'")
            return default
        try:
            return conv(parser[sec][key])
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{_where(text, sec, key)}: {exc}") from None

    n = get("model", "dimension", int, 1)
    horizon = get("model", "horizon", float)
    box = get("model", "box", _vectors)
    if len(box) != n or any(len(b) != 2 for b in box):
        raise ConfigError(f"{_where(text, 'model', 'box')}: expected {n} 'lo hi' pairs separated by ';'")

    def component(sec, kind):
        if sec not in sections:
            return None
        params = {k: parse_value(v) for k, v in parser[sec].items() if k != "name"}
        name = parser[sec].get("name")
        if name is None:
            raise ConfigError(f"{_where(text, sec)}: missing key 'name'")
        table = registry.potentials if kind == "potential" else registry.volatilities
        if name not in table:
            raise ConfigError(f"{_where(text, sec, 'name')}: unknown {kind} '{name}'; known {sorted(table)}")
        accepted = list(inspect.signature(table[name]).parameters)[1:]
        for key in params:
            if key not in accepted:
                raise ConfigError(f"{_where(text, sec, key)}: unknown key for {kind} '{name}' "
                                  f"(accepted: {accepted})")
        try:
            build = registry.potential if kind == "potential" else registry.volatility
            return build(name, n, **params)
        except (ModelError, ValueError, TypeError) as exc:
            raise ConfigError(f"{_where(text, sec)}: {exc}") from None

    pot = component("model.potential", "potential")
    sigma = component("model.sigma", "volatility")
    a_field = component("model.metric", "volatility")
    if a_field is None:
        a_field = registry.volatility("identity", n)

    try:
        means = np.array(get("model.initial", "means", _vectors))
        k = means.shape[0]
        weights = np.array(get("model.initial", "weights", lambda s: [float(v) for v in s.split()],
                               [1.0] * k))
        covs = np.array(get("model.initial", "covariances", _vectors))
        if covs.shape[1] == 1:
            covs = covs[:, 0][:, None, None] * np.eye(n)
        else:
            covs = covs.reshape(k, n, n)
        law = GaussianMixture(weights, means, covs)
        problem = DiffusionProblem(pot, sigma, MetricSpec(a_field), horizon, n, law, tuple(map(tuple, box)),
                                   get("model", "name", str, "problem"))
    except (ModelError, ValueError) as exc:
        raise ConfigError(f"{_where(text, 'model.initial')}: {exc}") from None

    solver = {
        "nodes": get("solver", "nodes", int, 2048 if n == 1 else 128),
        "checkpoints": get("solver", "checkpoints", int, 65),
        "dt": get("solver", "dt", float, 1e-3),
        "particles": get("solver", "particles", int, 10_000),
        "seed": get("solver", "seed", int, 0),
    }
    if seed is not None:
        solver["seed"] = int(seed)

    names = get("checks", "names", lambda s: [v.strip() for v in s.replace(",", " ").split()], [])
    if only:
        names = list(only)
    checks = []
    for name in names:
        if name not in CHECKS:
            raise ConfigError(f"{_where(text, 'checks', 'names')}: unknown check '{name}'; known {sorted(CHECKS)}")
        accepted = list(inspect.signature(CHECKS[name]).parameters)[1:]
        kwargs = {alias: solver[key] for key, alias in SOLVER_ALIASES.items() if alias in accepted}
        sec = f"checks.{name}"
        if sec in sections:
            for key, raw in parser[sec].items():
                if key not in accepted:
                    raise ConfigError(f"{_where(text, sec, key)}: unknown key (accepted: {accepted})")
                kwargs[key] = parse_value(raw)
        for key, value in list(kwargs.items()):
            if isinstance(value, list) and key not in ("dts", "deltas", "nodes_list", "h_list", "fd_times",
                                                       "t_grid", "slope_range"):
                raise ConfigError(f"{_where(text, sec, key)}: expected a scalar")
        checks.append(CheckPlan(name, kwargs))
    for sec in sections:
        if sec.startswith("checks.") and sec[7:] not in CHECKS:
            raise ConfigError(f"{_where(text, sec)}: unknown check '{sec[7:]}'")

    directory = out if out is not None else get("output", "directory", str, f"wflow-out/{problem.name}")
    directory = Path(directory)
    formats = tuple(get("output", "formats", lambda s: [v.strip() for v in s.replace(",", " ").split()],
                        list(FORMATS)))
    for f in formats:
        if f not in FORMATS:
            raise ConfigError(f"{_where(text, 'output', 'formats')}: unknown format '{f}'")
    csv_particles = get("output", "csv_particles", int, 1000)
    return ExperimentConfig(problem, solver, checks, directory, formats, csv_particles)
