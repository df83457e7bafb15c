"""Declarative experiment configs: strict TOML in, canonical TOML out.

A config has a [model] block, a [measure] block, one [command] block, an
optional [run] block (seed, threads, out_dir) and an optional [tolerances]
block overriding entries of the defaults table.  Unknown keys anywhere are
rejected with the offending key named.  parse -> serialize -> parse is the
identity on configs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

try:
    import tomllib as _toml
except ImportError:  # Python 3.10
    import tomli as _toml

from . import measures, models
from .defaults import DEFAULTS, Defaults
from .errors import InvalidMeasure, InvalidModel, ParseError, ValidationError

_MODEL_PARAM_KEYS = {
    "bm": set(),
    "two_media": {"A"},
    "gbm": set(),
    "cev": {"alpha"},
    "exp_half": set(),
    "log_example": set(),
    "piecewise": {"breaks", "pieces"},
}

# command option name -> (type tag, required)
_COMMAND_SCHEMAS = {
    "classify": {"out": ("str", False)},
    "qfun": {"y": ("float", True), "grid": ("grid", True), "out": ("str", True)},
    "scalefactor": {"N": ("int", True), "grid": ("grid", True), "out": ("str", True)},
    "walk": {"N": ("int", True), "steps": ("int", True), "paths": ("int", True),
             "out": ("str", True)},
    "embed": {"N": ("int", True), "steps": ("int", True), "paths": ("int", True),
              "grid_nodes": ("int", False), "out": ("str", True)},
    "converge": {"study": ("str", True), "N_values": ("intlist", True),
                 "t": ("float", False), "s": ("float", False),
                 "epsilon": ("float", False), "samples": ("int", False),
                 "reps": ("int", False), "reference": ("str", False),
                 "euler_step": ("float", False), "euler_paths": ("int", False),
                 "grid_nodes": ("int", False), "grid_points": ("int", False),
                 "out": ("str", True), "raw_csv": ("str", False)},
    "lln": {"array": ("str", True), "n_values": ("intlist", True),
            "epsilon": ("float", True), "reps": ("int", True),
            "grid_nodes": ("int", False), "out": ("str", True)},
}

_STUDIES = ("marginal", "drift", "sup_distance")


@dataclass
class ModelConfig:
    name: str
    params: dict = field(default_factory=dict)
    interval: Optional[tuple] = None
    m: Optional[float] = None

    def build(self) -> models.DiffusionSpec:
        try:
            return models.catalog(self.name, interval=self.interval, m=self.m, **self.params)
        except InvalidModel as exc:
            raise ValidationError(f"model: {exc}") from exc


@dataclass
class MeasureConfig:
    atoms: Optional[tuple] = None
    density: Optional[dict] = None

    def build(self) -> measures.IncrementMeasure:
        try:
            if self.atoms is not None:
                mu = measures.from_atoms(self.atoms)
            else:
                params = {k: v for k, v in self.density.items() if k != "name"}
                mu = measures.from_density(self.density["name"], **params)
        except InvalidMeasure as exc:
            raise ValidationError(f"measure: {exc}") from exc
        report = measures.validate_measure(mu)
        if not report.passed:
            names = ", ".join(c[0] for c in report.failed_checks())
            raise ValidationError(f"measure fails validation checks: {names}")
        return mu


@dataclass
class CommandConfig:
    name: str
    options: dict = field(default_factory=dict)


@dataclass
class ExperimentConfig:
    model: ModelConfig
    measure: MeasureConfig
    command: CommandConfig
    seed: Optional[int] = None
    threads: int = 1
    out_dir: str = "."
    tolerances: dict = field(default_factory=dict)

    def defaults(self) -> Defaults:
        try:
            return DEFAULTS.override(self.tolerances)
        except KeyError as exc:
            raise ValidationError(str(exc)) from None


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def _reject_unknown(table: dict, allowed, where: str):
    unknown = set(table) - set(allowed)
    if unknown:
        key = sorted(unknown)[0]
        raise ParseError(f"unknown key '{key}' in [{where}]")


def _coerce(value, tag, where):
    if tag == "str":
        if not isinstance(value, str):
            raise ValidationError(f"{where}: expected a string, got {value!r}")
        return value
    if tag == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValidationError(f"{where}: expected an integer, got {value!r}")
        return int(value)
    if tag == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tag == "intlist":
        if not isinstance(value, list) or not value or \
                any(isinstance(v, bool) or not isinstance(v, int) for v in value):
            raise ValidationError(f"{where}: expected a nonempty list of integers")
        return [int(v) for v in value]
    if tag == "grid":
        if isinstance(value, str):
            parse_grid(value)  # validates
            return value
        if isinstance(value, list) and all(isinstance(v, (int, float)) and not isinstance(v, bool)
                                           for v in value):
            return [float(v) for v in value]
        raise ValidationError(f"{where}: expected 'min:max:count' or a list of numbers")
    raise AssertionError(tag)


def parse_grid(spec) -> list:
    """Grid spec: explicit list or 'min:max:count'."""
    if isinstance(spec, list):
        return [float(v) for v in spec]
    parts = str(spec).split(":")
    if len(parts) != 3:
        raise ValidationError(f"grid spec {spec!r} is not 'min:max:count'")
    try:
        lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise ValidationError(f"grid spec {spec!r} is not 'min:max:count'") from None
    if count < 1 or not (lo <= hi):
        raise ValidationError(f"grid spec {spec!r} needs min <= max and count >= 1")
    if count == 1:
        return [lo]
    stepw = (hi - lo) / (count - 1)
    return [lo + i * stepw for i in range(count)]


def _parse_model(table: dict) -> ModelConfig:
    if "name" not in table:
        raise ParseError("missing key 'name' in [model]")
    name = table["name"]
    if name not in _MODEL_PARAM_KEYS:
        raise ValidationError(f"model: unknown model '{name}'")
    allowed = {"name", "m", "interval"} | _MODEL_PARAM_KEYS[name]
    _reject_unknown(table, allowed, "model")
    interval = table.get("interval")
    if interval is not None:
        if not (isinstance(interval, list) and len(interval) == 2):
            raise ValidationError("model: interval must be a two-element list")
        interval = (float(interval[0]), float(interval[1]))
    m = table.get("m")
    params = {k: table[k] for k in _MODEL_PARAM_KEYS[name] if k in table}
    return ModelConfig(name=name, params=params, interval=interval,
                       m=None if m is None else float(m))


def _parse_measure(table: dict) -> MeasureConfig:
    _reject_unknown(table, {"atoms", "density"}, "measure")
    has_atoms = "atoms" in table
    has_density = "density" in table
    if has_atoms == has_density:
        raise ParseError("[measure] needs exactly one of 'atoms' or 'density'")
    if has_atoms:
        atoms = table["atoms"]
        if not isinstance(atoms, list) or not all(
                isinstance(p, list) and len(p) == 2 for p in atoms):
            raise ValidationError("measure: atoms must be a list of [x, w] pairs")
        return MeasureConfig(atoms=tuple((float(x), float(w)) for x, w in atoms))
    dens = table["density"]
    if not isinstance(dens, dict) or "name" not in dens:
        raise ValidationError("measure: density must be a table with a 'name'")
    return MeasureConfig(density=dict(dens))


def _parse_command(table: dict) -> CommandConfig:
    if "name" not in table:
        raise ParseError("missing key 'name' in [command]")
    name = table["name"]
    if name not in _COMMAND_SCHEMAS:
        raise ValidationError(f"command: unknown command '{name}'")
    schema = _COMMAND_SCHEMAS[name]
    _reject_unknown(table, {"name", *schema}, "command")
    options = {}
    for key, (tag, required) in schema.items():
        if key in table:
            options[key] = _coerce(table[key], tag, f"command.{key}")
        elif required:
            raise ParseError(f"missing key '{key}' in [command] for '{name}'")
    if name == "converge" and options["study"] not in _STUDIES:
        raise ValidationError(f"command: unknown study '{options['study']}'")
    return CommandConfig(name=name, options=options)


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a config; raises ParseError/ValidationError."""
    try:
        data = _toml.loads(text)
    except _toml.TOMLDecodeError as exc:
        raise ParseError(f"config is not valid TOML: {exc}") from exc
    _reject_unknown(data, {"model", "measure", "command", "run", "tolerances"}, "config")
    for section in ("model", "measure", "command"):
        if section not in data:
            raise ParseError(f"missing section [{section}]")
    model = _parse_model(data["model"])
    measure = _parse_measure(data["measure"])
    command = _parse_command(data["command"])
    run = data.get("run", {})
    _reject_unknown(run, {"seed", "threads", "out_dir"}, "run")
    tolerances = dict(data.get("tolerances", {}))
    cfg = ExperimentConfig(
        model=model, measure=measure, command=command,
        seed=None if "seed" not in run else int(run["seed"]),
        threads=int(run.get("threads", 1)),
        out_dir=str(run.get("out_dir", ".")),
        tolerances=tolerances,
    )
    cfg.defaults()      # validates tolerance keys
    measure.build()     # validates the measure (centering etc.)
    model.build()       # validates the model
    return cfg


# ---------------------------------------------------------------------------
# serialization (restricted TOML writer; mirror has no tomli-w)
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        if math.isnan(value):
            return "nan"
        text = repr(value)
        return text if ("." in text or "e" in text or "E" in text
                        or "inf" in text or "nan" in text) else text + ".0"
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_fmt(v) for v in value) + "]"
    if isinstance(value, dict):
        inner = ", ".join(f"{k} = {_fmt(v)}" for k, v in value.items())
        return "{" + inner + "}"
    raise ValidationError(f"cannot serialize value {value!r}")


def serialize_config(cfg: ExperimentConfig) -> str:
    lines = ["[model]", f"name = {_fmt(cfg.model.name)}"]
    if cfg.model.m is not None:
        lines.append(f"m = {_fmt(cfg.model.m)}")
    if cfg.model.interval is not None:
        lines.append(f"interval = {_fmt(list(cfg.model.interval))}")
    for key in sorted(cfg.model.params):
        lines.append(f"{key} = {_fmt(cfg.model.params[key])}")
    lines.append("")
    lines.append("[measure]")
    if cfg.measure.atoms is not None:
        lines.append(f"atoms = {_fmt([list(p) for p in cfg.measure.atoms])}")
    else:
        lines.append(f"density = {_fmt(cfg.measure.density)}")
    lines.append("")
    lines.append("[command]")
    lines.append(f"name = {_fmt(cfg.command.name)}")
    for key in sorted(cfg.command.options):
        lines.append(f"{key} = {_fmt(cfg.command.options[key])}")
    lines.append("")
    lines.append("[run]")
    if cfg.seed is not None:
        lines.append(f"seed = {_fmt(cfg.seed)}")
    lines.append(f"threads = {_fmt(cfg.threads)}")
    lines.append(f"out_dir = {_fmt(cfg.out_dir)}")
    if cfg.tolerances:
        lines.append("")
        lines.append("[tolerances]")
        for key in sorted(cfg.tolerances):
            lines.append(f"{key} = {_fmt(cfg.tolerances[key])}")
    return "\n".join(lines) + "\n"
