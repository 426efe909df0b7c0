"""INI-style run configuration with strict key checking and environment overrides.

Sections are ``[model]``, ``[projector]``, ``[solver]`` and ``[output]``.
Any key can be overridden by ``TCLKG_<SECTION>__<KEY>`` in the environment.
"""
from __future__ import annotations

import configparser
import math
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

ENV_PREFIX = "TCLKG_"

MODEL_KINDS = ("resonance_fluorescence",)
PROJECTOR_KINDS = ("kg", "constant")
ANSATZ_NAMES = ("bloch_xz", "sqrt_two_level", "gibbs_z", "renyi_z")
F_SELECTORS = ("zero", "quadratic")


class ParseError(ValueError):
    """Malformed configuration text; carries the offending line and key when known."""

    def __init__(self, msg, line=None, key=None):
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if key is not None:
            loc.append(f"key {key!r}")
        super().__init__(f"{msg} ({', '.join(loc)})" if loc else msg)
        self.line = line
        self.key = key


class ValidationError(ValueError):
    """A well-formed configuration whose value for ``field`` is not acceptable."""

    def __init__(self, field_name, msg):
        super().__init__(f"{field_name}: {msg}")
        self.field = field_name


def _floats(text):
    text = text.strip().strip("[]")
    if not text:
        return ()
    return tuple(float(x) for x in text.replace(";", ",").split(",") if x.strip())


def _bool(text):
    value = text.strip().lower()
    if value in ("1", "yes", "true", "on"):
        return True
    if value in ("0", "no", "false", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text):
    return None if text.strip().lower() in ("", "none") else float(text)


def _option(default, parse):
    return field(default=default, metadata={"parse": parse})


@dataclass(frozen=True)
class ModelConfig:
    kind: str = _option("resonance_fluorescence", str)
    omega: float = _option(1.0, float)
    gamma0: float = _option(1.0, float)
    n_thermal: float = _option(0.0, float)
    high_temperature: bool = _option(False, _bool)
    gamma: float | None = _option(None, _opt_float)
    lam: float = _option(0.1, float)
    lambda_list: tuple = _option(tuple(float(x) for x in np.geomspace(0.02, 0.2, 8)), _floats)
    wick_lambda_list: tuple = _option((0.2, 0.1, 0.05), _floats)


@dataclass(frozen=True)
class ProjectorConfig:
    kind: str = _option("kg", str)
    ansatz: str = _option("bloch_xz", str)
    alpha: float = _option(0.4, float)
    f: str = _option("zero", str)
    initial: tuple = _option((), _floats)


@dataclass(frozen=True)
class SolverConfig:
    tol: float = _option(1e-12, float)
    n_grid: int = _option(301, int)
    t0: float = _option(0.0, float)
    t_max: float | None = _option(None, _opt_float)
    order: int = _option(2, int)
    n_max: int = _option(3, int)


@dataclass(frozen=True)
class OutputConfig:
    directory: str = _option("out", str)
    prefix: str = _option("", str)


SECTIONS = {"model": ModelConfig, "projector": ProjectorConfig, "solver": SolverConfig, "output": OutputConfig}


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    projector: ProjectorConfig = field(default_factory=ProjectorConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def with_output(self, directory):
        return replace(self, output=replace(self.output, directory=str(directory)))


def _section_values(name, cls, items, lines):
    known = {f.name: f for f in fields(cls)}
    values = {}
    for key, raw in items:
        if key not in known:
            raise ValidationError(f"{name}.{key}", "unknown key")
        try:
            values[key] = known[key].metadata["parse"](raw)
        except ValueError as exc:
            raise ParseError(f"cannot read {name}.{key}: {exc}", lines.get((name, key)), key) from exc
    return values


def _line_numbers(text):
    lines, section = {}, None
    for i, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
        elif section and s and s[0] not in "#;" and ("=" in s or ":" in s):
            key = s.split("=" if "=" in s else ":", 1)[0].strip().lower()
            lines[(section, key)] = i
    return lines


def parse_config_text(text, environ=None):
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ParseError("key outside any section", exc.lineno) from exc
    except configparser.DuplicateOptionError as exc:
        raise ParseError("duplicate key", exc.lineno, exc.option) from exc
    except configparser.DuplicateSectionError as exc:
        raise ParseError(f"duplicate section [{exc.section}]", exc.lineno) from exc
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ParseError("malformed line", line) from exc
    lines = _line_numbers(text)
    raw = {s: dict(parser.items(s)) for s in parser.sections()}
    for s in raw:
        if s not in SECTIONS:
            raise ValidationError(s, "unknown section")
    environ = os.environ if environ is None else environ
    for var, value in environ.items():
        if not var.startswith(ENV_PREFIX):
            continue
        section, sep, key = var[len(ENV_PREFIX):].lower().partition("__")
        if not sep or section not in SECTIONS:
            raise ValidationError(var, f"environment overrides look like {ENV_PREFIX}<SECTION>__<KEY>")
        raw.setdefault(section, {})[key] = value
    parts = {name: cls(**_section_values(name, cls, raw.get(name, {}).items(), lines)) for name, cls in SECTIONS.items()}
    config = RunConfig(**parts)
    validate(config)
    return config


def parse_config(path=None, environ=None):
    """Read and validate a configuration file; ``None`` gives the defaults (plus env overrides)."""
    if path is None:
        return parse_config_text("", environ)
    path = Path(path)
    if not path.is_file():
        raise ParseError(f"config file {path} not found")
    return parse_config_text(path.read_text(), environ)


def validate(config):
    for section in SECTIONS:
        part = getattr(config, section)
        for f in fields(part):
            value = getattr(part, f.name)
            items = value if isinstance(value, tuple) else (value,)
            for v in items:
                if isinstance(v, float) and not math.isfinite(v):
                    raise ValidationError(f"{section}.{f.name}", "must be finite")
    m, p, s = config.model, config.projector, config.solver
    if m.kind not in MODEL_KINDS:
        raise ValidationError("model.kind", f"unknown model {m.kind!r}; known: {', '.join(MODEL_KINDS)}")
    if not m.lambda_list:
        raise ValidationError("model.lambda_list", "must not be empty")
    if not m.wick_lambda_list:
        raise ValidationError("model.wick_lambda_list", "must not be empty")
    if any(x <= 0 for x in m.lambda_list + m.wick_lambda_list):
        raise ValidationError("model.lambda_list", "coupling values must be positive")
    if m.n_thermal < 0:
        raise ValidationError("model.n_thermal", "must be >= 0")
    if p.kind not in PROJECTOR_KINDS:
        raise ValidationError("projector.kind", f"unknown projector {p.kind!r}; known: {', '.join(PROJECTOR_KINDS)}")
    if p.ansatz not in ANSATZ_NAMES:
        raise ValidationError("projector.ansatz", f"unknown ansatz {p.ansatz!r}; known: {', '.join(ANSATZ_NAMES)}")
    if p.f not in F_SELECTORS:
        raise ValidationError("projector.f", f"unknown selector {p.f!r}; known: {', '.join(F_SELECTORS)}")
    if s.tol <= 0:
        raise ValidationError("solver.tol", "must be positive")
    if s.n_grid < 2:
        raise ValidationError("solver.n_grid", "must be >= 2")
    if s.order not in (1, 2):
        raise ValidationError("solver.order", "must be 1 or 2")
    if s.n_max < 1:
        raise ValidationError("solver.n_max", "must be >= 1")
    if s.t_max is not None and s.t_max <= s.t0:
        raise ValidationError("solver.t_max", "must exceed t0")
    return config
