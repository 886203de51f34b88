"""Experiment configuration: sectioned key-value text (INI) with full defaults.

Every key is optional; an empty file resolves to the reference parameter set.
The resolved configuration is rendered canonically and hashed, and the hash is
echoed in every emitted CSV.

Schema (section / key / default):

    [bath]        omega 0.4, eta 0.8, gamma 3.0, beta 1.0, lambda1 0.2,
                  lambda_u 1.8, scheme pade, n_thermal auto, tolerance 1e-3,
                  t_window 10
    [system]      delta_eps1 1.0, delta_eps2 1.0, V 0.25, u 1.0, v1 0.5, v2 0.0
    [correlation] mode uncorrelated (uncorrelated | fully_correlated | explicit),
                  delta 0.0 (used by explicit),
                  sweep_modes uncorrelated, fully_correlated
    [control]     t0 0.0, tf 1.0, N 32, strength 0.01, n_vectors 3,
                  sample_fraction 0.1
    [target]      beta_tilde 8, 4, 2, 1, 0.5, 0.25, 0.125, headroom 8,
                  dbeta auto
    [propagation] L 4, dt 0.005, repetitions 10, stride 0.02,
                  max_indices 2000000
    [output]      dir out
"""
from __future__ import annotations

import configparser
import hashlib
import math
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError

CORRELATION_MODES = ("uncorrelated", "fully_correlated", "explicit")


@dataclass(frozen=True)
class BathSection:
    omega: float = 0.4
    eta: float = 0.8
    gamma: float = 3.0
    beta: float = 1.0
    lambda1: float = 0.2
    lambda_u: float = 1.8
    scheme: str = "pade"
    n_thermal: int | None = None
    tolerance: float = 1e-3
    t_window: float = 10.0


@dataclass(frozen=True)
class SystemSection:
    delta_eps1: float = 1.0
    delta_eps2: float = 1.0
    V: float = 0.25
    u: float = 1.0
    v1: float = 0.5
    v2: float = 0.0


@dataclass(frozen=True)
class CorrelationSection:
    mode: str = "uncorrelated"
    delta: float = 0.0
    sweep_modes: tuple = ("uncorrelated", "fully_correlated")


@dataclass(frozen=True)
class ControlSection:
    t0: float = 0.0
    tf: float = 1.0
    N: int = 32
    strength: float = 0.01
    n_vectors: int = 3
    sample_fraction: float = 0.1


@dataclass(frozen=True)
class TargetSection:
    beta_tilde: tuple = (8.0, 4.0, 2.0, 1.0, 0.5, 0.25, 0.125)
    headroom: int = 8
    dbeta: float | None = None


@dataclass(frozen=True)
class PropagationSection:
    L: int = 4
    dt: float = 0.005
    repetitions: int = 10
    stride: float = 0.02
    max_indices: int = 2_000_000


@dataclass(frozen=True)
class OutputSection:
    dir: str = "out"


_SECTIONS = {
    "bath": BathSection,
    "system": SystemSection,
    "correlation": CorrelationSection,
    "control": ControlSection,
    "target": TargetSection,
    "propagation": PropagationSection,
    "output": OutputSection,
}


@dataclass(frozen=True)
class ExperimentConfig:
    bath: BathSection = field(default_factory=BathSection)
    system: SystemSection = field(default_factory=SystemSection)
    correlation: CorrelationSection = field(default_factory=CorrelationSection)
    control: ControlSection = field(default_factory=ControlSection)
    target: TargetSection = field(default_factory=TargetSection)
    propagation: PropagationSection = field(default_factory=PropagationSection)
    output: OutputSection = field(default_factory=OutputSection)

    def canonical(self, include_output=True) -> str:
        lines = []
        for name in _SECTIONS:
            if name == "output" and not include_output:
                continue
            lines.append(f"[{name}]")
            for key, val in sorted(asdict(getattr(self, name)).items()):
                lines.append(f"{key} = {_render(val)}")
        return "\n".join(lines) + "\n"

    @property
    def hash(self) -> str:
        # the output location does not change any computed number
        return hashlib.sha256(self.canonical(include_output=False).encode()).hexdigest()

    def with_correlation(self, mode, delta=None) -> "ExperimentConfig":
        corr = CorrelationSection(mode, self.correlation.delta if delta is None else float(delta),
                                  self.correlation.sweep_modes)
        return _replace(self, correlation=corr)

    def with_beta_tilde(self, values) -> "ExperimentConfig":
        tgt = TargetSection(tuple(float(v) for v in values), self.target.headroom, self.target.dbeta)
        return _replace(self, target=tgt)

    def with_output(self, directory) -> "ExperimentConfig":
        return _replace(self, output=OutputSection(str(directory)))

    def delta_value(self) -> float:
        c = self.correlation
        if c.mode == "uncorrelated":
            return 0.0
        if c.mode == "fully_correlated":
            return math.sqrt(self.bath.lambda1 * self.bath.lambda_u)
        return c.delta


def _replace(cfg, **changes):
    vals = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    vals.update(changes)
    return ExperimentConfig(**vals)


def _render(val) -> str:
    if val is None:
        return "auto"
    if isinstance(val, tuple):
        return ", ".join(_render(v) for v in val)
    if isinstance(val, float):
        return repr(val)
    return str(val)


def _parse_value(section, key, raw, default, annotation):
    raw = raw.strip()
    try:
        if isinstance(default, tuple):
            items = [x.strip() for x in raw.split(",") if x.strip()]
            if not items:
                raise ValueError("empty list")
            if default and isinstance(default[0], str):
                return tuple(items)
            return tuple(float(x) for x in items)
        if raw.lower() in ("auto", "none", ""):
            if "None" in str(annotation):
                return None
            raise ValueError("a value is required")
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int) or "int" in str(annotation):
            return int(raw)
        if isinstance(default, float) or "float" in str(annotation):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from None


def _validate(cfg: ExperimentConfig):
    b, s, c, ctl, t, p = cfg.bath, cfg.system, cfg.correlation, cfg.control, cfg.target, cfg.propagation
    checks = [
        (b.omega > 0 and b.gamma > 0 and b.beta > 0, "bath omega, gamma and beta must be positive"),
        (b.eta >= 0, "bath eta must be nonnegative"),
        (b.lambda1 >= 0 and b.lambda_u >= 0, "reorganization energies must be nonnegative"),
        (b.scheme in ("pade", "matsubara"), "bath scheme must be pade or matsubara"),
        (b.tolerance > 0, "bath tolerance must be positive"),
        (c.mode in CORRELATION_MODES, f"correlation mode must be one of {CORRELATION_MODES}"),
        (all(m in CORRELATION_MODES for m in c.sweep_modes), "unknown sweep correlation mode"),
        (ctl.tf > ctl.t0, "control window needs t0 < tf"),
        (ctl.N >= 8, "control grid needs N >= 8"),
        (ctl.strength >= 0, "integration strength must be nonnegative"),
        (ctl.n_vectors >= 3, "at least three eigenvectors are combined"),
        (0.0 <= ctl.sample_fraction <= 1.0, "sample_fraction must lie in [0, 1]"),
        (all(x > 0 for x in t.beta_tilde), "beta_tilde values must be positive"),
        (t.headroom >= 0, "target headroom must be nonnegative"),
        (t.dbeta is None or t.dbeta > 0, "dbeta must be positive"),
        (p.L >= 1, "tier cap L must be at least 1"),
        (p.dt > 0 and p.stride > 0, "dt and stride must be positive"),
        (p.repetitions >= 1, "repetitions must be at least 1"),
    ]
    for ok, msg in checks:
        if not ok:
            raise ConfigError(msg)


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    unknown = set(parser.sections()) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    built = {}
    for name, cls in _SECTIONS.items():
        defaults = cls()
        kinds = {f.name: f.type for f in fields(cls)}
        values = {}
        if parser.has_section(name):
            for key, raw in parser.items(name):
                if key not in kinds:
                    raise ConfigError(f"unknown key [{name}] {key}")
                values[key] = _parse_value(name, key, raw, getattr(defaults, key), kinds[key])
        built[name] = cls(**values)
    cfg = ExperimentConfig(**built)
    _validate(cfg)
    return cfg


def load_config(path=None) -> ExperimentConfig:
    """Read a config file; ``None`` gives the defaults."""
    if path is None:
        return parse_config("")
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)
