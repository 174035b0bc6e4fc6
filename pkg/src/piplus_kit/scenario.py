"""TOML scenario files mapped onto dataclass configs.

Unknown sections or keys are rejected; errors carry the line and column of the
offending text whenever it can be located.
"""
from __future__ import annotations

import dataclasses
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import numpy as np

from .model import (
    Certificate,
    Grid,
    SystemModel,
    TransitionTable,
    counterexample_model,
    discretize,
    load_table_csv,
    lq_model,
)


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        where = f" (line {line}, column {col})" if line is not None else ""
        super().__init__(message + where)
        self.line = line
        self.col = col


@dataclass
class ModelConfig:
    kind: str = "lq"
    a: float = 0.9
    b: float = 1.0
    q: float = 1.0
    r: float = 1.0
    u_max: float = 5.0
    k0: float = -0.5
    delta: float = 0.01
    table_path: str = ""
    state_dim: int = 1
    input_dim: int = 1
    attractor_tol: float = 0.0


@dataclass
class GridConfig:
    lower: list = field(default_factory=lambda: [-2.0])
    upper: list = field(default_factory=lambda: [2.0])
    num: list = field(default_factory=lambda: [2001])
    n_inputs: int = 201
    sigma_abs: float | None = None


@dataclass
class CertificateConfig:
    enabled: bool = True
    s_max: float = 4.0
    on_misdeclared: str = "fallback"


@dataclass
class RunConfig:
    algo: str = "piplus"
    iters: int = 10
    select: str = "lowest"
    seed: int = 0
    eps_tie: float = 1e-9
    tol_stop: float = 0.0


@dataclass
class ChecksConfig:
    kl: bool = True
    lyapunov: bool = True
    near_optimality: bool = True
    monotone: bool = True
    same_cost: bool = False
    robust: bool = False
    n_initial: int = 100
    horizon: int = 50
    eps_check: float = 1e-6


@dataclass
class BoundsConfig:
    s_values: list = field(default_factory=lambda: [0.0, 0.25, 0.5, 1.0, 2.0, 4.0])
    k_max: int = 20
    eps_abs: float = 0.01
    eps_rel: float = 0.01
    delta: float = 4.0
    i_max: int = 1000


@dataclass
class RobustConfig:
    rho_max: float = 0.06
    ratio: float = 0.99
    n_levels: int = 100
    delta: float = 0.01
    Delta: float = 1.0
    trials: int = 200
    validation_trials: int = 1000
    horizon: int = 50
    mode: str = "worst"
    iterations: list = field(default_factory=lambda: [0, 10])

    def levels(self) -> list[float]:
        return [self.rho_max * self.ratio ** j for j in range(self.n_levels)] + [0.0]


@dataclass
class DiagnosticsConfig:
    lsc_probes: list = field(default_factory=list)
    lsc_levels: int = 3
    analytic_candidates: int = 21


@dataclass
class OutputConfig:
    dir: str = "out"


@dataclass
class Scenario:
    model: ModelConfig = field(default_factory=ModelConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    certificate: CertificateConfig = field(default_factory=CertificateConfig)
    run: RunConfig = field(default_factory=RunConfig)
    checks: ChecksConfig = field(default_factory=ChecksConfig)
    bounds: BoundsConfig = field(default_factory=BoundsConfig)
    robust: RobustConfig = field(default_factory=RobustConfig)
    diagnostics: DiagnosticsConfig = field(default_factory=DiagnosticsConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    source: str = ""

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


CHOICES = {
    ("model", "kind"): ("lq", "counterexample", "table"),
    ("certificate", "on_misdeclared"): ("fallback", "raise"),
    ("run", "algo"): ("pi", "piplus", "oracle"),
    ("run", "select"): ("lowest", "adversarial", "random"),
    ("robust", "mode"): ("worst", "random"),
}


def _locate(text: str, section: str, key: str | None) -> tuple[int | None, int | None]:
    lines = text.splitlines()
    in_section = key is None
    for n, line in enumerate(lines, start=1):
        stripped = line.strip()
        if re.match(rf"^\[\s*{re.escape(section)}\s*\]", stripped):
            if key is None:
                return n, line.index("[") + 1
            in_section = True
            continue
        if stripped.startswith("["):
            in_section = False
        if in_section and key is not None:
            m = re.match(rf"^\s*{re.escape(key)}\s*=", line)
            if m:
                return n, line.index(key) + 1
    return None, None


def _coerce(value: Any, default: Any, where: str):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise TypeError(f"{where} must be a boolean")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise TypeError(f"{where} must be an integer")
        return value
    if isinstance(default, float) or default is None:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeError(f"{where} must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise TypeError(f"{where} must be a string")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise TypeError(f"{where} must be an array")
        return list(value)
    return value


def from_dict(raw: dict, text: str = "", source: str = "") -> Scenario:
    """Build a Scenario from parsed TOML, rejecting unknown sections and keys."""
    sc = Scenario(source=source)
    sections = {f.name for f in dataclasses.fields(Scenario) if f.name != "source"}
    for name, body in raw.items():
        if name not in sections:
            raise ConfigError(f"unknown section [{name}]", *_locate(text, name, None))
        if not isinstance(body, dict):
            raise ConfigError(f"[{name}] must be a table", *_locate(text, name, None))
        cfg = getattr(sc, name)
        known = {f.name: f for f in dataclasses.fields(cfg)}
        for key, value in body.items():
            if key not in known:
                raise ConfigError(f"unknown key {name}.{key}", *_locate(text, name, key))
            try:
                value = _coerce(value, getattr(cfg, key), f"{name}.{key}")
            except TypeError as exc:
                raise ConfigError(str(exc), *_locate(text, name, key)) from None
            choices = CHOICES.get((name, key))
            if choices and value not in choices:
                raise ConfigError(f"{name}.{key} = {value!r} not in {choices}", *_locate(text, name, key))
            setattr(cfg, key, value)
    _validate(sc, text)
    return sc


def _validate(sc: Scenario, text: str = ""):
    g = sc.grid
    if not (len(g.lower) == len(g.upper) == len(g.num)):
        raise ConfigError("grid.lower, grid.upper and grid.num must have equal length", *_locate(text, "grid", "num"))
    if sc.run.iters < 0:
        raise ConfigError("run.iters must be nonnegative", *_locate(text, "run", "iters"))
    if sc.model.kind == "table" and not sc.model.table_path:
        raise ConfigError("model.table_path required for kind = 'table'", *_locate(text, "model", "kind"))


def load(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc.strerror}") from None
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+), column (\d+)", str(exc))
        line, col = (int(m.group(1)), int(m.group(2))) if m else (None, None)
        msg = re.sub(r"\s*\(at line \d+, column \d+\)", "", str(exc))
        raise ConfigError(f"{path}: {msg}", line, col) from None
    return from_dict(raw, text, str(path))


def with_overrides(sc: Scenario, **overrides) -> Scenario:
    """Apply command-line overrides (None values are ignored)."""
    sc = dataclasses.replace(sc, run=dataclasses.replace(sc.run), output=dataclasses.replace(sc.output))
    for key in ("algo", "iters", "select", "seed"):
        if overrides.get(key) is not None:
            setattr(sc.run, key, overrides[key])
    if overrides.get("out") is not None:
        sc.output.dir = str(overrides["out"])
    _validate(sc)
    return sc


def build_model(sc: Scenario) -> tuple[SystemModel | None, Certificate | None]:
    m = sc.model
    if m.kind == "lq":
        return lq_model(m.a, m.b, m.q, m.r, m.u_max, m.k0)
    if m.kind == "counterexample":
        return counterexample_model(m.delta)
    return None, None


def build_table(sc: Scenario) -> tuple[TransitionTable, SystemModel | None, Certificate | None]:
    model, cert = build_model(sc)
    if model is None:
        base = Path(sc.source).parent if sc.source else Path(".")
        table = load_table_csv(base / sc.model.table_path, sc.model.state_dim, sc.model.input_dim,
                               sc.model.attractor_tol)
        return table, None, None
    g = sc.grid
    grid = Grid(np.asarray(g.lower, float), np.asarray(g.upper, float), np.asarray(g.num, int), g.sigma_abs)
    return discretize(model, grid, g.n_inputs), model, (cert if sc.certificate.enabled else None)


__all__ = ["ConfigError", "Scenario", "ModelConfig", "GridConfig", "CertificateConfig", "RunConfig",
           "ChecksConfig", "BoundsConfig", "RobustConfig", "DiagnosticsConfig", "OutputConfig",
           "load", "from_dict", "with_overrides", "build_model", "build_table"]
