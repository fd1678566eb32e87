"""Dataclass configs and the flat ``key = value`` config-file format.

Config files are UTF-8 text; ``#`` starts a comment; blank lines are
ignored. Unknown keys are an error so typos never pass silently.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .errors import ContractError, IoError
from .odenet import SolverConfig

VARIANTS = ("full", "no_ode", "no_att")


class ConfigError(ContractError):
    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


@dataclass
class ModelConfig:
    window: int = 20
    horizon: int = 3
    hidden: int = 10
    latent: int = 32
    noise_std: float = 0.05
    l2: float = 0.001
    learning_rate: float = 0.01
    batch_size: int = 128
    epochs: int = 100
    seed: int = 0
    variant: str = "full"
    solver: str = "rk4"
    step: float = 0.1
    rtol: float = 1e-6
    atol: float = 1e-8
    max_steps: int = 10_000
    reset_gate: bool = True
    train_split: float = 0.9
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}", "variant")
        for name in ("window", "horizon", "hidden", "latent", "batch_size", "epochs", "max_steps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive", name)
        for name in ("noise_std", "learning_rate", "step", "rtol", "atol"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive", name)
        if self.l2 < 0:
            raise ConfigError("l2 must be non-negative", "l2")
        if not 0 < self.train_split < 1 or not 0 <= self.val_fraction < 1:
            raise ConfigError("train_split must lie in (0, 1) and val_fraction in [0, 1)")
        self.solver_config()

    def solver_config(self) -> SolverConfig:
        return SolverConfig(self.solver, self.step, self.rtol, self.atol, self.max_steps)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class RunConfig:
    """Everything a CLI command needs: model hyperparameters plus paths and columns."""

    model: ModelConfig = field(default_factory=ModelConfig)
    data: Optional[str] = None
    target: str = "y"
    exogenous: tuple = ()
    out: str = "runs/latest"
    checkpoint: Optional[str] = None
    offsets: Optional[str] = None
    resample_half: bool = False


_RUN_KEYS = {f.name for f in fields(RunConfig)} - {"model"}
# dotted spellings accepted for readability in config files
ALIASES = {"field.reset_gate": "reset_gate"}
_MODEL_FIELDS = {f.name: f for f in fields(ModelConfig)}


def _convert(name: str, typ, raw: str):
    raw = raw.strip()
    try:
        if typ in (bool, "bool"):
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}", name) from None
    return raw


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def build_run_config(values: dict) -> RunConfig:
    """Typed config from raw string (or already typed) values; rejects unknown keys."""
    model_kw, run_kw = {}, {}
    for key, raw in values.items():
        key = ALIASES.get(key, key)
        if key in _MODEL_FIELDS:
            typ = _MODEL_FIELDS[key].type
            model_kw[key] = _convert(key, typ, raw) if isinstance(raw, str) else raw
        elif key in _RUN_KEYS:
            if key == "exogenous":
                run_kw[key] = tuple(p.strip() for p in raw.split(",") if p.strip()) if isinstance(raw, str) else tuple(raw)
            elif key == "resample_half":
                run_kw[key] = _convert(key, bool, raw) if isinstance(raw, str) else bool(raw)
            else:
                run_kw[key] = raw
        else:
            raise ConfigError(f"unknown config key {key!r}", key)
    return RunConfig(model=ModelConfig(**model_kw), **run_kw)


def load_config(path) -> dict[str, str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text)


def format_config(rc: RunConfig) -> str:
    """Inverse of :func:`build_run_config`; the output is itself a valid config file."""
    lines = []
    for f in fields(RunConfig):
        if f.name == "model":
            continue
        value = getattr(rc, f.name)
        if value is None:
            continue
        if f.name == "exogenous":
            value = ",".join(value)
        lines.append(f"{f.name} = {_fmt(value)}")
    for name, value in rc.model.to_dict().items():
        lines.append(f"{name} = {_fmt(value)}")
    return "\n".join(lines) + "\n"


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)
