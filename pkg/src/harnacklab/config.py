"""Experiment configuration: TOML with sections ``[model]``, ``[shift]``, ``[run]``, ``[output]``.

Unknown keys are rejected, and the time step must divide the delay and the
horizon exactly in decimal arithmetic.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction

import tomli
import tomli_w


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


@dataclass
class ModelConfig:
    kind: str = "delay"
    n: int | None = None
    beta: float | None = None
    tau: float = 0.5
    drift: str = "bounded-smooth"
    drift_c: float = 0.5
    c_now: float = -0.3
    c_delay: float = 0.5
    sigma: float = 1.0
    a_plus: float = 0.0
    theta: float = 0.5
    q0: float = 1.0
    nonlinearity: str = "burgers"
    strength: float = 1.0
    K4: float | None = None


@dataclass
class ShiftConfig:
    eta: str = "semigroup"
    eta_vector: list = field(default_factory=lambda: [0.5])
    eta_coeffs: list = field(default_factory=lambda: [1.0, 0.5])
    control: str = "theorem"
    u_power: float = 2.0
    e: list = field(default_factory=lambda: [0.2, 0.1])
    r: float | None = None


@dataclass
class RunConfig:
    T: float | None = None
    step: float = 0.015625
    n_paths: int = 20000
    seed: int = 0
    p: list = field(default_factory=lambda: [2.0, 4.0])
    C_psi: float | None = None
    x0: list = field(default_factory=lambda: [1.0])
    xi: list = field(default_factory=lambda: [0.0])
    resolution: float | None = None


@dataclass
class OutputConfig:
    directory: str = "harnack-out"
    formats: str = "both"
    dump_paths: bool = False


SECTIONS = {"model": ModelConfig, "shift": ShiftConfig, "run": RunConfig,
            "output": OutputConfig}
CHOICES = {
    ("model", "kind"): ("delay", "evolution"),
    ("model", "drift"): ("linear", "bounded-smooth", "modulus", "zero"),
    ("model", "nonlinearity"): ("burgers", "zero"),
    ("shift", "eta"): ("semigroup", "constant", "polynomial", "zero"),
    ("shift", "control"): ("theorem", "lemma3", "remark"),
    ("output", "formats"): ("json", "csv", "both"),
}
DEFAULT_T = {"delay": 1.5, "evolution": 1.0}


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    shift: ShiftConfig = field(default_factory=ShiftConfig)
    run: RunConfig = field(default_factory=RunConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        parts = {}
        for name, value in data.items():
            if name not in SECTIONS:
                raise ConfigError(f"unknown section [{name}]")
            if not isinstance(value, dict):
                raise ConfigError(f"[{name}] must be a table")
            known = {f.name for f in fields(SECTIONS[name])}
            for key in value:
                if key not in known:
                    raise ConfigError(f"unknown key '{key}' in [{name}]")
            parts[name] = SECTIONS[name](**value)
        cfg = cls(**parts)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path, "rb") as fh:
                data = tomli.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        out = {}
        for name in SECTIONS:
            sec = {k: v for k, v in asdict(getattr(self, name)).items() if v is not None}
            out[name] = sec
        return out

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def horizon(self, kind: str) -> float:
        if self.run.T is not None and kind == self.model.kind:
            return self.run.T
        return DEFAULT_T[kind]

    def validate(self):
        for (sec, key), allowed in CHOICES.items():
            val = getattr(getattr(self, sec), key)
            if val not in allowed:
                raise ConfigError(f"[{sec}] {key} = {val!r}; expected one of {allowed}")
        m, r = self.model, self.run
        positive = [("model", "tau", m.tau), ("model", "sigma", m.sigma), ("model", "q0", m.q0),
                    ("model", "theta", m.theta), ("run", "step", r.step),
                    ("run", "n_paths", r.n_paths)]
        if r.T is not None:
            positive.append(("run", "T", r.T))
        for sec, key, val in positive:
            if not val > 0:
                raise ConfigError(f"[{sec}] {key} must be positive, got {val!r}")
        if m.theta > 1:
            raise ConfigError("[model] theta must lie in (0, 1]")
        if m.a_plus < 0:
            raise ConfigError("[model] a_plus must be nonnegative")
        if m.n is not None and m.n < 1:
            raise ConfigError("[model] n must be at least 1")
        if m.beta is not None and m.beta < 1:
            raise ConfigError("[model] beta must be at least 1")
        if m.K4 is not None and m.K4 <= 0:
            raise ConfigError("[model] K4 must be positive")
        if r.C_psi is not None and r.C_psi <= 0:
            raise ConfigError("[run] C_psi must be positive")
        ps = r.p if isinstance(r.p, list) else [r.p]
        if not ps or any(not float(p) > 1 for p in ps):
            raise ConfigError(f"[run] p must exceed 1, got {r.p!r}")
        if r.seed < 0:
            raise ConfigError("[run] seed must be nonnegative")
        step = _decimal(r.step)
        checks = [("[model] tau", m.tau), ("[run] T (delay)", self.horizon("delay")),
                  ("[run] T (evolution)", self.horizon("evolution"))]
        for name, length in checks:
            ratio = _decimal(length) / step
            if ratio.denominator != 1:
                raise ConfigError(f"step {r.step} does not divide {name} = {length}")
        if self.horizon("delay") <= m.tau:
            raise ConfigError("delay horizon T must exceed tau")


def _decimal(x) -> Fraction:
    return Fraction(repr(float(x)))
