"""Scenario files: TOML with flat dotted keys.

A scenario names a model family and its matrices, the initial law, the
run grid and the experiments to perform.  Shipped scenarios live in
``fracmv/scenarios`` and can be loaded by name.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError, FracMVError
from .grid import HurstPair, TimeGrid
from .model import DegenerateSpec, InitialLaw, LinearMeanFieldModel

FAMILIES = ("linear",)
CHECKS = ("selftests", "stability", "harnack", "bismut")


@dataclass
class RunConfig:
    T: float = 1.0
    steps: int = 256
    paths: int = 10_000
    seed: int = 0
    t0: tuple = (1.0,)

    def __post_init__(self):
        if not self.T > 0:
            raise ConfigError("run.T must be positive")
        if self.steps < 16:
            raise ConfigError("run.steps must be at least 16")
        if self.paths < 2:
            raise ConfigError("run.paths must be at least 2")
        grid = self.grid
        for t in self.t0:
            try:
                grid.node_index(t)
            except FracMVError as exc:
                raise ConfigError(f"run.t0 value {t} is not a grid node") from exc

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.T, self.steps)


@dataclass
class Scenario:
    name: str
    model: object
    initial: InitialLaw
    run: RunConfig
    checks: tuple = ()
    options: dict = field(default_factory=dict)
    out_dir: str | None = None
    emit_plots: bool = False

    @property
    def degenerate(self) -> bool:
        return isinstance(self.model, DegenerateSpec)

    def option(self, check: str, key: str, default=None):
        return self.options.get(check, {}).get(key, default)


def shipped_scenarios() -> list[str]:
    root = resources.files("fracmv") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def _read(source) -> tuple[str, dict]:
    path = Path(source)
    try:
        if path.suffix == ".toml" or path.exists():
            return path.stem, tomllib.loads(path.read_text())
        ref = resources.files("fracmv") / "scenarios" / f"{source}.toml"
        if not ref.is_file():
            raise ConfigError(f"no scenario file or shipped scenario named {source!r}")
        return str(source), tomllib.loads(ref.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {source}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read {source}: {exc}") from exc


def _take(section: dict, key: str, prefix: str, default=...):
    if key in section:
        return section[key]
    if default is ...:
        raise ConfigError(f"missing key {prefix}.{key}")
    return default


def _matrix(section, key, prefix, rows, cols, default=...):
    v = _take(section, key, prefix, default)
    try:
        a = np.asarray(v, dtype=float)
        if a.ndim < 2:
            a = a.reshape(rows, cols)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{prefix}.{key} must be a row-major list of numbers") from exc
    if a.shape != (rows, cols):
        raise ConfigError(f"{prefix}.{key} has shape {a.shape}, expected {(rows, cols)}")
    return a


def build_model(cfg: dict):
    """Model (or degenerate system) described by the ``model`` and
    ``degenerate`` sections."""
    mod = cfg.get("model")
    if not isinstance(mod, dict):
        raise ConfigError("missing [model] section")
    family = _take(mod, "family", "model")
    if family not in FAMILIES:
        raise ConfigError(f"unknown model family {family!r}; known: {', '.join(FAMILIES)}")
    deg = cfg.get("degenerate")
    d = int(_take(mod, "d", "model"))
    if deg is not None:
        m, l = int(_take(deg, "m", "degenerate")), int(_take(deg, "l", "degenerate"))
        if m + l != d:
            raise ConfigError("model.d must equal degenerate.m + degenerate.l")
    else:
        l = d
    H, Ht = float(_take(mod, "H", "model")), float(_take(mod, "Htilde", "model"))
    try:
        hurst = HurstPair(H, Ht, allow_brownian=bool(mod.get("brownian", False)))
        inner = LinearMeanFieldModel(
            _matrix(mod, "A0", "model", l, d), _matrix(mod, "A1", "model", l, d),
            np.asarray(_take(mod, "c", "model"), dtype=float),
            _matrix(mod, "sigma", "model", l, l), _matrix(mod, "S0", "model", l, l),
            _matrix(mod, "S1", "model", l, l, np.zeros((l, l))), hurst,
            kappa=mod.get("kappa"), kappa_tilde=mod.get("kappa_tilde"),
            p=float(mod.get("p", 2.0)))
        if deg is None:
            return inner
        return DegenerateSpec(m, l, _matrix(deg, "A", "degenerate", m, m),
                              _matrix(deg, "B", "degenerate", m, l), inner)
    except ConfigError:
        raise
    except (FracMVError, ValueError) as exc:
        raise ConfigError(f"invalid model: {exc}") from exc


def load_scenario(source) -> Scenario:
    """Parse a scenario file (path) or a shipped scenario (name)."""
    name, cfg = _read(source)
    model = build_model(cfg)
    dim = model.dim
    ini = cfg.get("initial", {})
    try:
        initial = InitialLaw(np.asarray(ini.get("mean", np.zeros(dim)), dtype=float).reshape(dim),
                             np.asarray(ini.get("std", np.full(dim, 0.1)), dtype=float).reshape(dim))
    except (FracMVError, ValueError) as exc:
        raise ConfigError(f"invalid initial law: {exc}") from exc
    run_s = cfg.get("run", {})
    try:
        run = RunConfig(float(run_s.get("T", 1.0)), int(run_s.get("steps", 256)),
                        int(run_s.get("paths", 10_000)), int(run_s.get("seed", 0)),
                        tuple(float(t) for t in run_s.get("t0", [run_s.get("T", 1.0)])))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid run section: {exc}") from exc
    exp = dict(cfg.get("experiment", {}))
    checks = tuple(exp.pop("checks", ()))
    unknown = [c for c in checks if c not in CHECKS]
    if unknown:
        raise ConfigError(f"unknown checks {unknown}; known: {', '.join(CHECKS)}")
    options = {k: v for k, v in exp.items() if isinstance(v, dict)}
    out = cfg.get("output", {})
    return Scenario(name, model, initial, run, checks, options, out.get("directory"),
                    bool(out.get("emit_plots", False)))
