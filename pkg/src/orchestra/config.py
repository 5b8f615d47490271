"""Run configuration: config file over command-line flags over environment."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from . import agents as agent_mod
from . import registry as registry_mod
from .backends import BASE_URL_ENV, ChatCompletionsBackend, RetryingBackend, RetryPolicy, ScriptedBackend
from .engine import Engine, EngineBudget
from .trace import StrategyDescriptor


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    registry: Path | None = None
    script: Path | None = None
    base_url: str | None = None
    model: str | None = None
    dataset: Path | None = None
    k: int = 1
    strategies: Path | None = None
    budget: dict[str, Any] = field(default_factory=dict)
    out: Path = Path("runs")
    seed: int = 0
    strict: bool = True
    workers: int = 1
    agents: dict[str, Any] = field(default_factory=dict)
    base_dir: Path = Path(".")

    @classmethod
    def resolve(
        cls,
        flags: Mapping[str, Any],
        config_file: str | Path | None = None,
        env: Mapping[str, str] | None = None,
    ) -> "RunConfig":
        env = os.environ if env is None else env
        merged: dict[str, Any] = {}
        if env.get(BASE_URL_ENV):
            merged["base_url"] = env[BASE_URL_ENV]
        merged.update({k: v for k, v in flags.items() if v is not None})
        base_dir = Path(".")
        if config_file is not None:
            path = Path(config_file)
            try:
                data = json.loads(path.read_text(encoding="utf-8"))
            except FileNotFoundError:
                raise ConfigError(f"config file not found: {path}") from None
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file {path} is not valid JSON: {exc.msg}") from exc
            base_dir = path.parent
            for key, value in data.items():
                if key in ("registry", "script", "dataset", "strategies", "out") and value is not None:
                    p = Path(value)
                    value = p if p.is_absolute() else base_dir / p
                merged[key] = value
        unknown = set(merged) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key in ("registry", "script", "dataset", "strategies", "out"):
            if merged.get(key) is not None:
                merged[key] = Path(merged[key])
        merged["base_dir"] = base_dir
        cfg = cls(**merged)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.registry is None:
            raise ConfigError("no registry given (--registry)")
        for name in ("registry", "script", "dataset", "strategies"):
            path = getattr(self, name)
            if path is not None and not path.exists():
                raise ConfigError(f"{name} file not found: {path}")
        if self.script is None and not self.model:
            raise ConfigError("need either a script (--script) or an HTTP model (--model)")

    def budget_obj(self) -> EngineBudget:
        try:
            return EngineBudget(**self.budget)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad budget: {exc}") from exc

    def load_registry(self) -> registry_mod.Registry:
        return registry_mod.load_file(self.registry)

    def make_backend(self):
        if self.script is not None:
            try:
                return ScriptedBackend.from_file(self.script)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        return RetryingBackend(ChatCompletionsBackend(self.model, self.base_url), RetryPolicy())

    def load_strategies(self) -> list[StrategyDescriptor] | None:
        if self.strategies is None:
            return None
        try:
            data = json.loads(self.strategies.read_text(encoding="utf-8"))
            strategies = [StrategyDescriptor.from_dict(s) for s in data]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad strategy file {self.strategies}: {exc}") from exc
        names = [s.name for s in strategies]
        if len(set(names)) != len(names):
            raise ConfigError("strategy names must be unique")
        if len(strategies) not in (1, self.k):
            raise ConfigError(f"strategy file must hold 1 or {self.k} strategies")
        return strategies

    def make_engine(self, registry=None, backend=None) -> Engine:
        registry = registry or self.load_registry()
        backend = backend or self.make_backend()
        built = agent_mod.build(self.agents, backend, self.base_dir)
        observers = [a.observe for a in built.values() if hasattr(a, "observe")]
        return Engine(registry, backend, built, self.budget_obj(), strict=self.strict, observers=observers)
