"""Run configuration: one YAML file, env-var interpolation for secrets,
all defaults materialized on load.
"""
from __future__ import annotations

import os
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml


class ConfigError(ValueError):
    pass


@dataclass
class BackendConfig:
    endpoint_url: str = "http://localhost:8000/v1/chat/completions"
    model_id: str = "gpt-3.5-turbo"
    api_key_env: str = "CHAT_API_KEY"
    max_tokens: int = 512
    retries: int = 3


@dataclass
class ToolConfig:
    search_endpoint: str = "https://google.serper.dev/search"
    reranker: str = "lexical"  # "lexical" | "remote"
    embedding_endpoint: str = ""
    top_k: int = 3


@dataclass
class EpisodeSettings:
    max_turns: int = 8
    mode: str = "react"
    temperatures: list[float] = field(default_factory=lambda: [0.2, 0.5, 0.7])


@dataclass
class PathConfig:
    cache_dir: str = ".negatune/cache"
    data_dir: str = "data"
    out_dir: str = "out"


@dataclass
class RunConfig:
    backend: BackendConfig = field(default_factory=BackendConfig)
    tools: ToolConfig = field(default_factory=ToolConfig)
    episode: EpisodeSettings = field(default_factory=EpisodeSettings)
    paths: PathConfig = field(default_factory=PathConfig)
    strategy: str = "nat"
    seed: int = 0

    def api_key(self) -> str | None:
        return os.environ.get(self.backend.api_key_env)

    def echo(self) -> dict:
        return asdict(self)


_ENV_RE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


def _interpolate(value):
    if isinstance(value, str):
        def substitute(match: re.Match) -> str:
            name = match.group(1)
            if name not in os.environ:
                raise ConfigError(f"environment variable {name} referenced in config is not set")
            return os.environ[name]
        return _ENV_RE.sub(substitute, value)
    if isinstance(value, dict):
        return {k: _interpolate(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_interpolate(v) for v in value]
    return value


def _apply(target, values: dict, context: str) -> None:
    for key, value in values.items():
        if not hasattr(target, key):
            raise ConfigError(f"unknown config key {context}{key}")
        current = getattr(target, key)
        if isinstance(current, (BackendConfig, ToolConfig, EpisodeSettings, PathConfig)):
            if not isinstance(value, dict):
                raise ConfigError(f"config section {context}{key} must be a mapping")
            _apply(current, value, f"{context}{key}.")
        else:
            setattr(target, key, value)


def load_config(path: str | Path | None = None) -> RunConfig:
    """Load config with defaults; a missing path yields pure defaults."""
    config = RunConfig()
    if path is None:
        return config
    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if raw is None:
        return config
    if not isinstance(raw, dict):
        raise ConfigError("config file must contain a mapping")
    _apply(config, _interpolate(raw), "")
    return config
