"""Service configuration: TOML file plus FEDCORE_* environment overrides."""

from __future__ import annotations

import os
from dataclasses import dataclass, fields

try:
    import tomllib
except ImportError:  # Python 3.10
    import tomli as tomllib

from .errors import ValidationError


@dataclass
class Config:
    listen_host: str = "127.0.0.1"
    listen_port: int = 4747
    agents: int = 2
    agent_autostart: bool = True
    agent_poll_s: float = 0.05
    lease_ttl_s: float = 10.0
    retry_cap: int = 25
    backoff_base_ms: int = 250
    journal: str | None = None
    engine_default: str = "greedy"
    seed: int = 1
    max_path_hops: int = 4


def load_config(path: str | None = None, env: dict | None = None) -> Config:
    env = os.environ if env is None else env
    values: dict = {}
    if path:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
        values.update(data)
    for f in fields(Config):
        raw = env.get(f"FEDCORE_{f.name.upper()}")
        if raw is not None:
            values[f.name] = raw
    cfg = Config()
    for f in fields(Config):
        if f.name not in values:
            continue
        raw = values[f.name]
        try:
            if f.name == "journal":
                setattr(cfg, f.name, str(raw) if raw else None)
            elif f.type.startswith("int"):
                setattr(cfg, f.name, int(raw))
            elif f.type.startswith("float"):
                setattr(cfg, f.name, float(raw))
            elif f.type.startswith("bool"):
                setattr(
                    cfg,
                    f.name,
                    raw if isinstance(raw, bool) else str(raw).lower() in ("1", "true", "yes"),
                )
            else:
                setattr(cfg, f.name, str(raw))
        except (TypeError, ValueError):
            raise ValidationError(f"bad config value for {f.name}: {raw!r}") from None
    unknown = set(values) - {f.name for f in fields(Config)}
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    return cfg
