"""Engine configuration: flat key=value file plus environment overrides.

Config files are TOML-like `key = value` lines (strings may be quoted,
`#` starts a comment, section headers are ignored).  Every key can be
overridden by an environment variable `CHAREDIT_<KEY>` in upper case,
e.g. `CHAREDIT_BACKEND_URL`.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path

ENV_PREFIX = "CHAREDIT_"


@dataclass
class EngineConfig:
    artifacts_dir: str | None = None  # None -> build the desk stack in-process
    sessions_dir: str | None = None  # None -> no persistence
    host: str = "127.0.0.1"
    port: int = 8080
    backend_url: str | None = None  # None -> deterministic fallback parser only
    backend_model: str = "gpt-4"
    backend_api_key_env: str = "CHAREDIT_LLM_API_KEY"
    stack_seed: int = 0
    steps: int = 100
    lr_continuous: float = 1.0
    lr_discrete: float = 100.0
    lambda_prior: float = 8e-4


def _coerce(raw: str, target_type) -> object:
    raw = raw.strip().strip("\"'")
    if target_type in (int, "int"):
        return int(raw)
    if target_type in (float, "float"):
        return float(raw)
    if raw.lower() in ("none", ""):
        return None
    return raw


_FIELD_TYPES = {
    "port": int, "stack_seed": int, "steps": int,
    "lr_continuous": float, "lr_discrete": float, "lambda_prior": float,
}


def load_config(path: str | Path | None = None, env: dict | None = None) -> EngineConfig:
    values: dict[str, object] = {}
    names = {f.name for f in fields(EngineConfig)}
    if path is not None:
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line or line.startswith("["):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = line.split("=", 1)
            key = key.strip()
            if key not in names:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = _coerce(raw, _FIELD_TYPES.get(key, str))
    env = os.environ if env is None else env
    for name in names:
        env_key = ENV_PREFIX + name.upper()
        if env_key in env:
            values[name] = _coerce(env[env_key], _FIELD_TYPES.get(name, str))
    return EngineConfig(**values)
