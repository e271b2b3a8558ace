import io
import os
import platform as host_platform
from pathlib import Path
from typing import Dict, Optional, Type, TypeVar

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from voluntier.errors import ConfigurationError

ENV_PREFIX = "VOLUNTIER_"
BACKOFF_CAP = 60.0

SettingsT = TypeVar("SettingsT", bound=BaseModel)


def read_key_values(text: str) -> Dict[str, str]:
    """Parse flat ``key=value`` text (dotenv syntax, ``#`` comments)."""
    values = dotenv_values(stream=io.StringIO(text), interpolate=False)
    parsed = {}
    for key, value in values.items():
        if value is None:
            raise ConfigurationError(f"Line for key {key!r} has no value")
        parsed[key.strip()] = value.strip()
    return parsed


def detect_platform() -> str:
    system = host_platform.system().lower()
    machine = host_platform.machine().lower()
    arch = "aarch64" if machine in ("arm64", "aarch64") else "x86_64"
    if system == "darwin":
        return f"macos-{arch}"
    if system == "windows":
        return "windows-x86_64"
    return f"linux-{arch}"


class ServerSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    host: str = "0.0.0.0"
    port: int = Field(5000, ge=1, le=65535)
    database_url: str = "sqlite:///project.db"
    private_key_path: str = "keys/project_ed25519.pem"
    public_key_path: str = "keys/project_ed25519.pub"
    heartbeat_interval: float = Field(10.0, gt=0)
    heartbeat_timeout: Optional[float] = None
    presence_timeout: Optional[float] = None
    dead_threshold: float = Field(86400.0, gt=0)
    transition_interval: float = Field(5.0, gt=0)

    @model_validator(mode="after")
    def _default_timeout(self):
        if self.heartbeat_timeout is None:
            self.heartbeat_timeout = 5 * self.heartbeat_interval
        if self.presence_timeout is None:
            # idle clients poll at most BACKOFF_CAP seconds apart
            self.presence_timeout = max(self.heartbeat_timeout, 2 * BACKOFF_CAP)
        return self


class ClientSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    server_url: str = "http://localhost:5000"
    public_key_path: str = "keys/project_ed25519.pub"
    data_dir: str = "client-data"
    heartbeat_interval: float = Field(10.0, gt=0)
    request_timeout: float = Field(10.0, gt=0)
    platform: str = Field(default_factory=detect_platform)
    ncpus: int = Field(default_factory=lambda: os.cpu_count() or 1, ge=1)
    benchmark_flops: Optional[float] = Field(None, gt=0)
    backoff_base: float = Field(2.0, gt=0)
    backoff_cap: float = Field(BACKOFF_CAP, gt=0)
    wall_time_factor: float = Field(2.0, gt=0)
    poll_interval: float = Field(0.2, gt=0)
    checkpoint_generations: int = Field(10, ge=1)
    checkpoint_seconds: float = Field(60.0, gt=0)


_PATH_FIELDS = ("private_key_path", "public_key_path", "data_dir")


def load_settings(path: str, model: Type[SettingsT]) -> SettingsT:
    """Read a dotenv-style settings file, apply ``VOLUNTIER_*`` overrides and validate."""
    config_path = Path(path)
    if not config_path.exists():
        raise ConfigurationError(f"Settings file not found: {path}")
    values = read_key_values(config_path.read_text(encoding="utf-8"))
    for field_name in model.model_fields:
        override = os.environ.get(ENV_PREFIX + field_name.upper())
        if override is not None:
            values[field_name] = override
    base = config_path.resolve().parent
    for field_name in _PATH_FIELDS:
        if field_name in values and not Path(values[field_name]).is_absolute():
            values[field_name] = str(base / values[field_name])
    url = values.get("database_url")
    if url and url.startswith("sqlite:///") and not url.startswith("sqlite:////"):
        values["database_url"] = "sqlite:///" + str(base / url[len("sqlite:///"):])
    try:
        return model.model_validate(values)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid settings in {path}: {e}") from e
