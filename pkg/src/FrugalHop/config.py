"""
Configuration module for FrugalHop.
Provides process settings read from the environment, the per-run parameter
bag shared by all commands, and logging setup.
"""

import os
import logging
from pathlib import Path
from typing import Any, Dict, Literal, Mapping, Optional, Union

from pydantic import AliasChoices, BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .errors import ConfigError

# Create a module-level logger
logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    """Process-level settings with validation"""
    # Remote services
    remote_policy_url: Optional[str] = Field(
        default=None,
        validation_alias=AliasChoices("REMOTE_POLICY_URL", "FRUGALHOP_REMOTE_POLICY_URL"),
        description="Base URL of the remote policy / generator service"
    )
    remote_retriever_url: Optional[str] = Field(
        default=None,
        validation_alias=AliasChoices("REMOTE_RETRIEVER_URL", "FRUGALHOP_REMOTE_RETRIEVER_URL"),
        description="Base URL of the remote retriever service"
    )

    # Authentication
    api_key: Optional[str] = Field(
        default=None,
        validation_alias=AliasChoices("REMOTE_POLICY_API_KEY", "FRUGALHOP_API_KEY"),
        description="API key passed through to the remote policy"
    )

    # HTTP client settings
    request_timeout: int = Field(
        default=30,
        description="Timeout for HTTP requests in seconds",
        ge=1,
        le=300
    )

    # Worker pool
    workers: int = Field(
        default_factory=lambda: os.cpu_count() or 1,
        description="Default concurrency width for per-question work",
        ge=1
    )

    # Logging
    log_file: Optional[str] = Field(
        default="frugalhop.log",
        description="File that log records are appended to (None logs to stderr)"
    )
    log_level: str = Field(
        default="INFO",
        description="Root log level"
    )

    @field_validator("log_level")
    def validate_log_level(cls, v):
        """Only accept level names the logging module knows"""
        level = v.upper()
        if not isinstance(logging.getLevelName(level), int):
            raise ValueError(f"unknown log level: {v}")
        return level

    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="FRUGALHOP_",
        populate_by_name=True,
        extra="ignore",
    )


class AuthConfig:
    """Authentication configuration and utilities"""
    def __init__(self, settings: Settings):
        self.api_key = settings.api_key

    def get_headers(self) -> Dict[str, str]:
        """Get authentication headers based on available credentials"""
        headers = {}
        if self.api_key:
            headers["X-API-Key"] = self.api_key
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers


def setup_logging(settings: Settings) -> None:
    """Configure the root logger once for the whole process."""
    kwargs: Dict[str, Any] = {
        "level": getattr(logging, settings.log_level, logging.INFO),
        "format": "%(asctime)s [%(levelname)s] %(name)s: %(message)s",
        "datefmt": "%Y-%m-%d %H:%M:%S",
    }
    if settings.log_file:
        kwargs["filename"] = settings.log_file
        kwargs["filemode"] = "a"
    logging.basicConfig(**kwargs)


class RunConfig(BaseModel):
    """
    Flat parameter bag shared by every command.

    Values come from a ``key = value`` config file, then command-line flags,
    then the defaults below.
    """
    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    # rollout
    budget: int = Field(default=6, description="Search budget B")
    k: int = Field(default=3, description="Documents per search")
    initial_retrieval: bool = True
    count_initial_in_searches: bool = True

    # index
    k1: float = 1.2
    b: float = 0.75

    # reward
    r_max: float = 2.0
    alpha: float = 1.0
    tau: float = 1.0

    # datagen
    mixture: float = 0.9
    source_policy: Literal["mixture", "finish_only"] = "mixture"
    limit: Optional[int] = None

    # bootstrap
    candidate_count: int = 15
    keep: int = 4
    demos_per_set: int = 3

    # stopping-policy trainer
    group_size: int = Field(default=8, description="GRPO group size v")
    steps: int = 2000
    learning_rate: float = 0.5
    tasks_per_step: int = 4

    seed: int = 0
    workers: Optional[int] = None

    @field_validator("budget")
    def validate_budget(cls, v):
        if v < 1:
            raise ValueError("budget B must satisfy B >= 1")
        return v

    @field_validator("k", "candidate_count", "keep", "demos_per_set", "steps", "tasks_per_step")
    def validate_positive(cls, v, info):
        if v < 1:
            raise ValueError(f"{info.field_name} must be >= 1")
        return v

    @field_validator("limit", "workers")
    def validate_optional_positive(cls, v, info):
        if v is not None and v < 1:
            raise ValueError(f"{info.field_name} must be >= 1")
        return v

    @field_validator("k1", "r_max", "learning_rate")
    def validate_strictly_positive(cls, v, info):
        if not v > 0:
            raise ValueError(f"{info.field_name} must be > 0")
        return v

    @field_validator("b", "tau", "mixture")
    def validate_unit_interval(cls, v, info):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{info.field_name} must lie in [0, 1]")
        return v

    @field_validator("alpha")
    def validate_alpha(cls, v):
        if v < 0:
            raise ValueError("alpha must be >= 0")
        return v

    @field_validator("group_size")
    def validate_group_size(cls, v):
        if v < 2:
            raise ValueError("group_size v must be >= 2")
        return v

    @model_validator(mode="after")
    def validate_keep(self):
        if self.keep > self.candidate_count:
            raise ValueError("keep must not exceed candidate_count")
        return self


def parse_config_file(path: Union[str, Path]) -> Dict[str, str]:
    """
    Parse a flat ``key = value`` config file.

    Blank lines and lines starting with ``#`` are ignored. Keys are returned
    as written; values are left as strings for pydantic to coerce.
    """
    values: Dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for line_number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{line_number}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip().replace("-", "_")
        if not key:
            raise ConfigError(f"{path}:{line_number}: empty key")
        values[key] = value.strip()
    return values


def load_config(path: Optional[Union[str, Path]] = None,
                overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """
    Build a RunConfig from an optional config file and flag overrides.

    Flags win over file values; anything unset falls back to the defaults.
    Override entries whose value is None are treated as unset.
    """
    merged: Dict[str, Any] = {}
    if path is not None:
        merged.update(parse_config_file(path))
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = value

    known = set(RunConfig.model_fields)
    for key in merged:
        if key not in known:
            raise ConfigError(f"unknown config key: {key}")

    try:
        return RunConfig(**merged)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(problems) from e


# Create global instances
settings = Settings()
auth_config = AuthConfig(settings)
setup_logging(settings)

# Log configuration on initialization
logger.debug(f"Remote policy URL: {settings.remote_policy_url}")
logger.debug(f"Remote retriever URL: {settings.remote_retriever_url}")
logger.debug(f"Authentication configured: {bool(settings.api_key)}")
