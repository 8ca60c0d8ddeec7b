"""Process-level settings read from the environment (and ``.env``).

Kept free of numpy imports so the thread caps can be applied before numpy loads.
"""

from __future__ import annotations

import os
from functools import lru_cache
from typing import MutableMapping, Optional

from pydantic import Field, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


class ConfigError(ValueError):
    """Raised when a run configuration or the environment is missing or invalid."""


class Settings(BaseSettings):
    threads: int = Field(default=1, ge=1, validation_alias="SGAN_THREADS")
    log_level: str = Field(default="INFO", validation_alias="SGAN_LOG_LEVEL")
    progress: bool = Field(default=False, validation_alias="SGAN_PROGRESS")

    model_config = SettingsConfigDict(populate_by_name=True)


@lru_cache()
def get_settings() -> Settings:
    try:
        return Settings()  # type: ignore[call-arg]
    except ValidationError as exc:
        raise ConfigError(f"invalid environment settings: {exc}") from exc


def apply_thread_caps(settings: Settings, environ: Optional[MutableMapping[str, str]] = None) -> None:
    """Export ``settings.threads`` to the BLAS/OpenMP variables the user has not set."""
    environ = os.environ if environ is None else environ
    for var in THREAD_VARS:
        environ.setdefault(var, str(settings.threads))
