"""Process configuration using Pydantic settings."""

from typing import Optional

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class AppSettings(BaseSettings):
    """Process-level settings, read from the environment and an optional .env file.

    Everything describing a simulation lives in the TOML run configuration
    (see ``conefrac.domain.models.RunConfig``); these settings only control how
    the process behaves around it.
    """

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        env_prefix="CONEFRAC_",
        case_sensitive=False,
        extra="ignore",
    )

    # Application
    app_env: str = Field(default="dev", description="Application environment")
    log_level: str = Field(default="INFO", description="Logging level")
    log_json: bool = Field(default=False, description="Render logs as JSON lines")

    # Execution
    threads: Optional[int] = Field(
        default=None,
        ge=1,
        description="Thread cap for BLAS/LAPACK; unset keeps the library default",
    )
    output_dir: str = Field(default="out", description="Default output directory")
    metrics_textfile: bool = Field(
        default=True,
        description="Write Prometheus metrics to metrics.prom after a run",
    )

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        """Accept only standard logging level names."""
        level = v.upper()
        if level not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
            raise ValueError(f"Unknown log level: {v}")
        return level

    @property
    def is_prod(self) -> bool:
        """Check if running in production environment."""
        return self.app_env.lower() == "prod"

    @property
    def is_dev(self) -> bool:
        """Check if running in development environment."""
        return self.app_env.lower() == "dev"


# Global settings instance
settings = AppSettings()
