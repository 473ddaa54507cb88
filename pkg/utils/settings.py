# utils/settings.py

from functools import lru_cache
from typing import Optional

from dotenv import load_dotenv
from pydantic_settings import BaseSettings, SettingsConfigDict

# Load environment variables from .env file
load_dotenv()


class Settings(BaseSettings):
    """Process-wide settings, overridable through COTRAIN_* environment variables."""

    model_config = SettingsConfigDict(env_prefix="COTRAIN_", env_file=".env", extra="ignore")

    ledger_url: Optional[str] = None  # unset: in memory, or the run directory for CLI runs
    log_level: str = "INFO"

    # Prediction servers
    server_host: str = "127.0.0.1"
    base_port: int = 0  # 0 picks a free port per server
    request_timeout: float = 10.0
    retry_budget: int = 3
    retry_backoff: float = 0.05

    # Bookkeeping for staleness reports
    steps_per_minute: float = 100.0


@lru_cache
def get_settings() -> Settings:
    return Settings()
