from pathlib import Path
from typing import Literal, Optional

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    # Data
    data_dir: Optional[Path] = None

    # Estimators
    undefined_band_policy: Literal["error", "zero"] = "error"
    matrix_undefined_band_policy: Literal["error", "zero"] = "zero"

    # Correlation tests
    permutation_reps: int = 10000

    # Oracle
    default_seed: int = 20200309
    oracle_tolerance: float = 1e-12

    # Logging
    log_level: str = "INFO"

    # HTTP server
    api_host: str = "127.0.0.1"
    api_port: int = 8000

    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="CFR_",
        case_sensitive=False,
        extra="ignore",
    )

    @property
    def bundled_dir(self) -> Path:
        """Directory bundled datasets are read from"""
        if self.data_dir is not None:
            return self.data_dir
        return Path(__file__).parent / "data"


settings = Settings()
