"""
Configuration and settings for the mole-router toolkit
"""
from pathlib import Path
from pydantic_settings import BaseSettings
from pydantic import Field


class Settings(BaseSettings):
    """Process settings loaded from environment variables"""

    # Outputs
    output_dir: Path = Field(default=Path("./runs"), alias="MOLE_OUTPUT_DIR")

    # Run registry
    database_url: str = Field(default="sqlite:///./runs/registry.db", alias="DATABASE_URL")

    # Logging
    log_level: str = Field(default="INFO", alias="LOG_LEVEL")
    log_file: Path = Field(default=Path("./logs/mole.log"), alias="LOG_FILE")

    # Experiments
    default_seed: int = Field(default=0, alias="MOLE_SEED")
    ablation_workers: int = Field(default=1, alias="MOLE_ABLATION_WORKERS")

    # Wall-clock timings break byte-identical reports, so they stay out by default
    include_timing: bool = Field(default=False, alias="MOLE_INCLUDE_TIMING")

    # Export
    float_digits: int = 17

    class Config:
        env_file = ".env"
        env_file_encoding = "utf-8"
        case_sensitive = False
        populate_by_name = True


# Create global settings instance
settings = Settings()

# Ensure directories exist
settings.output_dir.mkdir(parents=True, exist_ok=True)
settings.log_file.parent.mkdir(parents=True, exist_ok=True)
