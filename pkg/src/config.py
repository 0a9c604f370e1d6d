from pydantic_settings import BaseSettings
from pydantic import Field


class Settings(BaseSettings):
    log_level: str = Field(default="INFO")
    num_threads: int = Field(default=1, ge=1)

    api_host: str = Field(default="0.0.0.0")
    api_port: int = Field(default=8000)
    api_weights: str = Field(default="")
    api_config: str = Field(default="")
    api_seed: int = Field(default=0)
    max_upload_bytes: int = Field(default=16 * 1024 * 1024)

    runs_dir: str = Field(default="runs")

    class Config:
        env_prefix = "LU2NET_"
        env_file = ".env"
        case_sensitive = False


settings = Settings()
