from functools import lru_cache

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """
    Toolkit defaults, overridable through AGU_* environment variables or a .env file.
    """
    model_config = SettingsConfigDict(env_prefix="AGU_", env_file=".env", extra="ignore")

    log_level: str = Field(default="INFO", description="Root logging level")
    torch_threads: int = Field(default=1, ge=1, description="Intra-op threads; 1 keeps reductions reproducible")

    # Model and training
    hidden_dim: int = Field(default=64, ge=1)
    num_layers: int = Field(default=2, ge=1, le=3)
    train_epochs: int = Field(default=200, ge=0)
    lr: float = Field(default=0.01, gt=0)
    weight_decay: float = Field(default=5e-4, ge=0)
    dropout: float = Field(default=0.5, ge=0, lt=1)

    # Unlearning
    unlearn_epochs: int = Field(default=25, ge=1, le=1000)
    unlearn_lr: float = Field(default=0.01, gt=0)
    alpha: float = Field(default=0.1, ge=0)
    kl_cap: float = Field(default=10.0, gt=0)

    # Neighbor selection
    theta: float = Field(default=1e-4, ge=0)
    k_ans: float = Field(default=0.4, gt=0, le=1)
    probe_tolerance: float = Field(default=1e-9, ge=0)


@lru_cache
def get_settings() -> Settings:
    return Settings()
