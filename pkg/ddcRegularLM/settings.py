# -*- coding: utf-8 -*-
import hashlib
from pathlib import Path
from typing import Literal, Optional
from dotenv import load_dotenv
from pydantic import Field, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


load_dotenv()


DEFAULT_SIZES = [2, 4, 6, 8, 10, 12, 16]
DEFAULT_RANKS = [1, 2, 4, 6, 8, 10, 12, 16]


def _sorted_unique_positive(values: list[int], name: str) -> list[int]:
    if not values:
        raise ValueError(f"{name} must not be empty")
    if any(v < 1 for v in values):
        raise ValueError(f"{name} entries must be >= 1")
    return sorted(set(values))


class GenerationConfig(BaseSettings):
    """settings defined here with fallback to reading ENV variables"""

    state_sizes: list[int] = Field(default_factory=lambda: list(DEFAULT_SIZES))
    alphabet_sizes: list[int] = Field(default_factory=lambda: list(DEFAULT_SIZES))
    rank_grid: list[int] = Field(default_factory=lambda: list(DEFAULT_RANKS))
    logit_std: float = Field(default=2.0, gt=0)
    length_filter: Literal["fixed", "median"] = Field(default="fixed")
    length_filter_threshold: float = Field(default=46.0, gt=0)
    master_seed: int = Field(default=20240611, ge=0, lt=2**64)

    model_config = SettingsConfigDict(env_prefix="RLM_GENERATION_", env_file=".env", extra="ignore")

    @field_validator("state_sizes", "alphabet_sizes", "rank_grid")
    @classmethod
    def _check_sizes(cls, v: list[int], info) -> list[int]:
        return _sorted_unique_positive(v, info.field_name)


class DatasetConfig(BaseSettings):
    """settings defined here with fallback to reading ENV variables"""

    size: int = Field(default=20000, ge=2)
    max_len: int = Field(default=256, ge=0)
    min_test: int = Field(default=2000, ge=1)

    model_config = SettingsConfigDict(env_prefix="RLM_DATASET_", env_file=".env", extra="ignore")

    @model_validator(mode="after")
    def _check_split(self):
        if self.size <= self.min_test:
            raise ValueError("size must be larger than min_test")
        return self


class TrainConfig(BaseSettings):
    """settings defined here with fallback to reading ENV variables"""

    epochs: int = Field(default=2, ge=1)
    batch_size: int = Field(default=32, ge=1)
    lr: float = Field(default=0.001, gt=0)
    adam_beta1: float = Field(default=0.9, gt=0, lt=1)
    adam_beta2: float = Field(default=0.999, gt=0, lt=1)
    adam_eps: float = Field(default=1e-8, gt=0)
    init_std: float = Field(default=0.1, gt=0)
    seed: int = Field(default=0, ge=0, lt=2**64)
    grad_clip: Optional[float] = Field(default=None, gt=0)

    model_config = SettingsConfigDict(env_prefix="RLM_TRAIN_", env_file=".env", extra="ignore")


class StoreSettings(BaseSettings):
    """settings defined here with fallback to reading ENV variables"""

    file_name: str = Field(default="cells.db")
    echo: bool = Field(default=False)

    model_config = SettingsConfigDict(env_prefix="RLM_STORE_", env_file=".env", extra="ignore")


class ExperimentConfig(BaseSettings):
    """settings defined here with fallback to reading ENV variables"""

    generation: GenerationConfig = Field(
        default_factory=lambda: GenerationConfig(state_sizes=[4, 8], alphabet_sizes=[4, 8])
    )
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    d_grid: list[int] = Field(default_factory=lambda: [2, 8, 16])
    replicates: int = Field(default=3, ge=1)
    output_dir: Path = Field(default=Path("rlm_runs"))
    parallelism: int = Field(default=1, ge=1)

    model_config = SettingsConfigDict(env_prefix="RLM_", env_file=".env", extra="ignore")

    @field_validator("d_grid")
    @classmethod
    def _check_d_grid(cls, v: list[int]) -> list[int]:
        return _sorted_unique_positive(v, "d_grid")

    def canonical_json(self) -> str:
        return self.model_dump_json(exclude={"output_dir", "parallelism"})

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()


def load_experiment_config(path: Optional[str | Path] = None, **overrides) -> ExperimentConfig:
    """JSON config file (optional) with keyword overrides on top"""

    data = {}
    if path is not None:
        data = ExperimentConfig.model_validate_json(Path(path).read_text()).model_dump()
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**data)
