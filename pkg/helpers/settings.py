import json
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from helpers.errors import ConfigError

ConvKind = Literal['gat', 'gcn']
PoolKind = Literal['sag', 'topk']
ActivationKind = Literal['relu', 'leaky_relu', 'elu', 'tanh']


class ModelConfig(BaseModel):
    """Architecture hyperparameters of the graph classifier"""
    model_config = ConfigDict(extra='forbid')

    input_dim: int = Field(1024, ge=1)
    hidden_dim: int = Field(512, ge=1)
    num_blocks: int = Field(4, ge=1)
    heads: int = Field(2, ge=1)
    pooling_ratio: float = Field(0.8, gt=0.0, le=1.0)
    conv_kind: ConvKind = 'gat'
    pool_kind: PoolKind = 'sag'
    # Two hidden widths: the head always has exactly three weight layers
    mlp_hidden: List[int] = Field(default_factory=lambda: [256, 128])
    num_classes: Literal[2] = 2
    conv_activation: ActivationKind = 'relu'
    mlp_activation: ActivationKind = 'relu'
    leaky_slope: float = Field(0.2, ge=0.0)

    @field_validator('mlp_hidden')
    @classmethod
    def _three_mlp_layers(cls, value: List[int]) -> List[int]:
        if len(value) != 2 or min(value) < 1:
            raise ValueError("mlp_hidden must hold exactly two positive widths")
        return value

    @property
    def readout_dim(self) -> int:
        return 2 * self.hidden_dim * self.num_blocks

    @property
    def mlp_dims(self) -> List[int]:
        return [self.readout_dim, *self.mlp_hidden, self.num_classes]


class TrainConfig(BaseModel):
    """Optimizer and schedule"""
    model_config = ConfigDict(extra='forbid')

    lr: float = Field(1e-4, gt=0.0)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.98, ge=0.0, lt=1.0)
    eps: float = Field(1e-9, gt=0.0)
    epochs: int = Field(50, ge=1)
    split_ratio: float = Field(0.7, gt=0.0, lt=1.0)
    seed: int = 0
    shuffle_each_epoch: bool = True


class RunConfig(BaseSettings):
    """
    Everything one CLI run needs.

    Resolution order: CLI flags, then a --config JSON file, then MUSTANG_*
    environment variables (config.env), then the defaults below.
    """
    model_config = SettingsConfigDict(env_prefix='MUSTANG_', env_nested_delimiter='__', extra='ignore')

    manifest: Optional[Path] = None
    out: Path = Path('runs/latest')
    k: int = Field(5, ge=1)
    stain: Optional[str] = None
    checkpoint: Optional[Path] = None
    n_jobs: int = 1
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)

    @model_validator(mode='after')
    def _jobs_positive(self) -> 'RunConfig':
        if self.n_jobs == 0:
            raise ValueError("n_jobs must be non-zero (negative counts back from all cores)")
        return self

    def dump(self) -> Dict[str, Any]:
        return json.loads(self.model_dump_json())


def _merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_run_config(config_file: Optional[Path] = None,
                    overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Resolve a RunConfig from defaults, environment, an optional JSON file and CLI overrides

    Args:
        config_file (Path): Optional JSON file with RunConfig fields
        overrides (Dict[str, Any]): Flag values; None entries are ignored

    Returns:
        Validated RunConfig

    Raises:
        ConfigError: On any out-of-range or unknown value
        FileNotFoundError: If the config file does not exist
    """
    values: Dict[str, Any] = {}
    if config_file is not None:
        config_file = Path(config_file)
        if not config_file.exists():
            raise FileNotFoundError(f"config file not found: {config_file}")
        try:
            values = json.loads(config_file.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{config_file} is not valid JSON: {e}") from e

    values = _merge(values, _drop_none(overrides or {}))
    try:
        env_defaults = RunConfig().dump()
        return RunConfig(**_merge(env_defaults, values))
    except ValidationError as e:
        raise ConfigError(str(e)) from e


def _drop_none(values: Dict[str, Any]) -> Dict[str, Any]:
    cleaned = {}
    for key, value in values.items():
        if isinstance(value, dict):
            nested = _drop_none(value)
            if nested:
                cleaned[key] = nested
        elif value is not None:
            cleaned[key] = value
    return cleaned
