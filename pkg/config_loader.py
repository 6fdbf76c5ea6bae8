"""Configuration loader for the satdn reconstruction pipeline."""

import os
import re
import logging
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Union

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from core.errors import ConfigError
from core.losses import LossWeights
from core.priors import PriorsConfig
from field.hash_encoding import HashGridConfig
from field.neural_field import FieldConfig
from field.renderer import SamplingConfig
from training.trainer import TrainConfig


logger = logging.getLogger(__name__)

ENV_PATTERN = re.compile(r'\$\{([^}]+)\}')


class Section(BaseModel):
    model_config = ConfigDict(extra='forbid')


class PathsSection(Section):
    dataset: str = 'data/tiny/manifest.yaml'   # dataset manifest
    output: str = 'runs/tiny'                  # fused depth, checkpoints, meshes, DSMs, metrics


class HashGridSection(Section):
    levels: int = Field(24, ge=1)
    base_resolution: int = Field(16, ge=2)
    max_resolution: int = Field(2048, ge=2)
    table_log2: int = Field(19, ge=4, le=26)
    feature_dim: int = Field(2, ge=1)

    @model_validator(mode='after')
    def _check_resolutions(self):
        if self.max_resolution < self.base_resolution:
            raise ValueError("max_resolution must be >= base_resolution")
        return self

    def build(self) -> HashGridConfig:
        return HashGridConfig(**self.model_dump())


class FieldSection(Section):
    hidden_width: int = Field(64, ge=1)
    feature_dim: int = Field(256, ge=1)
    point_bands: int = Field(6, ge=0)
    direction_bands: int = Field(4, ge=0)
    softplus_beta: float = Field(100.0, gt=0)
    init_bandwidth: float = Field(0.3, gt=0)
    dtype: Literal['float32', 'float64'] = 'float32'

    def build(self) -> FieldConfig:
        return FieldConfig(**self.model_dump())


class RendererSection(Section):
    n_coarse: int = Field(64, ge=2)
    n_importance: int = Field(64, ge=0)
    up_sample_steps: int = Field(4, ge=1)
    base_inv_s: float = Field(64.0, gt=0)
    perturb: bool = True
    dump_rays: Optional[int] = Field(None, ge=0)   # iteration whose rays are written to CSV

    def build(self) -> SamplingConfig:
        return SamplingConfig(**self.model_dump(exclude={'dump_rays'}))


class TrainSection(Section):
    total_iters: int = Field(100000, ge=0)
    batch_rays: int = Field(4096, ge=1)
    samples_per_ray: int = Field(128, ge=2)
    lambda_init: int = Field(4, ge=0)
    lambda_step_fraction: float = Field(0.025, gt=0.0, le=1.0)
    progressive: bool = True
    lr_hash: float = Field(1e-2, gt=0)
    lr_mlp: float = Field(1e-3, gt=0)
    lr_bandwidth: float = Field(1e-3, gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.99, ge=0, lt=1)
    adam_eps: float = Field(1e-15, gt=0)
    decay_start: float = Field(0.5, ge=0, le=1)
    checkpoint_every: int = Field(5000, ge=0)
    log_every: int = Field(100, ge=1)
    opacity_threshold: float = Field(0.5, ge=0, le=1)

    def build(self, seed: int) -> TrainConfig:
        return TrainConfig(seed=seed, **self.model_dump())


class LossSection(Section):
    depth: float = Field(0.1, ge=0)
    normal: float = Field(0.1, ge=0)
    eikonal: float = Field(0.1, ge=0)
    neighbours: Literal[4] = 4

    def build(self) -> LossWeights:
        return LossWeights(depth=self.depth, normal=self.normal, eikonal=self.eikonal)


class PriorsSection(Section):
    fit_mode: Literal['residual', 'literal'] = 'residual'
    weight_floor: float = Field(0.05, gt=0, le=1)
    error_percentile: float = Field(95.0, gt=0, le=100)

    def build(self) -> PriorsConfig:
        return PriorsConfig(**self.model_dump())


class ExtractionSection(Section):
    resolution: int = Field(128, ge=8)
    iso: float = 0.0
    chunk: int = Field(65536, ge=1)
    mesh_format: Literal['ply', 'obj'] = 'ply'
    cell_size: float = Field(0.5, gt=0)           # DSM cell size in meters
    fill_nodata: bool = False
    fill_radius: float = Field(5.0, gt=0)         # cells
    eikonal_samples: int = Field(10000, ge=1)
    eikonal_band: float = Field(0.05, gt=0)       # canonical units


class EvaluationSection(Section):
    align: bool = False
    mesh_samples: int = Field(100000, ge=1)


class SynthSection(Section):
    scene: str = 'scenes/tiny.yaml'
    output: str = 'data/tiny'


class LoggingSection(Section):
    level: Literal['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'] = 'INFO'
    file: Optional[str] = None

    @field_validator('level', mode='before')
    @classmethod
    def _upper(cls, value):
        return value.upper() if isinstance(value, str) else value


class PipelineConfig(Section):
    """Validated pipeline configuration; every section falls back to its defaults."""
    paths: PathsSection = Field(default_factory=PathsSection)
    hash_grid: HashGridSection = Field(default_factory=HashGridSection)
    field: FieldSection = Field(default_factory=FieldSection)
    renderer: RendererSection = Field(default_factory=RendererSection)
    train: TrainSection = Field(default_factory=TrainSection)
    loss: LossSection = Field(default_factory=LossSection)
    priors: PriorsSection = Field(default_factory=PriorsSection)
    extraction: ExtractionSection = Field(default_factory=ExtractionSection)
    evaluation: EvaluationSection = Field(default_factory=EvaluationSection)
    synth: SynthSection = Field(default_factory=SynthSection)
    logging: LoggingSection = Field(default_factory=LoggingSection)
    seed: int = Field(0, ge=0)
    threads: Optional[int] = Field(None, ge=1)

    @model_validator(mode='after')
    def _check_samples(self):
        total = self.renderer.n_coarse + self.renderer.n_importance
        if total != self.train.samples_per_ray:
            raise ValueError(
                f"train.samples_per_ray ({self.train.samples_per_ray}) must equal "
                f"renderer.n_coarse + renderer.n_importance ({total})"
            )
        return self

    def train_config(self) -> TrainConfig:
        return self.train.build(self.seed)

    def echo(self) -> Dict[str, Any]:
        """JSON-serializable snapshot stored in checkpoints."""
        return {
            'hash_grid': self.hash_grid.model_dump(),
            'field': self.field.model_dump(),
            'seed': self.seed,
            'train': self.train.model_dump(),
            'loss': self.loss.model_dump(),
            'renderer': self.renderer.model_dump(),
        }


class ConfigLoader:
    """Configuration loader with environment variable expansion and schema validation."""

    def __init__(self, config_path: Optional[Union[str, Path]] = "config.yaml"):
        """
        Initialize the config loader.

        Args:
            config_path: Path to the YAML configuration file (None = defaults only)
        """
        self.config_path = Path(config_path) if config_path is not None else None
        self._config: Optional[PipelineConfig] = None

    def load(self, overrides: Optional[Dict[str, Any]] = None) -> PipelineConfig:
        """
        Load and validate the configuration.

        Args:
            overrides: Dotted keys set after reading the file (CLI flags), e.g. {'seed': 7}

        Returns:
            PipelineConfig: Normalized configuration

        Raises:
            ConfigError: If the file is missing, not YAML, references an unset
                variable or violates the schema (the message names the key path)
        """
        load_dotenv()

        raw: Dict[str, Any] = {}
        if self.config_path is not None:
            if not self.config_path.exists():
                raise ConfigError('', f"Config file not found: {self.config_path}")
            try:
                with open(self.config_path, 'r', encoding='utf-8') as f:
                    raw = yaml.safe_load(f) or {}
            except yaml.YAMLError as e:
                raise ConfigError('', f"{self.config_path}: invalid YAML: {e}") from e
            if not isinstance(raw, dict):
                raise ConfigError('', f"{self.config_path}: top level must be a mapping")

        raw = self._expand_env_vars(raw)
        for key, value in (overrides or {}).items():
            if value is not None:
                self._set_dotted(raw, key, value)

        self._config = self.validate(raw)
        logger.info(f"Configuration loaded from {self.config_path or 'defaults'}")
        return self._config

    @staticmethod
    def validate(raw: Dict[str, Any]) -> PipelineConfig:
        try:
            return PipelineConfig.model_validate(raw)
        except ValidationError as e:
            error = e.errors()[0]
            key = '.'.join(str(part) for part in error['loc'])
            message = error['msg']
            if error['type'] == 'extra_forbidden':
                message = f"unknown key '{error['loc'][-1]}'"
            raise ConfigError(key, message) from e

    def _expand_env_vars(self, obj: Any, path: str = '') -> Any:
        """
        Recursively expand ${VAR_NAME} references.

        Raises:
            ConfigError: If a referenced environment variable is not set
        """
        if isinstance(obj, dict):
            return {k: self._expand_env_vars(v, f"{path}.{k}" if path else str(k)) for k, v in obj.items()}
        elif isinstance(obj, list):
            return [self._expand_env_vars(item, f"{path}[{i}]") for i, item in enumerate(obj)]
        elif isinstance(obj, str):
            for var_name in ENV_PATTERN.findall(obj):
                env_value = os.getenv(var_name)
                if env_value is None:
                    raise ConfigError(
                        path,
                        f"environment variable '{var_name}' is not set. "
                        f"Please set it in your .env file or environment."
                    )
                obj = obj.replace(f'${{{var_name}}}', env_value)
            return obj
        else:
            return obj

    @staticmethod
    def _set_dotted(raw: Dict[str, Any], key: str, value: Any) -> None:
        *parents, leaf = key.split('.')
        node = raw
        for part in parents:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(key, f"'{part}' is not a section")
        node[leaf] = value

    def get(self, key: str, default: Any = None) -> Any:
        """
        Get a configuration value by dotted key, e.g. 'train.batch_rays'.
        """
        if self._config is None:
            raise RuntimeError("Configuration not loaded. Call load() first.")

        value: Any = self._config
        for k in key.split('.'):
            if isinstance(value, BaseModel) and k in type(value).model_fields:
                value = getattr(value, k)
            else:
                return default
        return value


def validate_config(path: Optional[Union[str, Path]], overrides: Optional[Dict[str, Any]] = None) -> PipelineConfig:
    """Load a config file (None = defaults) and return the normalized configuration."""
    return ConfigLoader(path).load(overrides)
