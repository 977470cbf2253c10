import contextvars
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Tuple, Type

from dotenv import dotenv_values
from pydantic import Field, ValidationError, field_validator, model_validator
from pydantic.fields import FieldInfo
from pydantic_settings import BaseSettings, PydanticBaseSettingsSource, SettingsConfigDict

from sdtm.errors import ConfigError
from sdtm.frequency import FRED_POOL_SIZE

_config_file: contextvars.ContextVar[Optional[Path]] = contextvars.ContextVar("sdtm_config_file", default=None)


class ConfigFileSource(PydanticBaseSettingsSource):
    """Plain ``key=value`` config file, read with python-dotenv."""

    def __init__(self, settings_cls: Type[BaseSettings]):
        super().__init__(settings_cls)
        path = _config_file.get()
        self.values: Dict[str, Any] = {}
        if path is not None:
            raw = dotenv_values(path)
            unknown = sorted(k for k in raw if k.lower() not in settings_cls.model_fields)
            if unknown:
                raise ConfigError(f"unknown keys in {path}: {', '.join(unknown)}")
            self.values = {k.lower(): v for k, v in raw.items() if v is not None}

    def get_field_value(self, field: FieldInfo, field_name: str) -> Tuple[Any, str, bool]:
        return self.values.get(field_name), field_name, False

    def __call__(self) -> Dict[str, Any]:
        return dict(self.values)


class RunConfig(BaseSettings):
    """
    Everything a training or evaluation run depends on.

    Precedence: explicit values (CLI flags) > SDTM_* environment > config file > defaults.
    Defaults follow the published setup: batch 8, lr 1e-4, lambda_str = lambda_fre = 1, K = 3.
    """

    # Data
    data_root: Optional[Path] = None
    split_file: Optional[Path] = None
    seen_fraction: float = Field(0.8, gt=0, lt=1)
    synthetic_categories: int = Field(4, ge=2)
    synthetic_images: int = Field(50, ge=1)
    synthetic_seed: int = 7
    image_size: int = Field(32, ge=8)
    k: int = Field(3, ge=1)

    # Schedule
    total_iters: int = Field(100_000, gt=0)
    batch_size: int = Field(8, ge=1)
    base_lr: float = Field(1e-4, ge=0)
    adam_beta1: float = Field(0.9, ge=0, lt=1)
    adam_beta2: float = Field(0.999, ge=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)

    # Objective weights and module switches
    lambda_str: float = Field(1.0, ge=0)
    lambda_fre: float = Field(1.0, ge=0)
    texmod: bool = True
    structd: bool = True
    fred: bool = True
    cls_fake_in_d: bool = False

    # Architecture
    width: int = Field(32, ge=1)
    structd_width: int = Field(32, ge=1)
    fred_width: int = Field(32, ge=1)
    tap_layer: int = Field(1, ge=0, le=3)
    leaky_slope: float = Field(0.2, ge=0)
    norm_eps: float = Field(1e-5, gt=0)
    ref_reduction: Literal["sum", "mean"] = "sum"
    texmod_zero_init: bool = True

    # Run bookkeeping
    seed: int = 0
    output_dir: Path = Path("runs/default")
    checkpoint_interval: int = Field(1000, ge=0)
    log_interval: int = Field(1, ge=1)
    eval_interval: int = Field(0, ge=0)
    eval_episodes: int = Field(8, ge=1)
    debug_numerics: bool = False
    png_enabled: bool = False
    log_level: str = "INFO"

    model_config = SettingsConfigDict(env_prefix="SDTM_", case_sensitive=False, extra="forbid")

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: Type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> Tuple[PydanticBaseSettingsSource, ...]:
        return init_settings, env_settings, ConfigFileSource(settings_cls)

    @field_validator("log_level", mode="before")
    @classmethod
    def normalize_log_level(cls, v):
        """Accept any case: 'debug' -> 'DEBUG'."""
        level = str(v).upper()
        if level not in {"DEBUG", "INFO", "WARNING", "ERROR"}:
            raise ValueError(f"unknown log level {v!r}")
        return level

    @model_validator(mode="after")
    def check_data_source(self) -> "RunConfig":
        if self.split_file is not None and self.data_root is None:
            raise ValueError("split_file needs data_root")
        if self.image_size % 8:
            raise ValueError(f"image_size must be a multiple of 8, got {self.image_size}")
        tap_extent = self.image_size // 2 ** (self.tap_layer + 1)
        if self.fred_active and tap_extent < 2 * FRED_POOL_SIZE:
            raise ValueError(
                f"tap_layer {self.tap_layer} at image_size {self.image_size} leaves {tap_extent}x{tap_extent} features, "
                f"the frequency discriminator needs at least {2 * FRED_POOL_SIZE}"
            )
        return self

    @property
    def lambdas(self) -> Tuple[float, float]:
        return self.lambda_str, self.lambda_fre

    @property
    def structd_active(self) -> bool:
        return self.structd and self.lambda_str > 0

    @property
    def fred_active(self) -> bool:
        return self.fred and self.lambda_fre > 0


def load_run_config(config_file: Optional[Path] = None, **overrides: Any) -> RunConfig:
    """Build a RunConfig from an optional key=value file plus explicit overrides."""
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if config_file is not None and not Path(config_file).is_file():
        raise ConfigError(f"config file not found: {config_file}")
    token = _config_file.set(Path(config_file) if config_file is not None else None)
    try:
        return RunConfig(**overrides)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}")
    finally:
        _config_file.reset(token)


def config_from_json(text: str) -> RunConfig:
    """Rebuild a stored config without consulting the environment."""
    try:
        return RunConfig.model_validate_json(text)
    except ValidationError as e:
        raise ConfigError(f"stored configuration is invalid: {e}")
