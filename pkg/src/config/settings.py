"""Toolkit settings and configuration management."""

from pathlib import Path
from typing import Optional, Tuple, Union

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

from src.utils.validators import ConfigurationError


class Settings(BaseSettings):
    """Toolkit settings loaded from flags, environment variables and a config file."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore"
    )

    # Depth Discretization
    discretization_mode: str = Field(
        default="LID",
        description="Depth discretization: 'UD', 'SID' or 'LID'"
    )
    d_min: float = Field(
        default=2.0,
        description="Minimum discretized depth in meters",
        ge=0.0
    )
    d_max: float = Field(
        default=46.8,
        description="Maximum discretized depth in meters",
        gt=0.0
    )
    num_bins: int = Field(
        default=16,
        description="Number of depth bins D (overflow bin excluded)",
        ge=1,
        le=1024
    )
    overflow_bin: bool = Field(
        default=True,
        description="Append a bin for depths outside [d_min, d_max]"
    )

    # Voxel Grid (KITTI ranges)
    x_min: float = Field(default=2.0, description="Grid x range start (m)")
    x_max: float = Field(default=46.8, description="Grid x range end (m)")
    y_min: float = Field(default=-30.08, description="Grid y range start (m)")
    y_max: float = Field(default=30.08, description="Grid y range end (m)")
    z_min: float = Field(default=-3.0, description="Grid z range start (m)")
    z_max: float = Field(default=1.0, description="Grid z range end (m)")
    voxel_size: float = Field(
        default=0.16,
        description="Edge length of a cubic voxel (m)",
        gt=0.0
    )

    # Camera
    calib_key: str = Field(
        default="P2",
        description="Projection matrix key selected from a KITTI calibration file"
    )
    image_width: int = Field(
        default=1248,
        description="Image width W_I in pixels",
        ge=1
    )
    image_height: int = Field(
        default=376,
        description="Image height H_I in pixels",
        ge=1
    )
    feature_downsample: int = Field(
        default=4,
        description="Ratio W_I / W_F between image and feature resolution",
        ge=1,
        le=64
    )
    feature_channels: int = Field(
        default=8,
        description="Image feature channels C",
        ge=1,
        le=1024
    )

    # Depth Loss
    alpha_fg: float = Field(default=3.25, description="Foreground focal weight", ge=0.0)
    alpha_bg: float = Field(default=0.25, description="Background focal weight", ge=0.0)
    gamma: float = Field(default=2.0, description="Focal focusing parameter", ge=0.0)
    lambda_depth: float = Field(default=3.0, description="Depth loss weight", ge=0.0)
    lambda_cls: float = Field(default=1.0, description="Classification loss weight", ge=0.0)
    lambda_reg: float = Field(default=2.0, description="Regression loss weight", ge=0.0)
    lambda_dir: float = Field(default=0.2, description="Direction loss weight", ge=0.0)

    # Sampling Cache
    cache_enabled: bool = Field(
        default=True,
        description="Memoize frustum sampling coordinates"
    )
    cache_max_size: int = Field(
        default=16,
        description="Maximum number of cached sampling-coordinate sets",
        ge=1,
        le=1024
    )

    # Performance Settings
    num_workers: int = Field(
        default=1,
        description="Worker threads used by sampling and scatter kernels",
        ge=1,
        le=256
    )
    chunk_size: int = Field(
        default=65536,
        description="Points per sampling/scatter chunk (fixed for reproducibility)",
        ge=1
    )

    # Gradient Checking
    gradcheck_eps: float = Field(
        default=1e-3,
        description="Relative central-difference step",
        gt=0.0,
        le=0.1
    )
    gradcheck_tolerance: float = Field(
        default=1e-4,
        description="Maximum accepted relative gradient error",
        gt=0.0
    )

    # Development Settings
    log_level: str = Field(
        default="INFO",
        description="Logging level"
    )

    def get_voxel_size(self) -> Tuple[float, float, float]:
        """Return the cubic voxel size as an (x, y, z) triple."""
        return (self.voxel_size, self.voxel_size, self.voxel_size)

    def get_ranges(self) -> Tuple[Tuple[float, float], ...]:
        """Return the grid ranges as ((x_min, x_max), (y_min, y_max), (z_min, z_max))."""
        return (
            (self.x_min, self.x_max),
            (self.y_min, self.y_max),
            (self.z_min, self.z_max),
        )


# Global settings instance
settings = Settings()


def load_settings(
    config_file: Optional[Union[str, Path]] = None,
    **overrides: object
) -> Settings:
    """
    Build settings honoring flags > environment > config file > defaults.

    Args:
        config_file: Optional key=value config file
        **overrides: Explicit values (CLI flags); None values are skipped

    Returns:
        Settings instance

    Raises:
        ConfigurationError: If config_file is given but is not a readable file
    """
    explicit = {key: value for key, value in overrides.items() if value is not None}
    if config_file is not None:
        if not Path(config_file).is_file():
            raise ConfigurationError(f"Config file not found: {config_file}")
        return Settings(_env_file=str(config_file), **explicit)
    return Settings(**explicit)


# Logging configuration
def configure_logging(level: Optional[str] = None, force: bool = False) -> None:
    """
    Configure toolkit logging.

    Without force an already configured root logger is left as it is.
    """
    import logging
    import sys

    log_format = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    level_name = (level or settings.log_level).upper()

    logging.basicConfig(
        level=getattr(logging, level_name, logging.INFO),
        format=log_format,
        handlers=[
            logging.StreamHandler(sys.stderr)
        ],
        force=force
    )


# Initialize logging on import
configure_logging()
