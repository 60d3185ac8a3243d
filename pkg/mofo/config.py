"""Configuration models and environment settings."""
import math
import os
from pathlib import Path
from typing import List, Literal, Optional, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

# Load environment variables
load_dotenv()


def max_threads() -> int:
    """Worker cap for parallel per-pair and per-clip work."""
    return max(1, int(os.getenv('MOFO_THREADS', os.cpu_count() or 1)))


def log_level() -> str:
    return os.getenv('MOFO_LOG_LEVEL', 'INFO').upper()


def output_dir() -> Path:
    return Path(os.getenv('MOFO_OUTPUT_DIR', './runs'))


class _Config(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')


class FlowConfig(_Config):
    """TV-L1 primal-dual solver parameters."""

    pyramid_levels: int = Field(5, gt=0)
    pyramid_scale: float = Field(0.5, gt=0.0, lt=1.0)
    warps_per_level: int = Field(5, gt=0)
    inner_iterations: int = Field(30, gt=0)
    lambda_data: float = Field(0.15, gt=0.0)
    theta: float = Field(0.3, gt=0.0)
    tau: float = Field(0.25, gt=0.0)
    stop_epsilon: float = Field(1e-3, gt=0.0)
    min_level_size: int = Field(16, gt=0)
    median_filter: bool = True

    @model_validator(mode='after')
    def _check_stability(self):
        if self.tau * self.theta > 0.125 + 1e-12:
            raise ValueError(f"tau*theta must be <= 1/8 for a stable dual step, got {self.tau * self.theta:.4f}")
        return self


class SmoothConfig(_Config):
    """Gaussian low-pass applied to motion maps."""

    sigma: float = Field(2.0, gt=0.0)
    kernel_radius: int = 5

    @model_validator(mode='after')
    def _check_radius(self):
        if self.kernel_radius < 2 * math.ceil(self.sigma):
            raise ValueError(
                f"kernel_radius must be >= 2*ceil(sigma) = {2 * math.ceil(self.sigma)}, got {self.kernel_radius}"
            )
        return self


class DetectConfig(_Config):
    """Contour ranking and clip aggregation."""

    top_k: int = Field(2, gt=0)
    min_area_fraction: float = Field(0.001, ge=0.0, lt=1.0)
    per_frame: bool = False
    # None derives the band from the flow magnitude and smoothing radius; 0 disables it
    border_margin: Optional[int] = Field(None, ge=0)


MaskMode = Literal['motion', 'tube', 'patch']
InsideTest = Literal['center', 'any_overlap', 'half_overlap']


class MaskConfig(_Config):
    """Tube grid and masking ratios."""

    tube_dims: Tuple[int, int, int] = (8, 16, 16)
    overall_ratio: float = Field(0.9, gt=0.0, le=1.0)
    inside_ratio: float = Field(0.75, ge=0.0, le=1.0)
    mode: MaskMode = 'motion'
    inside_test: InsideTest = 'center'

    @field_validator('tube_dims')
    @classmethod
    def _positive_dims(cls, value):
        if any(d <= 0 for d in value):
            raise ValueError(f"tube dims must be positive, got {value}")
        return value


class NetConfig(_Config):
    """Shape of the desk-scale MAE and finetuning head."""

    clip_dims: Tuple[int, int, int, int] = (8, 32, 32, 1)
    tube_dims: Tuple[int, int, int] = (4, 8, 8)
    d_model: int = Field(32, gt=0)
    depth_enc: int = Field(2, ge=1)
    depth_dec: int = Field(1, ge=1)
    heads: int = Field(2, gt=0)
    mlp_ratio: int = Field(4, gt=0)
    mca_heads: int = Field(3, gt=0)
    mca_depth: int = Field(1, ge=1)
    num_classes: int = Field(2, ge=2)
    head: Literal['mca', 'linear'] = 'mca'

    @model_validator(mode='after')
    def _check_shapes(self):
        if self.d_model % self.heads:
            raise ValueError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        t, h, w, _ = self.clip_dims
        tt, th, tw = self.tube_dims
        if t % tt or h % th or w % tw:
            raise ValueError(f"clip dims {self.clip_dims} not divisible by tube dims {self.tube_dims}")
        return self

    @property
    def grid_dims(self) -> Tuple[int, int, int]:
        t, h, w, _ = self.clip_dims
        tt, th, tw = self.tube_dims
        return t // tt, h // th, w // tw

    @property
    def num_tokens(self) -> int:
        t, h, w = self.grid_dims
        return t * h * w

    @property
    def tube_size(self) -> int:
        tt, th, tw = self.tube_dims
        return tt * th * tw * self.clip_dims[3]


class OptimizerConfig(_Config):
    """Adam settings; no schedule."""

    lr: float = Field(1e-3, gt=0.0)
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = Field(1e-8, gt=0.0)
    steps: int = Field(500, ge=0)
    seed: int = 0


class SweepConfig(_Config):
    """Inside-ratio sweep harness settings."""

    ratios: List[float] = [0.70, 0.75, 0.90, 0.95]
    fixed_overall: float = Field(0.9, gt=0.0, le=1.0)
    mode: MaskMode = 'motion'
    box_source: Literal['gt', 'detected'] = 'gt'
    steps: int = Field(200, ge=0)
    heldout: int = Field(4, ge=1)

    @field_validator('ratios')
    @classmethod
    def _ratios_in_range(cls, value):
        if not value:
            raise ValueError("at least one ratio is required")
        for r in value:
            if not 0.0 < r <= 1.0:
                raise ValueError(f"ratio {r} outside (0, 1]")
        return value


class RunConfig(_Config):
    """Everything a CLI run needs to be replayed."""

    subcommand: str
    seed: int = 0
    inputs: dict = {}
    outputs: dict = {}
    params: dict = {}
    configs: dict = {}
    version: Optional[str] = None
