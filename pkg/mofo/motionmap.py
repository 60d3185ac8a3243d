"""Motion-boundary magnitude maps that cancel uniform camera motion."""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage as ndi

from .config import SmoothConfig
from .errors import RejectedInputError
from .flow import FlowField

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MotionMap:
    """Nonnegative per-pixel motion-boundary magnitude."""

    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=np.float64)
        if m.ndim != 2:
            raise RejectedInputError(f"motion map must be 2-D, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise RejectedInputError("motion map contains non-finite values")
        if m.size and m.min() < 0.0:
            raise RejectedInputError("motion map contains negative values")
        object.__setattr__(self, 'm', m)

    @property
    def width(self) -> int:
        return self.m.shape[1]

    @property
    def height(self) -> int:
        return self.m.shape[0]


def spatial_gradients(field: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(d/dx, d/dy): central differences inside, one-sided differences on the border."""
    field = np.asarray(field, dtype=np.float64)
    if field.ndim != 2 or min(field.shape) < 3:
        raise RejectedInputError(f"gradients need a 2-D field of at least 3x3, got shape {field.shape}")
    d_dy, d_dx = np.gradient(field)
    return d_dx, d_dy


def motion_map(flow: FlowField) -> MotionMap:
    """Root of the summed squares of the four flow derivatives."""
    dux, duy = spatial_gradients(flow.u)
    dvx, dvy = spatial_gradients(flow.v)
    return MotionMap(np.sqrt(dux * dux + duy * duy + dvx * dvx + dvy * dvy))


def gaussian_kernel(cfg: SmoothConfig) -> np.ndarray:
    """Normalized 1-D Gaussian taps over [-radius, radius]."""
    x = np.arange(-cfg.kernel_radius, cfg.kernel_radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * cfg.sigma * cfg.sigma))
    return k / k.sum()


def gaussian_smooth(motion: MotionMap, cfg: Optional[SmoothConfig] = None) -> MotionMap:
    """Separable Gaussian low-pass, x then y, replicating edge pixels."""
    cfg = cfg or SmoothConfig()
    kernel = gaussian_kernel(cfg)
    out = ndi.convolve1d(motion.m, kernel, axis=1, mode='nearest')
    out = ndi.convolve1d(out, kernel, axis=0, mode='nearest')
    return MotionMap(np.maximum(out, 0.0))


def smoothed_motion_map(flow: FlowField, cfg: Optional[SmoothConfig] = None) -> MotionMap:
    return gaussian_smooth(motion_map(flow), cfg)
