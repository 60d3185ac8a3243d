"""Dense optical flow with a coarse-to-fine TV-L1 primal-dual solver."""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage as ndi

from .config import FlowConfig
from .errors import RejectedInputError
from .parallel import ordered_map

logger = logging.getLogger(__name__)

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
MIN_FRAME_SIDE = 8
# the published lambda is calibrated for 8-bit intensities
INTENSITY_SCALE = 255.0
GRAD_IS_ZERO = 1e-10
# fractions of a rejected warp step tried before the level stops
BACKTRACK_STEPS = (0.5, 0.25, 0.125)


def to_luma(rgb: np.ndarray) -> np.ndarray:
    """Convert an (H, W, 3) RGB array in [0,1] to luma."""
    rgb = np.asarray(rgb, dtype=np.float64)
    return rgb[..., 0] * LUMA_WEIGHTS[0] + rgb[..., 1] * LUMA_WEIGHTS[1] + rgb[..., 2] * LUMA_WEIGHTS[2]


@dataclass(frozen=True)
class Frame:
    """Grayscale frame, row-major luma in [0,1]."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixels, dtype=np.float64)
        if arr.ndim == 3 and arr.shape[2] == 3:
            arr = to_luma(arr)
        elif arr.ndim == 3 and arr.shape[2] == 1:
            arr = arr[..., 0]
        if arr.ndim != 2:
            raise RejectedInputError(f"frame must be 2-D (or RGB), got shape {arr.shape}")
        if min(arr.shape) < MIN_FRAME_SIDE:
            raise RejectedInputError(f"frame must be at least {MIN_FRAME_SIDE}x{MIN_FRAME_SIDE}, got {arr.shape[1]}x{arr.shape[0]}")
        if not np.all(np.isfinite(arr)):
            raise RejectedInputError("frame contains non-finite pixels")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise RejectedInputError(f"frame intensities must lie in [0,1], got [{arr.min():.4g}, {arr.max():.4g}]")
        object.__setattr__(self, 'pixels', arr)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class FlowField:
    """Per-pixel displacement in pixels/frame; u horizontal, v vertical."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u)
        v = np.asarray(self.v)
        if u.ndim != 2 or u.shape != v.shape:
            raise RejectedInputError(f"flow components must be equal 2-D arrays, got {u.shape} and {v.shape}")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise RejectedInputError("flow contains non-finite values")
        object.__setattr__(self, 'u', u)
        object.__setattr__(self, 'v', v)

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @classmethod
    def uniform(cls, height: int, width: int, du: float, dv: float) -> 'FlowField':
        return cls(np.full((height, width), float(du)), np.full((height, width), float(dv)))


FrameLike = Union[Frame, np.ndarray]


def as_frame(frame: FrameLike) -> Frame:
    return frame if isinstance(frame, Frame) else Frame(frame)


def endpoint_error(estimated: FlowField, true_u: float, true_v: float, margin: int = 0) -> float:
    """Mean Euclidean distance to a constant true displacement, ignoring a border margin."""
    h, w = estimated.height, estimated.width
    if 2 * margin >= min(h, w):
        raise RejectedInputError(f"margin {margin} leaves no interior in a {w}x{h} field")
    inner = (slice(margin, h - margin), slice(margin, w - margin))
    du = estimated.u[inner] - true_u
    dv = estimated.v[inner] - true_v
    return float(np.mean(np.sqrt(du * du + dv * dv)))


def _resize(image: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    """Bilinear resample onto a pixel-center aligned grid; edges clamp."""
    h, w = image.shape
    nh, nw = shape
    ys = (np.arange(nh) + 0.5) * (h / nh) - 0.5
    xs = (np.arange(nw) + 0.5) * (w / nw) - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing='ij')
    return ndi.map_coordinates(image, [yy, xx], order=1, mode='nearest')


def _forward_gradient(f: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    fx = np.zeros_like(f)
    fy = np.zeros_like(f)
    fx[:, :-1] = f[:, 1:] - f[:, :-1]
    fy[:-1, :] = f[1:, :] - f[:-1, :]
    return fx, fy


def _divergence(px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Negative adjoint of the forward gradient."""
    div = np.zeros_like(px)
    div[:, 0] = px[:, 0]
    div[:, 1:-1] = px[:, 1:-1] - px[:, :-2]
    div[:, -1] = -px[:, -2]
    div[0, :] += py[0, :]
    div[1:-1, :] += py[1:-1, :] - py[:-2, :]
    div[-1, :] += -py[-2, :]
    return div


def _threshold(rho: np.ndarray, grad: np.ndarray, ix: np.ndarray, iy: np.ndarray,
               lt: float) -> Tuple[np.ndarray, np.ndarray]:
    """Pointwise minimizer of the linearized L1 data term plus the quadratic coupling."""
    low = rho < -lt * grad
    high = rho > lt * grad
    flat = grad <= GRAD_IS_ZERO
    step = -rho / np.where(flat, 1.0, grad)
    step = np.where(low, lt, np.where(high, -lt, np.where(flat, 0.0, step)))
    return step * ix, step * iy


class TVL1Solver:
    """Zach-style TV-L1 optical flow over an image pyramid."""

    def __init__(self, cfg: Optional[FlowConfig] = None):
        self.cfg = cfg or FlowConfig()
        # energy at level entry, then after each accepted warp; one list per level (coarsest first)
        self.energy_trace: List[List[float]] = []

    def level_shapes(self, shape: Tuple[int, int]) -> List[Tuple[int, int]]:
        """Pyramid shapes from finest to coarsest."""
        shapes = [shape]
        while len(shapes) < self.cfg.pyramid_levels:
            factor = self.cfg.pyramid_scale ** len(shapes)
            nxt = (int(round(shape[0] * factor)), int(round(shape[1] * factor)))
            if min(nxt) < self.cfg.min_level_size:
                break
            shapes.append(nxt)
        return shapes

    def _pyramid(self, image: np.ndarray, shapes: List[Tuple[int, int]]) -> List[np.ndarray]:
        sigma = 0.6 * np.sqrt(1.0 / self.cfg.pyramid_scale ** 2 - 1.0)
        levels = [image]
        for shape in shapes[1:]:
            smoothed = ndi.gaussian_filter(levels[-1], sigma, mode='nearest')
            levels.append(_resize(smoothed, shape))
        return levels

    def energy(self, i0: np.ndarray, i1: np.ndarray, u: np.ndarray, v: np.ndarray) -> float:
        """TV-L1 objective at the current flow (unlinearized data term)."""
        yy, xx = np.indices(i0.shape, dtype=np.float64)
        warped = ndi.map_coordinates(i1, [yy + v, xx + u], order=1, mode='nearest')
        ux, uy = _forward_gradient(u)
        vx, vy = _forward_gradient(v)
        tv = np.sum(np.sqrt(ux * ux + uy * uy)) + np.sum(np.sqrt(vx * vx + vy * vy))
        return float(tv + self.cfg.lambda_data * np.sum(np.abs(warped - i0)))

    def _median(self, i0, i1, u, v, energy: float):
        """3x3 median of the flow, kept only when it does not raise the energy."""
        mu = ndi.median_filter(u, size=3, mode='nearest')
        mv = ndi.median_filter(v, size=3, mode='nearest')
        filtered = self.energy(i0, i1, mu, mv)
        if filtered <= energy:
            return mu, mv, filtered
        return u, v, energy

    def _descend(self, i0, i1, u, v, cu, cv, candidate: float, current: float):
        """Largest step toward the warp candidate whose energy does not exceed the current one."""
        if candidate <= current:
            return cu, cv, candidate
        for step in BACKTRACK_STEPS:
            su = u + step * (cu - u)
            sv = v + step * (cv - v)
            energy = self.energy(i0, i1, su, sv)
            if energy <= current:
                return su, sv, energy
        return None

    def _solve_level(self, i0: np.ndarray, i1: np.ndarray, u: np.ndarray, v: np.ndarray):
        cfg = self.cfg
        lt = cfg.lambda_data * cfg.theta
        taut = cfg.tau / cfg.theta
        tol = cfg.stop_epsilon ** 2
        yy, xx = np.indices(i0.shape, dtype=np.float64)
        i1y, i1x = np.gradient(i1)
        p11 = np.zeros_like(u)
        p12 = np.zeros_like(u)
        p21 = np.zeros_like(u)
        p22 = np.zeros_like(u)
        current = self.energy(i0, i1, u, v)
        energies = [current]

        for warp in range(cfg.warps_per_level):
            coords = [yy + v, xx + u]
            i1w = ndi.map_coordinates(i1, coords, order=1, mode='nearest')
            i1wx = ndi.map_coordinates(i1x, coords, order=1, mode='nearest')
            i1wy = ndi.map_coordinates(i1y, coords, order=1, mode='nearest')
            grad = i1wx * i1wx + i1wy * i1wy
            rho_c = i1w - i1wx * u - i1wy * v - i0

            cu, cv = u, v
            for n in range(cfg.inner_iterations):
                rho = rho_c + i1wx * cu + i1wy * cv
                d1, d2 = _threshold(rho, grad, i1wx, i1wy, lt)
                u_new = cu + d1 + cfg.theta * _divergence(p11, p12)
                v_new = cv + d2 + cfg.theta * _divergence(p21, p22)
                error = float(np.mean((u_new - cu) ** 2 + (v_new - cv) ** 2))
                cu, cv = u_new, v_new

                ux, uy = _forward_gradient(cu)
                vx, vy = _forward_gradient(cv)
                ng1 = 1.0 + taut * np.sqrt(ux * ux + uy * uy)
                ng2 = 1.0 + taut * np.sqrt(vx * vx + vy * vy)
                p11 = (p11 + taut * ux) / ng1
                p12 = (p12 + taut * uy) / ng1
                p21 = (p21 + taut * vx) / ng2
                p22 = (p22 + taut * vy) / ng2
                if error < tol:
                    break

            candidate = self.energy(i0, i1, cu, cv)
            if cfg.median_filter:
                cu, cv, candidate = self._median(i0, i1, cu, cv, candidate)
            accepted = self._descend(i0, i1, u, v, cu, cv, candidate, current)
            if accepted is None:
                logger.debug("level %s warp %d: no step lowers energy %.4f, level done", i0.shape, warp, current)
                break
            u, v, current = accepted
            energies.append(current)
            logger.debug("level %s warp %d: %d inner iterations, energy %.4f", i0.shape, warp, n + 1, current)

        self.energy_trace.append(energies)
        return u, v

    def solve(self, prev: FrameLike, nxt: FrameLike) -> FlowField:
        """Flow that maps pixels of prev onto nxt."""
        prev, nxt = as_frame(prev), as_frame(nxt)
        if prev.pixels.shape != nxt.pixels.shape:
            raise RejectedInputError(
                f"frame dimensions differ: {prev.width}x{prev.height} vs {nxt.width}x{nxt.height}"
            )
        self.energy_trace = []
        shapes = self.level_shapes(prev.pixels.shape)
        pyr0 = self._pyramid(prev.pixels * INTENSITY_SCALE, shapes)
        pyr1 = self._pyramid(nxt.pixels * INTENSITY_SCALE, shapes)

        u = np.zeros(shapes[-1])
        v = np.zeros(shapes[-1])
        for level in range(len(shapes) - 1, -1, -1):
            if u.shape != shapes[level]:
                (ch, cw), (fh, fw) = u.shape, shapes[level]
                u = _resize(u, (fh, fw)) * (fw / cw)
                v = _resize(v, (fh, fw)) * (fh / ch)
            u, v = self._solve_level(pyr0[level], pyr1[level], u, v)
        return FlowField(u.astype(np.float32), v.astype(np.float32))


def estimate_flow(prev: FrameLike, nxt: FrameLike, cfg: Optional[FlowConfig] = None) -> FlowField:
    """Estimate the TV-L1 flow from prev to nxt."""
    return TVL1Solver(cfg).solve(prev, nxt)


def check_clip(frames: Sequence[FrameLike]) -> List[Frame]:
    if len(frames) < 2:
        raise RejectedInputError(f"a clip needs at least 2 frames, got {len(frames)}")
    frames = [as_frame(f) for f in frames]
    shape = frames[0].pixels.shape
    for i, frame in enumerate(frames):
        if frame.pixels.shape != shape:
            raise RejectedInputError(f"frame {i} has shape {frame.pixels.shape}, expected {shape}")
    return frames


def clip_flows(frames: Sequence[FrameLike], cfg: Optional[FlowConfig] = None,
               workers: Optional[int] = None) -> List[FlowField]:
    """Flow for every consecutive pair; field i maps frame i onto frame i+1."""
    frames = check_clip(frames)
    pairs = list(zip(frames[:-1], frames[1:]))
    logger.debug("estimating %d flow fields at %dx%d", len(pairs), frames[0].width, frames[0].height)
    return ordered_map(lambda pair: estimate_flow(pair[0], pair[1], cfg), pairs, workers)
