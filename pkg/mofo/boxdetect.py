"""Motion-box detection: Otsu threshold, border following, top-contour selection, IoU."""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import cv2
import numpy as np

from .config import DetectConfig, FlowConfig, SmoothConfig
from .errors import RejectedInputError
from .flow import FlowField, FrameLike, check_clip, estimate_flow
from .motionmap import MotionMap, smoothed_motion_map
from .parallel import ordered_map

logger = logging.getLogger(__name__)

OTSU_BINS = 256


@dataclass(frozen=True)
class BitMask:
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.ndim != 2:
            raise RejectedInputError(f"mask must be 2-D, got shape {bits.shape}")
        object.__setattr__(self, 'bits', bits)

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]


@dataclass(frozen=True)
class MotionBox:
    """Pixel rectangle; (x0, y0) inclusive, (x1, y1) exclusive."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if not (0 <= self.x0 < self.x1 and 0 <= self.y0 < self.y1):
            raise RejectedInputError(f"invalid box ({self.x0},{self.y0})-({self.x1},{self.y1})")

    @classmethod
    def full(cls, width: int, height: int) -> 'MotionBox':
        return cls(0, 0, width, height)

    @classmethod
    def from_dict(cls, data: Dict[str, int]) -> 'MotionBox':
        return cls(int(data['x0']), int(data['y0']), int(data['x1']), int(data['y1']))

    def to_dict(self) -> Dict[str, int]:
        return {'x0': self.x0, 'y0': self.y0, 'x1': self.x1, 'y1': self.y1}

    @property
    def area(self) -> int:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def union(self, other: 'MotionBox') -> 'MotionBox':
        return MotionBox(min(self.x0, other.x0), min(self.y0, other.y0),
                         max(self.x1, other.x1), max(self.y1, other.y1))

    def fits(self, width: int, height: int) -> bool:
        return self.x1 <= width and self.y1 <= height


@dataclass(frozen=True)
class Contour:
    """Outer border of one 8-connected component."""

    points: List[Tuple[int, int]]
    area: int

    def __post_init__(self):
        if not self.points:
            raise RejectedInputError("contour has no points")
        if self.area < 1:
            raise RejectedInputError(f"contour area must be >= 1, got {self.area}")

    @property
    def bbox(self) -> MotionBox:
        xs = [p[0] for p in self.points]
        ys = [p[1] for p in self.points]
        return MotionBox(min(xs), min(ys), max(xs) + 1, max(ys) + 1)


@dataclass
class ClipDetection:
    """Clip-level box plus the per-pair boxes it was built from."""

    box: MotionBox
    frame_boxes: List[MotionBox] = field(default_factory=list)
    fallback: List[bool] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            'clip': self.box.to_dict(),
            'frames': {str(i): b.to_dict() for i, b in enumerate(self.frame_boxes)},
            'fallback': {str(i): f for i, f in enumerate(self.fallback)},
        }


def otsu_threshold(values: np.ndarray) -> Optional[float]:
    """Largest value of the lower Otsu class over a 256-bin histogram; None for constant input."""
    values = np.asarray(values, dtype=np.float64).ravel()
    lo, hi = float(values.min()), float(values.max())
    if hi <= lo:
        return None
    idx = np.clip(((values - lo) / (hi - lo) * OTSU_BINS).astype(np.int64), 0, OTSU_BINS - 1)
    hist = np.bincount(idx, minlength=OTSU_BINS).astype(np.float64)
    centers = lo + (np.arange(OTSU_BINS) + 0.5) * (hi - lo) / OTSU_BINS

    w0 = np.cumsum(hist)
    w1 = w0[-1] - w0
    s0 = np.cumsum(hist * centers)
    s1 = s0[-1] - s0
    valid = (w0 > 0) & (w1 > 0)
    between = np.zeros(OTSU_BINS)
    mu0 = np.divide(s0, w0, out=np.zeros_like(s0), where=valid)
    mu1 = np.divide(s1, w1, out=np.zeros_like(s1), where=valid)
    between[valid] = w0[valid] * w1[valid] * (mu0[valid] - mu1[valid]) ** 2
    k = int(np.argmax(between))
    return float(values[idx <= k].max())


def binarize(motion: MotionMap) -> BitMask:
    """Foreground where the map exceeds its Otsu threshold; all background if the map is constant."""
    t = otsu_threshold(motion.m)
    if t is None:
        return BitMask(np.zeros(motion.m.shape, dtype=bool))
    return BitMask(motion.m > t)


def find_contours(mask: BitMask) -> List[Contour]:
    """Outer borders of 8-connected foreground components, holes excluded."""
    image = mask.bits.astype(np.uint8)
    if not image.any():
        return []
    borders, hierarchy = cv2.findContours(image, cv2.RETR_CCOMP, cv2.CHAIN_APPROX_NONE)
    _, labels, stats, _ = cv2.connectedComponentsWithStats(image, connectivity=8)

    contours = []
    for border, links in zip(borders, hierarchy[0]):
        if links[3] != -1:
            continue  # hole border
        points = [(int(x), int(y)) for x, y in border.reshape(-1, 2)]
        x, y = points[0]
        area = int(stats[labels[y, x], cv2.CC_STAT_AREA])
        contours.append(Contour(points, area))
    contours.sort(key=lambda c: (c.bbox.y0, c.bbox.x0))
    logger.debug("found %d contours", len(contours))
    return contours


def select_motion_box(contours: Sequence[Contour], frame_dims: Tuple[int, int],
                      cfg: Optional[DetectConfig] = None) -> MotionBox:
    """Tightest box over the top-k contours by area; the full frame if none qualify."""
    cfg = cfg or DetectConfig()
    width, height = frame_dims
    if width <= 0 or height <= 0:
        raise RejectedInputError(f"invalid frame dims {frame_dims}")
    min_area = cfg.min_area_fraction * width * height
    ranked = sorted((c for c in contours if c.area >= min_area), key=lambda c: -c.area)
    if not ranked:
        return MotionBox.full(width, height)
    box = ranked[0].bbox
    for contour in ranked[1:cfg.top_k]:
        box = box.union(contour.bbox)
    return box


def border_margin(flow: FlowField, smooth_cfg: Optional[SmoothConfig] = None) -> int:
    """Band reached by content entering or leaving the frame, widened by the smoothing and gradient stencils."""
    smooth_cfg = smooth_cfg or SmoothConfig()
    reach = float(max(np.abs(flow.u).max(), np.abs(flow.v).max()))
    return int(math.ceil(reach)) + smooth_cfg.kernel_radius + 1


def suppress_border(motion: MotionMap, margin: int) -> MotionMap:
    """Zero a band of the given width along the frame edges, capped at a quarter of the shorter side."""
    margin = min(margin, min(motion.width, motion.height) // 4)
    if margin <= 0:
        return motion
    m = motion.m.copy()
    m[:margin, :] = 0.0
    m[-margin:, :] = 0.0
    m[:, :margin] = 0.0
    m[:, -margin:] = 0.0
    return MotionMap(m)


def _pair_box(prev, nxt, flow_cfg, smooth_cfg, detect_cfg) -> Tuple[MotionBox, bool]:
    flow = estimate_flow(prev, nxt, flow_cfg)
    detect_cfg = detect_cfg or DetectConfig()
    margin = detect_cfg.border_margin
    if margin is None:
        margin = border_margin(flow, smooth_cfg)
    motion = suppress_border(smoothed_motion_map(flow, smooth_cfg), margin)
    contours = find_contours(binarize(motion))
    min_area = detect_cfg.min_area_fraction * flow.width * flow.height
    box = select_motion_box(contours, (flow.width, flow.height), detect_cfg)
    return box, not any(c.area >= min_area for c in contours)


def detect_clip(frames: Sequence[FrameLike], flow_cfg: Optional[FlowConfig] = None,
                smooth_cfg: Optional[SmoothConfig] = None, detect_cfg: Optional[DetectConfig] = None,
                workers: Optional[int] = None) -> ClipDetection:
    """Run flow, motion map, smoothing and contour selection on every consecutive pair."""
    frames = check_clip(frames)
    width, height = frames[0].width, frames[0].height
    results = ordered_map(lambda pair: _pair_box(pair[0], pair[1], flow_cfg, smooth_cfg, detect_cfg),
                          list(zip(frames[:-1], frames[1:])), workers)
    boxes = [b for b, _ in results]
    fallback = [f for _, f in results]

    moving = [b for b, f in zip(boxes, fallback) if not f]
    if not moving:
        logger.warning("no motion contours in any of %d frame pairs, using the full frame", len(boxes))
        clip_box = MotionBox.full(width, height)
    else:
        clip_box = moving[0]
        for box in moving[1:]:
            clip_box = clip_box.union(box)
    return ClipDetection(clip_box, boxes, fallback)


def clip_motion_box(frames: Sequence[FrameLike], flow_cfg: Optional[FlowConfig] = None,
                    smooth_cfg: Optional[SmoothConfig] = None, detect_cfg: Optional[DetectConfig] = None,
                    workers: Optional[int] = None) -> MotionBox:
    """Union of the per-pair motion boxes of a clip."""
    return detect_clip(frames, flow_cfg, smooth_cfg, detect_cfg, workers).box


def iou(a: MotionBox, b: MotionBox) -> float:
    """Intersection over union by pixel area."""
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    inter = max(iw, 0) * max(ih, 0)
    union = a.area + b.area - inter
    return inter / union
