"""Synthetic sprite scenes with exact ground truth, and the evaluation harness built on them."""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import ndimage as ndi

from .boxdetect import MotionBox, detect_clip, iou
from .config import DetectConfig, FlowConfig, MaskConfig, NetConfig, OptimizerConfig, SmoothConfig, SweepConfig
from .errors import RejectedInputError
from .masker import audit_plan, motion_plan
from .parallel import ordered_map
from .seeding import derive_seed, numpy_rng
from .train import evaluate_reconstruction, train_pretrain

logger = logging.getLogger(__name__)

TEXTURE_RANGE = (0.1, 0.9)


class SceneSpec(BaseModel):
    """One synthetic clip: a textured sprite over a textured background, optionally panned."""

    model_config = ConfigDict(frozen=True, extra='forbid')

    width: int = Field(96, ge=8)
    height: int = Field(96, ge=8)
    frames: int = Field(8, ge=2)
    sprite_size: int = Field(32, ge=1)
    sprite_seed: int = 1
    start: Tuple[float, float] = (10.0, 10.0)
    velocity: Tuple[float, float] = (2.0, 0.0)
    background_seed: int = 2
    pan: Tuple[float, float] = (0.0, 0.0)
    noise_sigma: float = Field(0.0, ge=0.0)
    texture_sigma: float = Field(2.0, gt=0.0)
    label: int = 0

    def position(self, t: int) -> Tuple[int, int]:
        """Rendered top-left corner at frame t, in post-pan pixel coordinates."""
        x = self.start[0] + (self.velocity[0] + self.pan[0]) * t
        y = self.start[1] + (self.velocity[1] + self.pan[1]) * t
        return int(math.floor(x + 0.5)), int(math.floor(y + 0.5))

    @model_validator(mode='after')
    def _check_trajectory(self):
        values = list(self.start) + list(self.velocity) + list(self.pan)
        if not all(math.isfinite(v) for v in values):
            raise ValueError("start, velocity and pan must be finite")
        for t in range(self.frames):
            x, y = self.position(t)
            if x < 0 or y < 0 or x + self.sprite_size > self.width or y + self.sprite_size > self.height:
                raise ValueError(f"sprite leaves the {self.width}x{self.height} frame at t={t} (corner {x},{y})")
        return self


@dataclass
class GeneratedClip:
    frames: List[np.ndarray]
    boxes: List[MotionBox]
    union_box: MotionBox
    label: int = 0

    def volume(self) -> np.ndarray:
        """(T, H, W, 1) array for the network."""
        return np.stack(self.frames)[..., None]


def band_limited_texture(shape: Tuple[int, int], seed: int, sigma: float) -> np.ndarray:
    """Gaussian-filtered white noise rescaled into TEXTURE_RANGE."""
    noise = numpy_rng(seed, 'texture').standard_normal(shape)
    smooth = ndi.gaussian_filter(noise, sigma, mode='wrap')
    lo, hi = smooth.min(), smooth.max()
    unit = (smooth - lo) / (hi - lo) if hi > lo else np.zeros(shape)
    return TEXTURE_RANGE[0] + unit * (TEXTURE_RANGE[1] - TEXTURE_RANGE[0])


def gen_clip(spec: SceneSpec, seed: int = 0) -> GeneratedClip:
    """Render the scene; ground-truth boxes follow the sprite exactly."""
    T, H, W, s = spec.frames, spec.height, spec.width, spec.sprite_size
    shift_x = [int(math.floor(spec.pan[0] * t + 0.5)) for t in range(T)]
    shift_y = [int(math.floor(spec.pan[1] * t + 0.5)) for t in range(T)]
    base_x, base_y = max(shift_x), max(shift_y)
    canvas_w = W + base_x - min(shift_x)
    canvas_h = H + base_y - min(shift_y)
    background = band_limited_texture((canvas_h, canvas_w), derive_seed(spec.background_seed, 'background'),
                                      spec.texture_sigma)
    sprite = band_limited_texture((s, s), derive_seed(spec.sprite_seed, 'sprite'), spec.texture_sigma)
    noise_rng = numpy_rng(seed, 'noise')

    frames, boxes = [], []
    for t in range(T):
        # content moves by +pan, so the camera window moves by -pan
        ox, oy = base_x - shift_x[t], base_y - shift_y[t]
        frame = background[oy:oy + H, ox:ox + W].copy()
        x, y = spec.position(t)
        frame[y:y + s, x:x + s] = sprite
        if spec.noise_sigma > 0:
            frame = np.clip(frame + noise_rng.normal(0.0, spec.noise_sigma, frame.shape), 0.0, 1.0)
        frames.append(frame)
        boxes.append(MotionBox(x, y, x + s, y + s))

    union = boxes[0]
    for box in boxes[1:]:
        union = union.union(box)
    return GeneratedClip(frames, boxes, union, spec.label)


@dataclass
class EvalReport:
    """Rows in scene order plus summary metrics and the configuration that produced them."""

    kind: str
    rows: List[Dict] = field(default_factory=list)
    summary: Dict[str, float] = field(default_factory=dict)
    audits: List[Dict] = field(default_factory=list)
    traces: Dict[str, List[float]] = field(default_factory=dict)
    config: Dict = field(default_factory=dict)

    def check_finite(self):
        values = list(self.summary.values())
        for row in self.rows:
            values.extend(v for v in row.values() if isinstance(v, float))
        for trace in self.traces.values():
            values.extend(trace)
        if not all(math.isfinite(v) for v in values):
            raise RejectedInputError(f"{self.kind} report contains non-finite values")
        return self

    def to_dict(self) -> Dict:
        return {'kind': self.kind, 'rows': self.rows, 'summary': self.summary,
                'audits': self.audits, 'traces': self.traces, 'config': self.config}

    def table(self) -> Tuple[List[str], List[List]]:
        """CSV header and rows."""
        if not self.rows:
            return [], []
        header = [k for k, v in self.rows[0].items() if not isinstance(v, dict)]
        return header, [[row[k] for k in header] for row in self.rows]


def detection_suite(count: int, seed: int = 0, velocity: float = 2.0, pan: Tuple[float, float] = (0.0, 0.0),
                    size: int = 96, frames: int = 8, sprite: int = 32, noise_sigma: float = 0.0) -> List[SceneSpec]:
    """Seeded suite of sprite scenes moving along random axis directions."""
    rng = numpy_rng(seed, 'detection-suite')
    specs = []
    for _ in range(count):
        direction = rng.integers(4)
        vx, vy = [(velocity, 0.0), (-velocity, 0.0), (0.0, velocity), (0.0, -velocity)][direction]
        travel_x = abs((vx + pan[0]) * (frames - 1))
        travel_y = abs((vy + pan[1]) * (frames - 1))
        span_x = size - sprite - int(math.ceil(travel_x))
        span_y = size - sprite - int(math.ceil(travel_y))
        if span_x < 0 or span_y < 0:
            raise RejectedInputError(f"a {sprite}px sprite cannot travel {travel_x:.1f}px in a {size}px frame")
        sx = float(rng.integers(span_x + 1)) + (travel_x if vx + pan[0] < 0 else 0.0)
        sy = float(rng.integers(span_y + 1)) + (travel_y if vy + pan[1] < 0 else 0.0)
        specs.append(SceneSpec(
            width=size, height=size, frames=frames, sprite_size=sprite,
            sprite_seed=int(rng.integers(1 << 31)), background_seed=int(rng.integers(1 << 31)),
            start=(sx, sy), velocity=(vx, vy), pan=pan, noise_sigma=noise_sigma,
        ))
    return specs


def direction_suite(count: int, seed: int = 0, net_cfg: Optional[NetConfig] = None, sprite: int = 12,
                    speed: float = 2.0) -> List[SceneSpec]:
    """Two-class task sized for the network: label 0 moves left, label 1 moves right."""
    net_cfg = net_cfg or NetConfig()
    T, H, W, _ = net_cfg.clip_dims
    travel = int(math.ceil(speed * (T - 1)))
    if sprite + travel > W or sprite > H:
        raise RejectedInputError(f"a {sprite}px sprite cannot travel {travel}px in a {W}x{H} frame")
    rng = numpy_rng(seed, 'direction-suite')
    specs = []
    for i in range(count):
        label = i % 2
        x0 = int(rng.integers(W - sprite - travel + 1))
        y0 = float(rng.integers(H - sprite + 1))
        start_x = float(x0 + travel) if label == 0 else float(x0)
        specs.append(SceneSpec(
            width=W, height=H, frames=T, sprite_size=sprite,
            sprite_seed=int(rng.integers(1 << 31)), background_seed=int(rng.integers(1 << 31)),
            start=(start_x, y0), velocity=(-speed if label == 0 else speed, 0.0),
            texture_sigma=3.0, label=label,
        ))
    return specs


def _detect_row(index: int, spec: SceneSpec, seed: int, flow_cfg, smooth_cfg, detect_cfg) -> Dict:
    clip = gen_clip(spec, derive_seed(seed, f'clip{index}'))
    detection = detect_clip(clip.frames, flow_cfg, smooth_cfg, detect_cfg, workers=1)
    return {
        'clip': index,
        'iou': iou(detection.box, clip.union_box),
        'fallback': all(detection.fallback),
        'detected': detection.box.to_dict(),
        'ground_truth': clip.union_box.to_dict(),
    }


def eval_detection(specs: Sequence[SceneSpec], seed: int = 0, flow_cfg: Optional[FlowConfig] = None,
                   smooth_cfg: Optional[SmoothConfig] = None, detect_cfg: Optional[DetectConfig] = None,
                   mask_cfg: Optional[MaskConfig] = None, workers: Optional[int] = None) -> EvalReport:
    """IoU of automatic clip boxes against the rendered sprite sweep, one row per spec."""
    if not specs:
        raise RejectedInputError("detection evaluation needs at least one scene")
    rows = ordered_map(lambda item: _detect_row(item[0], item[1], seed, flow_cfg, smooth_cfg, detect_cfg),
                       list(enumerate(specs)), workers)
    report = EvalReport('detection', rows=rows)
    report.summary = {
        'mean_iou': float(np.mean([r['iou'] for r in rows])),
        'fallback_rate': float(np.mean([r['fallback'] for r in rows])),
        'clips': float(len(rows)),
    }
    if mask_cfg is not None:
        for row, spec in zip(rows, specs):
            dims = (spec.frames - spec.frames % mask_cfg.tube_dims[0], spec.height, spec.width)
            grid, plan = motion_plan(dims, mask_cfg.tube_dims, MotionBox.from_dict(row['detected']),
                                     mask_cfg.overall_ratio, mask_cfg.inside_ratio,
                                     derive_seed(seed, f"mask{row['clip']}"), mask_cfg.mode, mask_cfg.inside_test)
            report.audits.append({'clip': row['clip'], **audit_plan(grid, plan)})
    report.config = {
        'seed': seed,
        'flow': (flow_cfg or FlowConfig()).model_dump(),
        'smooth': (smooth_cfg or SmoothConfig()).model_dump(),
        'detect': (detect_cfg or DetectConfig()).model_dump(),
        'mask': mask_cfg.model_dump() if mask_cfg else None,
        'scenes': [s.model_dump() for s in specs],
    }
    logger.info("detection: mean IoU %.3f over %d clips", report.summary['mean_iou'], len(rows))
    return report.check_finite()


def micro_suite(count: int, seed: int = 0, net_cfg: Optional[NetConfig] = None) -> List[SceneSpec]:
    """Network-sized scenes for pretraining runs."""
    net_cfg = net_cfg or NetConfig()
    T, H, W, _ = net_cfg.clip_dims
    sprite = max(4, min(H, W) * 3 // 8)
    return [s.model_copy(update={'texture_sigma': 3.0})
            for s in detection_suite(count, seed, velocity=1.0, size=min(H, W), frames=T, sprite=sprite)]


def clip_boxes(clips: Sequence[GeneratedClip], box_source: str, flow_cfg, smooth_cfg, detect_cfg) -> List[MotionBox]:
    if box_source == 'gt':
        return [c.union_box for c in clips]
    return ordered_map(lambda c: detect_clip(c.frames, flow_cfg, smooth_cfg, detect_cfg, workers=1).box, list(clips))


def _plans(clips: Sequence[GeneratedClip], boxes: Sequence[MotionBox], net_cfg: NetConfig, overall: float,
           inside: float, mode: str, seed: int, tag: str):
    T, H, W, _ = net_cfg.clip_dims
    plans, audits = [], []
    for i, box in enumerate(boxes):
        grid, plan = motion_plan((T, H, W), net_cfg.tube_dims, box, overall, inside,
                                 derive_seed(seed, f'{tag}{i}'), mode)
        plans.append(plan)
        audits.append(audit_plan(grid, plan))
    return plans, audits


def sweep_inside_ratio(train_specs: Sequence[SceneSpec], heldout_specs: Sequence[SceneSpec],
                       cfg: Optional[SweepConfig] = None, seed: int = 0, net_cfg: Optional[NetConfig] = None,
                       opt_cfg: Optional[OptimizerConfig] = None, flow_cfg: Optional[FlowConfig] = None,
                       smooth_cfg: Optional[SmoothConfig] = None,
                       detect_cfg: Optional[DetectConfig] = None) -> EvalReport:
    """Pretrain once per inside ratio at a fixed overall ratio; held-out reconstruction loss per ratio."""
    cfg = cfg or SweepConfig()
    net_cfg = net_cfg or NetConfig()
    opt_cfg = (opt_cfg or OptimizerConfig()).model_copy(
        update={'steps': cfg.steps, 'seed': derive_seed(seed, 'pretrain')})
    if not train_specs or not heldout_specs:
        raise RejectedInputError("sweep needs training and held-out scenes")
    train = [gen_clip(s, derive_seed(seed, f'train{i}')) for i, s in enumerate(train_specs)]
    heldout = [gen_clip(s, derive_seed(seed, f'heldout{i}')) for i, s in enumerate(heldout_specs)]
    train_boxes = clip_boxes(train, cfg.box_source, flow_cfg, smooth_cfg, detect_cfg)
    heldout_boxes = clip_boxes(heldout, cfg.box_source, flow_cfg, smooth_cfg, detect_cfg)

    report = EvalReport('inside_ratio_sweep')
    for ratio in cfg.ratios:
        plans, audits = _plans(train, train_boxes, net_cfg, cfg.fixed_overall, ratio, cfg.mode, seed, 'mask')
        eval_plans, _ = _plans(heldout, heldout_boxes, net_cfg, cfg.fixed_overall, ratio, cfg.mode, seed, 'eval')
        result = train_pretrain([c.volume() for c in train], plans, opt_cfg=opt_cfg, net_cfg=net_cfg)
        heldout_loss = evaluate_reconstruction(result.net, [c.volume() for c in heldout], eval_plans)
        final = result.losses[-1] if result.losses else heldout_loss
        report.rows.append({'inside_ratio': float(ratio), 'heldout_loss': heldout_loss, 'final_train_loss': final})
        report.audits.extend({'inside_ratio': float(ratio), **a} for a in audits)
        report.traces[f'{ratio:.2f}'] = result.losses
        logger.info("inside ratio %.2f: held-out loss %.5f", ratio, heldout_loss)

    report.summary = {'ratios': float(len(cfg.ratios)), 'fixed_overall': cfg.fixed_overall}
    report.config = {
        'seed': seed,
        'sweep': cfg.model_dump(),
        'net': net_cfg.model_dump(),
        'optimizer': opt_cfg.model_dump(),
        'train_scenes': [s.model_dump() for s in train_specs],
        'heldout_scenes': [s.model_dump() for s in heldout_specs],
    }
    return report.check_finite()
