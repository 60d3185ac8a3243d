"""Tube tokenization and motion-constrained tube masking."""
import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from einops import rearrange

from .boxdetect import MotionBox
from .errors import RejectedInputError
from .seeding import numpy_rng

logger = logging.getLogger(__name__)

# guards ceil/round against products like 0.7 * 10 = 7.000000000000001
_ROUND_SLACK = 1e-9


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5 + _ROUND_SLACK))


def ceil_count(x: float) -> int:
    return int(math.ceil(x - _ROUND_SLACK))


@dataclass(frozen=True)
class TubeGrid:
    """Token grid of a clip; inside marks spatial cells that belong to the motion box."""

    t_cells: int
    h_cells: int
    w_cells: int
    tube_dims: Tuple[int, int, int]
    inside: np.ndarray

    @property
    def spatial_cells(self) -> int:
        return self.h_cells * self.w_cells

    @property
    def num_tokens(self) -> int:
        return self.t_cells * self.spatial_cells

    @property
    def n_inner(self) -> int:
        return self.t_cells * int(self.inside.sum())

    @property
    def n_outer(self) -> int:
        return self.num_tokens - self.n_inner

    @property
    def token_inside(self) -> np.ndarray:
        """Inside flag per token in canonical (t, h, w) order."""
        return np.tile(self.inside.ravel(), self.t_cells)


def _cell_inside(h: int, w: int, tube_h: int, tube_w: int, box: MotionBox, test: str) -> bool:
    y0, x0 = h * tube_h, w * tube_w
    if test == 'center':
        cy, cx = y0 + tube_h // 2, x0 + tube_w // 2
        return box.x0 <= cx < box.x1 and box.y0 <= cy < box.y1
    ow = max(0, min(x0 + tube_w, box.x1) - max(x0, box.x0))
    oh = max(0, min(y0 + tube_h, box.y1) - max(y0, box.y0))
    if test == 'any_overlap':
        return ow * oh > 0
    if test == 'half_overlap':
        return 2 * ow * oh >= tube_w * tube_h
    raise RejectedInputError(f"unknown inside test '{test}'")


def tube_grid(clip_dims: Tuple[int, int, int], tube_dims: Tuple[int, int, int], box: MotionBox,
              inside_test: str = 'center') -> TubeGrid:
    """Split a (T, H, W) clip into tubes and flag the cells covered by the motion box."""
    T, H, W = clip_dims
    tt, th, tw = tube_dims
    if min(tt, th, tw) <= 0 or T % tt or H % th or W % tw:
        raise RejectedInputError(f"clip dims {clip_dims} are not divisible by tube dims {tube_dims}")
    if not box.fits(W, H):
        raise RejectedInputError(f"box {box.to_dict()} exceeds a {W}x{H} frame")
    h_cells, w_cells = H // th, W // tw
    inside = np.array([[_cell_inside(h, w, th, tw, box, inside_test) for w in range(w_cells)]
                       for h in range(h_cells)], dtype=bool)
    return TubeGrid(T // tt, h_cells, w_cells, tuple(tube_dims), inside)


@dataclass(frozen=True)
class MaskPlan:
    """Boolean mask per token, shape (t_cells, h_cells, w_cells)."""

    masked: np.ndarray
    overall_ratio: float
    inside_ratio: float
    seed: int
    mode: str = 'motion'

    @property
    def num_masked(self) -> int:
        return int(self.masked.sum())

    @property
    def num_visible(self) -> int:
        return int(self.masked.size - self.masked.sum())

    @property
    def spatial(self) -> np.ndarray:
        """Spatial pattern of the first temporal slot."""
        return self.masked[0]

    @property
    def tube_consistent(self) -> bool:
        return bool(np.all(self.masked == self.masked[:1]))

    @property
    def token_mask(self) -> np.ndarray:
        return self.masked.ravel()

    def to_dict(self, grid: TubeGrid) -> dict:
        payload = {
            'grid': [grid.t_cells, grid.h_cells, grid.w_cells],
            'tube_dims': list(grid.tube_dims),
            'seed': self.seed,
            'overall_ratio': self.overall_ratio,
            'inside_ratio': self.inside_ratio,
            'mode': self.mode,
            'inside': grid.inside.ravel().astype(int).tolist(),
        }
        if self.tube_consistent:
            payload['spatial_mask'] = self.spatial.ravel().astype(int).tolist()
        else:
            payload['token_mask'] = self.token_mask.astype(int).tolist()
        return payload

    @classmethod
    def from_dict(cls, data: dict) -> 'MaskPlan':
        t, h, w = data['grid']
        if 'spatial_mask' in data:
            spatial = np.array(data['spatial_mask'], dtype=bool).reshape(h, w)
            masked = np.broadcast_to(spatial, (t, h, w)).copy()
        else:
            masked = np.array(data['token_mask'], dtype=bool).reshape(t, h, w)
        return cls(masked, float(data['overall_ratio']), float(data['inside_ratio']),
                    int(data['seed']), data.get('mode', 'motion'))


def mask_budget(grid: TubeGrid, overall_ratio: float) -> int:
    """Number of masked spatial cells."""
    return round_half_up(overall_ratio * grid.spatial_cells)


def inside_minimum(grid: TubeGrid, inside_ratio: float, budget: int) -> int:
    return min(ceil_count(inside_ratio * int(grid.inside.sum())), budget)


def sample_mask(grid: TubeGrid, overall_ratio: float, inside_ratio: float, seed: int,
                mode: str = 'motion') -> MaskPlan:
    """Draw a mask plan; 'motion' guarantees the inside minimum, 'tube' ignores the box,
    'patch' masks tokens independently of their temporal slot."""
    if not 0.0 < overall_ratio <= 1.0:
        raise RejectedInputError(f"overall ratio must lie in (0, 1], got {overall_ratio}")
    if not 0.0 <= inside_ratio <= 1.0:
        raise RejectedInputError(f"inside ratio must lie in [0, 1], got {inside_ratio}")
    rng = numpy_rng(seed)
    shape = (grid.t_cells, grid.h_cells, grid.w_cells)

    if mode == 'patch':
        budget = round_half_up(overall_ratio * grid.num_tokens)
        if budget == 0:
            raise RejectedInputError("masking budget is zero: nothing to reconstruct")
        flat = np.zeros(grid.num_tokens, dtype=bool)
        flat[rng.choice(grid.num_tokens, budget, replace=False)] = True
        return MaskPlan(flat.reshape(shape), overall_ratio, inside_ratio, seed, mode)

    budget = mask_budget(grid, overall_ratio)
    if budget == 0:
        raise RejectedInputError("masking budget is zero: nothing to reconstruct")
    spatial = np.zeros(grid.spatial_cells, dtype=bool)

    if mode == 'tube':
        spatial[rng.choice(grid.spatial_cells, budget, replace=False)] = True
    elif mode == 'motion':
        inside_idx = np.flatnonzero(grid.inside.ravel())
        outside_idx = np.flatnonzero(~grid.inside.ravel())
        k_in = inside_minimum(grid, inside_ratio, budget)
        chosen_in = rng.choice(inside_idx, k_in, replace=False)
        spatial[chosen_in] = True
        rest = budget - k_in
        if rest <= outside_idx.size:
            spatial[rng.choice(outside_idx, rest, replace=False)] = True
        else:
            spatial[outside_idx] = True
            spare = np.setdiff1d(inside_idx, chosen_in)
            spatial[rng.choice(spare, rest - outside_idx.size, replace=False)] = True
    else:
        raise RejectedInputError(f"unknown masking mode '{mode}'")

    masked = np.broadcast_to(spatial.reshape(grid.h_cells, grid.w_cells), shape).copy()
    logger.debug("mode %s: masked %d/%d spatial cells, %d inside", mode, budget, grid.spatial_cells,
                 int((spatial & grid.inside.ravel()).sum()))
    return MaskPlan(masked, overall_ratio, inside_ratio, seed, mode)


def audit_plan(grid: TubeGrid, plan: MaskPlan) -> Dict[str, object]:
    """Raw counts and the pass/fail flags derived from them."""
    spatial = plan.spatial.ravel()
    budget = mask_budget(grid, plan.overall_ratio)
    required = inside_minimum(grid, plan.inside_ratio, budget)
    masked_inside = int((spatial & grid.inside.ravel()).sum())
    masked_cells = int(spatial.sum())
    audit = {
        'spatial_cells': grid.spatial_cells,
        'inside_cells': int(grid.inside.sum()),
        'budget': budget,
        'masked_cells': masked_cells,
        'masked_inside': masked_inside,
        'required_inside': required,
        'masked_tokens': plan.num_masked,
        'tube_consistent': plan.tube_consistent,
    }
    audit['count_ok'] = masked_cells == budget
    audit['inside_ok'] = masked_inside >= required
    return audit


def tubify(clip: np.ndarray, tube_dims: Tuple[int, int, int]) -> np.ndarray:
    """(T, H, W[, C]) clip -> (N, T_t*H_t*W_t*C) tubes in canonical (t, h, w) order."""
    clip = np.asarray(clip)
    if clip.ndim == 3:
        clip = clip[..., None]
    if clip.ndim != 4:
        raise RejectedInputError(f"clip must be (T, H, W[, C]), got shape {clip.shape}")
    tt, th, tw = tube_dims
    T, H, W, _ = clip.shape
    if T % tt or H % th or W % tw:
        raise RejectedInputError(f"clip shape {clip.shape[:3]} is not divisible by tube dims {tube_dims}")
    return rearrange(clip, '(t pt) (h ph) (w pw) c -> (t h w) (pt ph pw c)', pt=tt, ph=th, pw=tw)


@dataclass(frozen=True)
class MaskedTokens:
    visible: np.ndarray
    visible_indices: np.ndarray
    masked_indices: np.ndarray


def apply_mask(clip: np.ndarray, plan: MaskPlan, tube_dims: Tuple[int, int, int]) -> MaskedTokens:
    """Partition the clip's tubes into visible content and masked indices."""
    tubes = tubify(clip, tube_dims)
    token_mask = plan.token_mask
    if tubes.shape[0] != token_mask.size:
        raise RejectedInputError(f"plan covers {token_mask.size} tokens, clip has {tubes.shape[0]}")
    visible_idx = np.flatnonzero(~token_mask)
    return MaskedTokens(tubes[visible_idx], visible_idx, np.flatnonzero(token_mask))


def motion_plan(clip_dims: Tuple[int, int, int], tube_dims: Tuple[int, int, int], box: Optional[MotionBox],
                overall_ratio: float, inside_ratio: float, seed: int, mode: str = 'motion',
                inside_test: str = 'center') -> Tuple[TubeGrid, MaskPlan]:
    """Grid and plan in one call; a missing box means the full frame."""
    _, H, W = clip_dims
    grid = tube_grid(clip_dims, tube_dims, box or MotionBox.full(W, H), inside_test)
    return grid, sample_mask(grid, overall_ratio, inside_ratio, seed, mode)
