"""Seeded Adam training loops for MAE pretraining and MCA finetuning."""
import copy
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch

from .boxdetect import MotionBox
from .config import NetConfig, OptimizerConfig
from .errors import DivergenceError, RejectedInputError
from .masker import MaskPlan, tube_grid
from .tinynet import TinyNet, build_net, cross_entropy

logger = logging.getLogger(__name__)


@dataclass
class TrainResult:
    net: TinyNet
    losses: List[float] = field(default_factory=list)
    accuracies: List[float] = field(default_factory=list)


def _clip_tensor(clips: Sequence[np.ndarray], dtype: torch.dtype) -> torch.Tensor:
    arrays = [np.asarray(c)[..., None] if np.asarray(c).ndim == 3 else np.asarray(c) for c in clips]
    return torch.as_tensor(np.stack(arrays), dtype=dtype)


def _prepare(net: Optional[TinyNet], net_cfg: Optional[NetConfig], seed: int, dtype: torch.dtype) -> TinyNet:
    if net is None:
        return build_net(net_cfg, seed=seed, dtype=dtype)
    # never mutate the caller's parameters
    return copy.deepcopy(net).to(dtype)


def _optimizer(net: TinyNet, cfg: OptimizerConfig) -> torch.optim.Adam:
    return torch.optim.Adam(net.parameters(), lr=cfg.lr, betas=tuple(cfg.betas), eps=cfg.eps)


def _check_finite(loss: torch.Tensor, step: int):
    value = float(loss.detach())
    if not math.isfinite(value):
        raise DivergenceError(step, value)


def pretrain_loss(net: TinyNet, clips: torch.Tensor, masks: torch.Tensor) -> torch.Tensor:
    """Clip-weighted MAE loss; clips are batched by their masked-token count."""
    groups: Dict[int, List[int]] = defaultdict(list)
    for i, count in enumerate(masks.sum(dim=1).tolist()):
        groups[int(count)].append(i)
    total = clips.new_zeros(())
    for count in sorted(groups):
        idx = torch.as_tensor(groups[count])
        _, loss = net.mae_forward(clips[idx], masks[idx])
        total = total + loss * len(idx)
    return total / clips.shape[0]


def train_pretrain(clips: Sequence[np.ndarray], plans: Sequence[MaskPlan], net: Optional[TinyNet] = None,
                   opt_cfg: Optional[OptimizerConfig] = None, net_cfg: Optional[NetConfig] = None,
                   dtype: torch.dtype = torch.float32) -> TrainResult:
    """Full-batch Adam on the masked reconstruction loss; one loss value per step."""
    opt_cfg = opt_cfg or OptimizerConfig()
    if not clips or len(clips) != len(plans):
        raise RejectedInputError(f"need matching non-empty clips and plans, got {len(clips)} and {len(plans)}")
    net = _prepare(net, net_cfg, opt_cfg.seed, dtype)
    data = _clip_tensor(clips, dtype)
    masks = torch.as_tensor(np.stack([p.token_mask for p in plans]), dtype=torch.bool)
    optimizer = _optimizer(net, opt_cfg)

    result = TrainResult(net)
    net.train()
    for step in range(opt_cfg.steps):
        optimizer.zero_grad()
        loss = pretrain_loss(net, data, masks)
        _check_finite(loss, step)
        loss.backward()
        optimizer.step()
        result.losses.append(float(loss.detach()))
        if step % 50 == 0:
            logger.debug("pretrain step %d: loss %.5f", step, result.losses[-1])
    return result


@torch.no_grad()
def evaluate_reconstruction(net: TinyNet, clips: Sequence[np.ndarray], plans: Sequence[MaskPlan]) -> float:
    dtype = next(net.parameters()).dtype
    data = _clip_tensor(clips, dtype)
    masks = torch.as_tensor(np.stack([p.token_mask for p in plans]), dtype=torch.bool)
    net.eval()
    return float(pretrain_loss(net, data, masks))


def token_inside_flags(net_cfg: NetConfig, box: MotionBox, inside_test: str = 'center') -> torch.Tensor:
    T, H, W, _ = net_cfg.clip_dims
    grid = tube_grid((T, H, W), net_cfg.tube_dims, box, inside_test)
    return torch.as_tensor(grid.token_inside, dtype=torch.bool)


def finetune_step(net: TinyNet, data: torch.Tensor, inside: Sequence[torch.Tensor],
                  labels: Sequence[int]):
    """Mean cross-entropy over the batch and the number of correct predictions."""
    losses = []
    correct = 0
    for clip, flags, label in zip(data, inside, labels):
        pred = net.finetune_forward(clip, flags)
        losses.append(cross_entropy(pred, label))
        correct += int(pred.label == int(label))
    return torch.stack(losses).mean(), correct


def train_finetune(clips: Sequence[np.ndarray], boxes: Sequence[MotionBox], labels: Sequence[int],
                   net: Optional[TinyNet] = None, opt_cfg: Optional[OptimizerConfig] = None,
                   net_cfg: Optional[NetConfig] = None, inside_test: str = 'center',
                   dtype: torch.dtype = torch.float32) -> TrainResult:
    """End-to-end finetuning of encoder, fusion head and classifier; records training accuracy per step."""
    opt_cfg = opt_cfg or OptimizerConfig()
    if not clips or not (len(clips) == len(boxes) == len(labels)):
        raise RejectedInputError(
            f"need matching non-empty clips, boxes and labels, got {len(clips)}, {len(boxes)}, {len(labels)}"
        )
    net = _prepare(net, net_cfg, opt_cfg.seed, dtype)
    data = _clip_tensor(clips, dtype)
    inside = [token_inside_flags(net.cfg, box, inside_test) for box in boxes]
    optimizer = _optimizer(net, opt_cfg)

    result = TrainResult(net)
    net.train()
    for step in range(opt_cfg.steps):
        optimizer.zero_grad()
        loss, correct = finetune_step(net, data, inside, labels)
        _check_finite(loss, step)
        loss.backward()
        optimizer.step()
        result.losses.append(float(loss.detach()))
        result.accuracies.append(correct / len(labels))
        if step % 50 == 0:
            logger.debug("finetune step %d: loss %.5f, accuracy %.3f", step, result.losses[-1], result.accuracies[-1])
    return result


@torch.no_grad()
def evaluate_accuracy(net: TinyNet, clips: Sequence[np.ndarray], boxes: Sequence[MotionBox],
                      labels: Sequence[int], inside_test: str = 'center') -> float:
    dtype = next(net.parameters()).dtype
    data = _clip_tensor(clips, dtype)
    inside = [token_inside_flags(net.cfg, box, inside_test) for box in boxes]
    net.eval()
    _, correct = finetune_step(net, data, inside, labels)
    return correct / len(labels)
