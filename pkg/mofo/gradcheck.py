"""Central finite-difference check of reverse-mode gradients."""
import logging
from typing import Callable, Collection, Dict, Optional

import torch
import torch.nn as nn

from .seeding import numpy_rng
from .tinynet import gradients

logger = logging.getLogger(__name__)

EPS = 1e-6
# relative error denominator floor; keeps near-zero gradients from blowing up the ratio
REL_FLOOR = 1e-4


def relative_error(analytic: float, numeric: float, floor: float = REL_FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_gradients(net: nn.Module, loss_fn: Callable[[nn.Module], torch.Tensor],
                    samples_per_tensor: Optional[int] = 8, eps: float = EPS, seed: int = 0,
                    full_size: int = 0, full_names: Collection[str] = ()) -> Dict[str, float]:
    """Max relative error per parameter tensor between autograd and central differences.

    samples_per_tensor=None checks every entry; otherwise a seeded random subset. Tensors with at
    most full_size entries, and those named in full_names, are always checked at every entry."""
    loss = loss_fn(net)
    analytic = {name: g.detach().clone() for name, g in gradients(loss, net).items()}
    rng = numpy_rng(seed, 'gradcheck')
    report = {}
    with torch.no_grad():
        for name, param in net.named_parameters():
            flat = param.view(-1)
            n = flat.numel()
            if samples_per_tensor is None or samples_per_tensor >= n or n <= full_size or name in full_names:
                entries = range(n)
            else:
                entries = sorted(rng.choice(n, samples_per_tensor, replace=False).tolist())
            worst = 0.0
            grad = analytic[name].view(-1)
            for i in entries:
                original = flat[i].item()
                flat[i] = original + eps
                plus = float(loss_fn(net))
                flat[i] = original - eps
                minus = float(loss_fn(net))
                flat[i] = original
                numeric = (plus - minus) / (2.0 * eps)
                worst = max(worst, relative_error(float(grad[i]), numeric))
            report[name] = worst
            logger.debug("gradcheck %s: %d entries, max relative error %.3e", name, len(entries), worst)
    return report
