"""Desk-scale video MAE with joint space-time attention and a multi-cross-attention head."""
import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
from einops import rearrange

from .config import NetConfig
from .errors import RejectedInputError

logger = logging.getLogger(__name__)

NORM_EPS = 1e-6
PROB_EPS = 1e-12


class MLP(nn.Module):
    def __init__(self, emb_dim: int, hidden_dim: int):
        super().__init__()
        self.layer_norm = nn.LayerNorm(emb_dim)
        self.fc1 = nn.Linear(emb_dim, hidden_dim)
        self.gelu = nn.GELU()
        self.fc2 = nn.Linear(hidden_dim, emb_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.gelu(self.fc1(self.layer_norm(x))))


class MSA(nn.Module):
    """Pre-norm multi-head self-attention over every token of the sequence."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.norm = nn.LayerNorm(dim)
        self.to_qkv = nn.Linear(dim, dim * 3)
        self.to_out = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.norm(x)
        q, k, v = (rearrange(t, 'b n (h d) -> b h n d', h=self.heads) for t in self.to_qkv(x).chunk(3, dim=-1))
        attn = torch.softmax(torch.matmul(q, k.transpose(-1, -2)) * self.scale, dim=-1)
        out = rearrange(torch.matmul(attn, v), 'b h n d -> b n (h d)')
        return self.to_out(out)


class TransformerBlock(nn.Module):
    def __init__(self, dim: int, heads: int, mlp_dim: int):
        super().__init__()
        self.msa = MSA(dim, heads)
        self.mlp = MLP(dim, mlp_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.msa(x) + x
        x = self.mlp(x) + x
        return x


def cross_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """softmax(Q K^T / sqrt(d_k)) V over the last two dimensions."""
    if k.shape[-2] == 0:
        raise RejectedInputError("cross attention needs at least one key")
    if k.shape[-2] != v.shape[-2]:
        raise RejectedInputError(f"{k.shape[-2]} keys but {v.shape[-2]} values")
    if q.shape[-1] != k.shape[-1]:
        raise RejectedInputError(f"query dim {q.shape[-1]} differs from key dim {k.shape[-1]}")
    scores = torch.matmul(q, k.transpose(-1, -2)) / math.sqrt(k.shape[-1])
    return torch.matmul(torch.softmax(scores, dim=-1), v)


class MultiCrossAttention(nn.Module):
    """Inner-box queries attend to outer-box keys/values, one projection triple per head."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.w_q = nn.Parameter(torch.empty(heads, dim, dim))
        self.w_k = nn.Parameter(torch.empty(heads, dim, dim))
        self.w_v = nn.Parameter(torch.empty(heads, dim, dim))
        self.w_o = nn.Parameter(torch.empty(heads * dim, dim))
        for w in (self.w_q, self.w_k, self.w_v):
            nn.init.normal_(w, std=dim ** -0.5)
        nn.init.normal_(self.w_o, std=(heads * dim) ** -0.5)

    def forward(self, inner: torch.Tensor, outer: torch.Tensor) -> torch.Tensor:
        if inner.shape[-2] == 0:
            logger.warning("no inner tokens, passing the outer set through")
            return outer
        if outer.shape[-2] == 0:
            logger.warning("no outer tokens, passing the inner set through")
            return inner
        heads = [cross_attention(inner @ self.w_q[i], outer @ self.w_k[i], outer @ self.w_v[i])
                 for i in range(self.heads)]
        return torch.cat(heads, dim=-1) @ self.w_o


@dataclass
class Prediction:
    logits: torch.Tensor
    probabilities: torch.Tensor

    @property
    def label(self) -> int:
        return int(torch.argmax(self.logits, dim=-1))


def normalize_tubes(tubes: torch.Tensor) -> torch.Tensor:
    """Standardize every tube to zero mean and unit (population) variance."""
    mean = tubes.mean(dim=-1, keepdim=True)
    var = tubes.var(dim=-1, unbiased=False, keepdim=True)
    return (tubes - mean) / torch.sqrt(var + NORM_EPS)


def reconstruction_loss(reconstruction: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean over masked tokens of the per-token mean squared error."""
    return ((reconstruction - target) ** 2).mean(dim=-1).mean()


def clip_tubes(clips: torch.Tensor, tube_dims: Tuple[int, int, int]) -> torch.Tensor:
    """(B, T, H, W, C) -> (B, N, T_t*H_t*W_t*C) in canonical (t, h, w) order."""
    if clips.dim() != 5:
        raise RejectedInputError(f"clips must be (B, T, H, W, C), got shape {tuple(clips.shape)}")
    tt, th, tw = tube_dims
    _, T, H, W, _ = clips.shape
    if T % tt or H % th or W % tw:
        raise RejectedInputError(f"clip shape {(T, H, W)} is not divisible by tube dims {tube_dims}")
    return rearrange(clips, 'b (t pt) (h ph) (w pw) c -> b (t h w) (pt ph pw c)', pt=tt, ph=th, pw=tw)


def _gather(x: torch.Tensor, index: torch.Tensor) -> torch.Tensor:
    return torch.gather(x, 1, index.unsqueeze(-1).expand(-1, -1, x.shape[-1]))


class TinyNet(nn.Module):
    """Encoder/decoder MAE plus the finetuning head; all learnable tensors live here."""

    def __init__(self, cfg: Optional[NetConfig] = None):
        super().__init__()
        self.cfg = cfg = cfg or NetConfig()
        d, n = cfg.d_model, cfg.num_tokens
        mlp_dim = d * cfg.mlp_ratio
        self.patch_proj = nn.Linear(cfg.tube_size, d)
        self.pos_embed = nn.Parameter(torch.randn(n, d) * 0.02)
        self.encoder = nn.ModuleList([TransformerBlock(d, cfg.heads, mlp_dim) for _ in range(cfg.depth_enc)])
        self.encoder_norm = nn.LayerNorm(d)

        self.decoder_proj = nn.Linear(d, d)
        self.mask_token = nn.Parameter(torch.randn(d) * 0.02)
        self.decoder_pos_embed = nn.Parameter(torch.randn(n, d) * 0.02)
        self.decoder = nn.ModuleList([TransformerBlock(d, cfg.heads, mlp_dim) for _ in range(cfg.depth_dec)])
        self.decoder_norm = nn.LayerNorm(d)
        self.reconstruction_head = nn.Linear(d, cfg.tube_size)

        self.mca = nn.ModuleList([MultiCrossAttention(d, cfg.mca_heads) for _ in range(cfg.mca_depth)])
        self.fc = nn.Linear(d, cfg.num_classes)

    def embed(self, tubes: torch.Tensor) -> torch.Tensor:
        """Linear tube projection plus learned positions; tubes are (B, N, D)."""
        if tubes.shape[-2:] != (self.cfg.num_tokens, self.cfg.tube_size):
            raise RejectedInputError(
                f"expected {self.cfg.num_tokens} tubes of size {self.cfg.tube_size}, got {tuple(tubes.shape[-2:])}"
            )
        return self.patch_proj(tubes) + self.pos_embed

    def encode(self, tokens: torch.Tensor) -> torch.Tensor:
        """Joint space-time attention over all given tokens, (B, n, d) -> (B, n, d)."""
        if tokens.shape[-2] == 0:
            raise RejectedInputError("encoder needs at least one visible token")
        for block in self.encoder:
            tokens = block(tokens)
        return self.encoder_norm(tokens)

    def mae_forward(self, clips: torch.Tensor, token_masks: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """Reconstruct masked tubes; returns (reconstruction (B, n_masked, D), loss).

        token_masks is (B, N) boolean with the same number of masked tokens in every row."""
        tubes = clip_tubes(clips, self.cfg.tube_dims)
        token_masks = token_masks.to(torch.bool)
        counts = token_masks.sum(dim=1)
        if counts.numel() == 0 or not bool(torch.all(counts == counts[0])):
            raise RejectedInputError("every clip in a batch must mask the same number of tokens")
        n_masked = int(counts[0])
        if n_masked == 0 or n_masked == token_masks.shape[1]:
            raise RejectedInputError(f"plan masks {n_masked} of {token_masks.shape[1]} tokens; need some of each")

        # stable sort keeps canonical order within each partition
        order = torch.argsort(token_masks.to(torch.int64), dim=1, stable=True)
        vis_idx, mask_idx = order[:, :-n_masked], order[:, -n_masked:]

        latent = self.encode(_gather(self.embed(tubes), vis_idx))
        dec_pos = self.decoder_pos_embed.unsqueeze(0).expand(tubes.shape[0], -1, -1)
        visible = self.decoder_proj(latent) + _gather(dec_pos, vis_idx)
        masked = self.mask_token + _gather(dec_pos, mask_idx)
        x = torch.cat([visible, masked], dim=1)
        for block in self.decoder:
            x = block(x)
        reconstruction = self.reconstruction_head(self.decoder_norm(x)[:, -n_masked:])
        target = normalize_tubes(_gather(tubes, mask_idx))
        return reconstruction, reconstruction_loss(reconstruction, target)

    def fuse(self, inner: torch.Tensor, outer: torch.Tensor) -> torch.Tensor:
        """Stacked multi-cross attention; queries are refined, context stays fixed."""
        for layer in self.mca:
            inner = layer(inner, outer)
        return inner

    def classify(self, fused: torch.Tensor) -> Prediction:
        """Mean-pool tokens, project to class logits, softmax."""
        if fused.shape[-2] == 0:
            raise RejectedInputError("classifier needs at least one fused token")
        logits = self.fc(fused.mean(dim=-2))
        return Prediction(logits, torch.softmax(logits, dim=-1))

    def finetune_forward(self, clip: torch.Tensor, token_inside: torch.Tensor) -> Prediction:
        """Encode every token of one (T, H, W, C) clip and classify through the configured head."""
        latent = self.encode(self.embed(clip_tubes(clip.unsqueeze(0), self.cfg.tube_dims)))[0]
        if self.cfg.head == 'linear':
            return self.classify(latent)
        inside = token_inside.to(torch.bool)
        return self.classify(self.fuse(latent[inside], latent[~inside]))


def build_net(cfg: Optional[NetConfig] = None, seed: int = 0, dtype: torch.dtype = torch.float32) -> TinyNet:
    """Seeded construction that leaves the global torch RNG untouched."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = TinyNet(cfg)
    return net.to(dtype)


def patch_embed(clip: np.ndarray, net: TinyNet) -> torch.Tensor:
    """Token sequence (N, d) for a single (T, H, W[, C]) clip."""
    clip = np.asarray(clip)
    if clip.ndim == 3:
        clip = clip[..., None]
    dtype = next(net.parameters()).dtype
    tubes = clip_tubes(torch.as_tensor(clip, dtype=dtype).unsqueeze(0), net.cfg.tube_dims)
    return net.embed(tubes)[0]


def encoder_forward(visible_tokens: torch.Tensor, net: TinyNet) -> torch.Tensor:
    """Latents for an (n, d) or (B, n, d) visible token set."""
    squeeze = visible_tokens.dim() == 2
    out = net.encode(visible_tokens.unsqueeze(0) if squeeze else visible_tokens)
    return out[0] if squeeze else out


def mae_forward(clip: np.ndarray, token_mask: np.ndarray, net: TinyNet) -> Tuple[torch.Tensor, torch.Tensor]:
    """Reconstruction of the masked tubes of one clip and its loss."""
    clip = np.asarray(clip)
    if clip.ndim == 3:
        clip = clip[..., None]
    dtype = next(net.parameters()).dtype
    clips = torch.as_tensor(clip, dtype=dtype).unsqueeze(0)
    masks = torch.as_tensor(np.asarray(token_mask).ravel(), dtype=torch.bool).unsqueeze(0)
    reconstruction, loss = net.mae_forward(clips, masks)
    return reconstruction[0], loss


def mca_forward(inner: torch.Tensor, outer: torch.Tensor, net: TinyNet) -> torch.Tensor:
    return net.fuse(inner, outer)


def classify(fused: torch.Tensor, net: TinyNet) -> Prediction:
    return net.classify(fused)


def cross_entropy(pred: Prediction, label: int) -> torch.Tensor:
    """Negative log-probability of the true class, clamped away from log(0)."""
    num_classes = pred.probabilities.shape[-1]
    if not 0 <= int(label) < num_classes:
        raise RejectedInputError(f"label {label} outside [0, {num_classes})")
    return -torch.log(torch.clamp(pred.probabilities[..., int(label)], min=PROB_EPS))


def gradients(loss: torch.Tensor, net: nn.Module) -> Dict[str, torch.Tensor]:
    """Reverse-mode gradients for every named parameter; unused parameters get zeros."""
    names, params = zip(*net.named_parameters())
    grads = torch.autograd.grad(loss, params, retain_graph=True, allow_unused=True)
    return {name: torch.zeros_like(p) if g is None else g for name, p, g in zip(names, params, grads)}


def net_tensors(net: TinyNet) -> Dict[str, np.ndarray]:
    return {name: t.detach().cpu().numpy().astype(np.float32) for name, t in net.state_dict().items()}


def load_net_tensors(net: TinyNet, tensors: Dict[str, np.ndarray], strict: bool = True) -> TinyNet:
    """Copy named tensors into net; with strict=False only matching names are loaded."""
    state = net.state_dict()
    unknown = sorted(set(tensors) - set(state))
    missing = sorted(set(state) - set(tensors))
    if strict and (unknown or missing):
        raise RejectedInputError(f"checkpoint mismatch: unknown {unknown}, missing {missing}")
    for name, value in tensors.items():
        if name not in state:
            continue
        if tuple(state[name].shape) != tuple(value.shape):
            raise RejectedInputError(f"tensor '{name}' has shape {value.shape}, expected {tuple(state[name].shape)}")
        state[name] = torch.as_tensor(value, dtype=state[name].dtype)
    net.load_state_dict(state)
    if missing:
        logger.info("kept fresh weights for %d tensors not in the checkpoint", len(missing))
    return net
