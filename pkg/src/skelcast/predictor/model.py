"""Attention forecaster over a joint agent x timestep token grid."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from ..core import SceneWindow
from ..prediction import COV_FLOOR, PredictionSet
from ..skelfeat import FeatureConfig, FeatureManifest, assemble_features, feature_manifest


@dataclass
class ModelConfig:
    embed_dim: int = 64
    num_layers: int = 2
    num_heads: int = 4
    ffn_dim: int = 128
    num_modes: int = 6
    H: int = 6
    F: int = 12
    feature_config: str = "NONE"
    seed: int = 0
    pos_scale: float = 10.0  # meters; divides absolute positions at the input
    min_std: float = math.sqrt(COV_FLOOR)

    def __post_init__(self):
        self.feature_config = FeatureConfig.parse(self.feature_config).value
        if self.embed_dim % self.num_heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")
        if self.num_modes < 1:
            raise ValueError("num_modes must be >= 1")

    @property
    def manifest(self) -> FeatureManifest:
        return feature_manifest(self.feature_config)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


# --------------------------------------------------------------------------
# window -> tensors


@dataclass
class WindowTensors:
    """Model inputs (past only) and targets of one window, as numpy arrays."""

    past_pos: np.ndarray  # (N, H, 2), zero where invalid
    past_valid: np.ndarray  # (N, H)
    feats: np.ndarray  # (N, H, D)
    target: np.ndarray  # (N, F, 2), zero where invalid
    target_valid: np.ndarray  # (N, F)
    manifest: FeatureManifest = field(repr=False, default=None)


def window_tensors(window: SceneWindow, config) -> WindowTensors:
    block = assemble_features(window, config)
    pv = window.past_valid
    fv = window.future_valid
    return WindowTensors(
        np.where(pv[..., None], window.past_pos, 0.0),
        pv.copy(),
        block.stacked(),
        np.where(fv[..., None], window.future_pos, 0.0),
        fv.copy(),
        block.manifest,
    )


@dataclass
class Batch:
    past_pos: torch.Tensor  # (B, N, H, 2)
    past_valid: torch.Tensor  # (B, N, H) bool
    feats: torch.Tensor  # (B, N, H, D)
    agent_mask: torch.Tensor  # (B, N) bool
    target: torch.Tensor  # (B, N, F, 2)
    target_valid: torch.Tensor  # (B, N, F) bool

    def to(self, dtype) -> "Batch":
        return Batch(self.past_pos.to(dtype), self.past_valid, self.feats.to(dtype),
                     self.agent_mask, self.target.to(dtype), self.target_valid)


def collate(items: Sequence[WindowTensors], dtype=torch.float32) -> Batch:
    """Pad windows to a common agent count."""
    B = len(items)
    N = max(1, max(it.past_pos.shape[0] for it in items))
    H = items[0].past_pos.shape[1]
    Fh = items[0].target.shape[1]
    D = items[0].feats.shape[2]
    past_pos = np.zeros((B, N, H, 2))
    past_valid = np.zeros((B, N, H), bool)
    feats = np.zeros((B, N, H, D))
    agent_mask = np.zeros((B, N), bool)
    target = np.zeros((B, N, Fh, 2))
    target_valid = np.zeros((B, N, Fh), bool)
    for b, it in enumerate(items):
        n = it.past_pos.shape[0]
        past_pos[b, :n] = it.past_pos
        past_valid[b, :n] = it.past_valid
        feats[b, :n] = it.feats
        agent_mask[b, :n] = True
        target[b, :n] = it.target
        target_valid[b, :n] = it.target_valid
    t = lambda a: torch.as_tensor(a, dtype=dtype)
    b = lambda a: torch.as_tensor(a, dtype=torch.bool)
    return Batch(t(past_pos), b(past_valid), t(feats), b(agent_mask), t(target), b(target_valid))


# --------------------------------------------------------------------------
# network


def _mlp(d_in: int, d_hidden: int, d_out: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(d_in, d_hidden), nn.GELU(), nn.Linear(d_hidden, d_out))


class SelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x, key_mask):
        # x: (B, S, D); key_mask: (B, S) True for real tokens
        B, S, D = x.shape
        q, k, v = self.qkv(x).view(B, S, 3, self.heads, D // self.heads).permute(2, 0, 3, 1, 4)
        out = F.scaled_dot_product_attention(q, k, v, attn_mask=key_mask[:, None, None, :])
        out = out.transpose(1, 2).reshape(B, S, D)
        return self.proj(out)


class Block(nn.Module):
    def __init__(self, dim: int, heads: int, ffn_dim: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = _mlp(dim, ffn_dim, dim)

    def forward(self, x, key_mask):
        x = x + self.attn(self.norm1(x), key_mask)
        return x + self.ffn(self.norm2(x))


class Forecaster(nn.Module):
    """Multimodal forecaster with full self-attention across agents and time.

    Every agent contributes H past tokens and F future query tokens; all
    N*(H+F) tokens attend to each other. There is no agent-index encoding,
    so outputs are equivariant to agent order. Modes are scene-consistent:
    one learned embedding per mode conditions a shared decode head.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c = config
        D = c.embed_dim
        self.feature_dim = c.manifest.dim
        self.pos_enc = _mlp(4, D, D)
        self.feat_enc = _mlp(self.feature_dim, D, D) if self.feature_dim else None
        self.missing_token = nn.Parameter(torch.zeros(D))
        self.future_token = nn.Parameter(torch.zeros(D))
        self.time_enc = nn.Parameter(torch.zeros(c.H + c.F, D))
        # per-agent summary of its own past, added to every token of that agent
        self.agent_ctx = nn.Linear(c.H * D, D)
        self.blocks = nn.ModuleList(Block(D, c.num_heads, c.ffn_dim) for _ in range(c.num_layers))
        self.norm = nn.LayerNorm(D)
        self.mode_emb = nn.Parameter(torch.zeros(c.num_modes, D))
        self.head = _mlp(D, c.ffn_dim, 5)
        self.mode_head = _mlp(D, c.ffn_dim, 1)
        self._init_params()

    def _init_params(self):
        g = torch.Generator().manual_seed(self.config.seed)
        for name, p in self.named_parameters():
            with torch.no_grad():
                if "norm" in name:
                    continue
                if name.endswith("bias"):
                    p.zero_()
                    continue
                if p.dim() == 2 and "time_enc" not in name and "mode_emb" not in name:
                    bound = 1.0 / math.sqrt(p.shape[1])
                    p.copy_(torch.empty_like(p).uniform_(-bound, bound, generator=g))
                else:
                    p.copy_(torch.randn(p.shape, generator=g, dtype=p.dtype) * 0.1)

    @staticmethod
    def anchors(past_pos, past_valid):
        """Last valid past position of every agent (zeros for padded agents)."""
        H = past_valid.shape[-1]
        idx = torch.arange(H, device=past_pos.device).expand_as(past_valid)
        last = torch.where(past_valid, idx, torch.full_like(idx, -1)).amax(dim=-1).clamp(min=0)
        return torch.gather(past_pos, 2, last[..., None, None].expand(*last.shape, 1, 2)).squeeze(2)

    def encode(self, batch: Batch):
        """Token grid (B, N, H+F, D)."""
        c = self.config
        if batch.feats.shape[-1] != self.feature_dim:
            raise ValueError(
                f"feature dim {batch.feats.shape[-1]} does not match the model's manifest "
                f"({c.feature_config}, dim {self.feature_dim})"
            )
        anchor = self.anchors(batch.past_pos, batch.past_valid)
        rel = batch.past_pos - anchor[:, :, None]
        x = torch.cat([rel, batch.past_pos / c.pos_scale], dim=-1)
        tok = self.pos_enc(x)
        if self.feat_enc is not None:
            tok = tok + self.feat_enc(batch.feats)
        tok = torch.where(batch.past_valid[..., None], tok, self.missing_token.expand_as(tok))
        tok = tok + self.time_enc[: c.H]
        B, N = batch.agent_mask.shape
        ctx = self.agent_ctx(tok.reshape(B, N, -1))
        fut = self.future_token + self.time_enc[c.H :]
        grid = torch.cat([tok, fut.expand(B, N, c.F, -1)], dim=2) + ctx[:, :, None]
        return grid, anchor

    def attend(self, grid, agent_mask):
        B, N, T, D = grid.shape
        x = grid.reshape(B, N * T, D)
        key_mask = agent_mask[:, :, None].expand(B, N, T).reshape(B, N * T)
        for blk in self.blocks:
            x = blk(x, key_mask)
        return self.norm(x).view(B, N, T, D)

    def forward(self, batch: Batch):
        """Returns (means (B,M,N,F,2), covs (B,M,N,F,2,2), mode_logits (B,M))."""
        c = self.config
        grid, anchor = self.encode(batch)
        z = self.attend(grid, batch.agent_mask)
        zf = z[:, :, c.H :]  # (B, N, F, D)
        h = zf[:, None] + self.mode_emb[None, :, None, None]
        out = self.head(h)  # (B, M, N, F, 5)
        means = anchor[:, None, :, None] + out[..., :2]
        l11 = F.softplus(out[..., 2])
        l22 = F.softplus(out[..., 3])
        l21 = out[..., 4]
        floor = c.min_std ** 2
        c11 = l11 * l11 + floor
        c22 = l21 * l21 + l22 * l22 + floor
        c12 = l11 * l21
        covs = torch.stack([torch.stack([c11, c12], -1), torch.stack([c12, c22], -1)], -2)
        w = batch.agent_mask[:, :, None, None].to(z.dtype)
        pooled = (z * w).sum(dim=(1, 2)) / (w.sum(dim=(1, 2)) * z.shape[2]).clamp(min=1.0)
        logits = self.mode_head(pooled[:, None] + self.mode_emb[None]).squeeze(-1)
        return means, covs, logits


def _check_finite(*tensors):
    for t in tensors:
        if not torch.isfinite(t).all():
            raise FloatingPointError("forecaster produced non-finite output")


@torch.no_grad()
def predict(model: Forecaster, windows: Sequence[SceneWindow], batch_size: int = 64) -> list[PredictionSet]:
    """Forecast every window; one PredictionSet per window."""
    model.eval()
    dtype = next(model.parameters()).dtype
    cfg = model.config.feature_config
    out = []
    for s in range(0, len(windows), batch_size):
        chunk = windows[s : s + batch_size]
        items = [window_tensors(w, cfg) for w in chunk]
        batch = collate(items, dtype)
        means, covs, logits = model(batch)
        _check_finite(means, covs, logits)
        probs = torch.softmax(logits.double(), dim=-1)
        for b, w in enumerate(chunk):
            n = w.n_agents
            out.append(PredictionSet(means[b, :, :n].double().numpy(), covs[b, :, :n].double().numpy(),
                                     probs[b].numpy()))
    return out


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def build_model(config: ModelConfig, dtype=torch.float32) -> Forecaster:
    model = Forecaster(config)
    return model.to(dtype)


def window_items(windows: Sequence[SceneWindow], config, require_targets: bool = True) -> list[WindowTensors]:
    items = [window_tensors(w, config) for w in windows]
    if require_targets:
        items = [it for it in items if it.target_valid.any()]
    return items


__all__ = [
    "Batch", "Forecaster", "ModelConfig", "WindowTensors", "build_model", "collate",
    "count_parameters", "predict", "window_items", "window_tensors",
]
