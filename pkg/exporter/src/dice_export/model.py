"""Frozen CLIP-style encoder with a dual final layer on the vision side.

The image-level token runs through the standard query-key-value path of
the last block, while patch tokens take a value-value path: queries and
keys are replaced by the value projection, so attention mixes each patch
with its feature-space neighbours instead of dispersing it across the
whole image. Both paths share the trunk, the value projection, and the
output projection of the last block; the dual pass is written out here
explicitly rather than monkeypatching a library forward.

Without a checkpoint the weights are drawn from a generator seeded by
the model id, so a given id always denotes the same (untrained) network
and exports stay reproducible. Checkpoints are plain state dicts for
the module tree below.
"""

from __future__ import annotations

import hashlib
import pickle
import zipfile
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ExportConfigError
from .tokenizer import VOCAB_SIZE

IMAGE_MEAN = (0.48145466, 0.4578275, 0.40821073)
IMAGE_STD = (0.26862954, 0.26130258, 0.27577711)


@dataclass(frozen=True)
class ModelSpec:
    embed_dim: int
    image_size: int
    patch_size: int
    vision_width: int
    vision_layers: int
    vision_heads: int
    text_width: int
    text_layers: int
    text_heads: int
    context: int

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size


REGISTRY = {
    # geometry of the ViT-B-16+ checkpoint family at 240px input
    "ViT-B-16-plus-240": ModelSpec(
        embed_dim=640,
        image_size=240,
        patch_size=16,
        vision_width=896,
        vision_layers=12,
        vision_heads=14,
        text_width=640,
        text_layers=12,
        text_heads=10,
        context=77,
    ),
    # small profile for fast tests; same patch geometry, not a real tag
    "dev-16-240-small": ModelSpec(
        embed_dim=64,
        image_size=240,
        patch_size=16,
        vision_width=128,
        vision_layers=2,
        vision_heads=4,
        text_width=64,
        text_layers=2,
        text_heads=4,
        context=77,
    ),
}


class ResidualBlock(nn.Module):
    def __init__(self, width: int, heads: int):
        super().__init__()
        if width % heads:
            raise ExportConfigError(f"width {width} not divisible by {heads} heads")
        self.heads = heads
        self.ln_1 = nn.LayerNorm(width)
        self.in_proj = nn.Linear(width, 3 * width)
        self.out_proj = nn.Linear(width, width)
        self.ln_2 = nn.LayerNorm(width)
        self.fc1 = nn.Linear(width, 4 * width)
        self.fc2 = nn.Linear(4 * width, width)

    def _split_heads(self, t: torch.Tensor) -> torch.Tensor:
        b, s, w = t.shape
        return t.view(b, s, self.heads, w // self.heads).transpose(1, 2)

    def _mix(self, q, k, v, mask) -> torch.Tensor:
        logits = (q @ k.transpose(-1, -2)) * q.shape[-1] ** -0.5
        if mask is not None:
            logits = logits + mask
        mixed = torch.softmax(logits, dim=-1) @ v
        b, h, s, hd = mixed.shape
        return mixed.transpose(1, 2).reshape(b, s, h * hd)

    def _attention(self, y: torch.Tensor, mask) -> torch.Tensor:
        q, k, v = self.in_proj(y).chunk(3, dim=-1)
        mixed = self._mix(self._split_heads(q), self._split_heads(k), self._split_heads(v), mask)
        return self.out_proj(mixed)

    def _attention_vv(self, y: torch.Tensor) -> torch.Tensor:
        _, _, v = self.in_proj(y).chunk(3, dim=-1)
        vh = self._split_heads(v)
        mixed = self._mix(vh, vh, vh, None)
        return self.out_proj(mixed)

    def _mlp(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.fc2(F.gelu(self.fc1(self.ln_2(x))))

    def forward(self, x: torch.Tensor, mask=None) -> torch.Tensor:
        return self._mlp(x + self._attention(self.ln_1(x), mask))

    def forward_vv(self, x: torch.Tensor) -> torch.Tensor:
        return self._mlp(x + self._attention_vv(self.ln_1(x)))


class VisionTower(nn.Module):
    def __init__(self, spec: ModelSpec):
        super().__init__()
        w = spec.vision_width
        self.grid = spec.grid
        self.conv = nn.Conv2d(3, w, spec.patch_size, spec.patch_size, bias=False)
        self.class_embedding = nn.Parameter(torch.zeros(w))
        self.positional_embedding = nn.Parameter(torch.zeros(self.grid * self.grid + 1, w))
        self.ln_pre = nn.LayerNorm(w)
        self.blocks = nn.ModuleList(
            ResidualBlock(w, spec.vision_heads) for _ in range(spec.vision_layers)
        )
        self.ln_post = nn.LayerNorm(w)
        self.proj = nn.Parameter(torch.zeros(w, spec.embed_dim))

    def forward(self, images: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """(B, 3, H, W) normalized pixels -> class (B, d) and patches (B, g, g, d)."""
        x = self.conv(images).flatten(2).transpose(1, 2)
        cls = self.class_embedding.expand(x.shape[0], 1, -1)
        x = torch.cat([cls, x], dim=1) + self.positional_embedding
        x = self.ln_pre(x)
        for block in self.blocks[:-1]:
            x = block(x)
        std = self.blocks[-1](x)
        vv = self.blocks[-1].forward_vv(x)
        cls_embed = self.ln_post(std[:, 0]) @ self.proj
        patches = self.ln_post(vv[:, 1:]) @ self.proj
        return cls_embed, patches.view(patches.shape[0], self.grid, self.grid, -1)

    def forward_standard_patches(self, images: torch.Tensor) -> torch.Tensor:
        """Patch tokens through the plain last block; kept for inspection."""
        x = self.conv(images).flatten(2).transpose(1, 2)
        cls = self.class_embedding.expand(x.shape[0], 1, -1)
        x = torch.cat([cls, x], dim=1) + self.positional_embedding
        x = self.ln_pre(x)
        for block in self.blocks:
            x = block(x)
        patches = self.ln_post(x[:, 1:]) @ self.proj
        return patches.view(patches.shape[0], self.grid, self.grid, -1)


class TextTower(nn.Module):
    def __init__(self, spec: ModelSpec):
        super().__init__()
        w = spec.text_width
        self.token_embedding = nn.Embedding(VOCAB_SIZE, w)
        self.positional_embedding = nn.Parameter(torch.zeros(spec.context, w))
        self.blocks = nn.ModuleList(
            ResidualBlock(w, spec.text_heads) for _ in range(spec.text_layers)
        )
        self.ln_final = nn.LayerNorm(w)
        self.proj = nn.Parameter(torch.zeros(w, spec.embed_dim))
        mask = torch.full((spec.context, spec.context), float("-inf")).triu(1)
        self.register_buffer("causal_mask", mask, persistent=False)

    def forward(self, tokens: torch.Tensor, eot_index: torch.Tensor) -> torch.Tensor:
        """(B, context) ids -> (B, d), pooled at each sequence's EOT token."""
        x = self.token_embedding(tokens) + self.positional_embedding
        for block in self.blocks:
            x = block(x, self.causal_mask)
        x = self.ln_final(x)
        pooled = x[torch.arange(x.shape[0], device=x.device), eot_index]
        return pooled @ self.proj


class DualEncoder(nn.Module):
    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        self.visual = VisionTower(spec)
        self.text = TextTower(spec)


def _seed_for(model_id: str) -> int:
    return int.from_bytes(hashlib.sha256(model_id.encode("utf-8")).digest()[:8], "little")


def _init_tower(tower: nn.Module, width: int, layers: int, g: torch.Generator) -> None:
    # transformer-scaled gaussians; residual-facing projections shrink
    # with depth so activations stay O(1) through the stack
    attn_std = width**-0.5
    resid_std = width**-0.5 * (2 * layers) ** -0.5
    fc_std = (2 * width) ** -0.5
    for name, param in sorted(tower.named_parameters()):
        if "ln_" in name:
            continue  # LayerNorm keeps its ones and zeros
        if name.endswith("bias"):
            nn.init.zeros_(param)
        elif "in_proj" in name:
            param.data.normal_(0.0, attn_std, generator=g)
        elif "out_proj" in name or "fc2" in name:
            param.data.normal_(0.0, resid_std, generator=g)
        elif "fc1" in name:
            param.data.normal_(0.0, fc_std, generator=g)
        elif "conv" in name:
            fan_in = param.shape[1] * param.shape[2] * param.shape[3]
            param.data.normal_(0.0, fan_in**-0.5, generator=g)
        elif "positional_embedding" in name:
            param.data.normal_(0.0, 0.01, generator=g)
        elif name == "proj":
            param.data.normal_(0.0, attn_std, generator=g)
        else:  # class/token embeddings
            param.data.normal_(0.0, 0.02, generator=g)


def build_model(model_id: str, checkpoint=None, device: str = "cpu") -> DualEncoder:
    """Instantiate a registered architecture, seeded from its id.

    A checkpoint, when given, must be a state dict saved from this module
    tree; anything unloadable is a model load failure.
    """
    spec = REGISTRY.get(model_id)
    if spec is None:
        raise ExportConfigError(
            f"unknown model id: '{model_id}' (known: {', '.join(sorted(REGISTRY))})"
        )
    if device.startswith("cuda") and not torch.cuda.is_available():
        raise ExportConfigError(f"device '{device}' not available")
    model = DualEncoder(spec)
    g = torch.Generator()
    g.manual_seed(_seed_for(model_id))
    _init_tower(model.visual, spec.vision_width, spec.vision_layers, g)
    _init_tower(model.text, spec.text_width, spec.text_layers, g)
    if checkpoint is not None:
        try:
            state = torch.load(checkpoint, map_location="cpu", weights_only=True)
            model.load_state_dict(state)
        except (OSError, RuntimeError, ValueError, KeyError, EOFError, pickle.UnpicklingError, zipfile.BadZipFile) as exc:
            raise ExportConfigError(f"model load failure: {checkpoint}: {exc}") from exc
    model.to(torch.device(device)).eval()
    for param in model.parameters():
        param.requires_grad_(False)
    return model
