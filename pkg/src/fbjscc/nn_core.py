"""Transformer building blocks shared by the transmitter and receiver.

The layer recipe, written for one token matrix F in R^(l x d):

    pre(F)  = GeLU(LayerNorm(F))            (activation-first variant; a plain
                                             LayerNorm pre-block is selectable)
    SA_j(F) = softmax(q k^T / sqrt(d)) v     per head, q/k/v = F W_q/W_k/W_v
    MSA(F)  = F + [SA_1(F), ..., SA_N(F)] W_i
    layer(F): U = MSA(pre(F));  out = U + MLP(pre(U))

The softmax divisor defaults to sqrt(d) (the full model width); sqrt(d_s)
with d_s = d / heads is available behind a switch.  Position information is
added either from a learned per-token table ("dpe") or from a 3x3
convolution over the token grid ("cpe").  The receiver's front end is an
even (sign-invariant) Siamese embedding: branch(y) + branch(-y) with a
shared two-layer MLP branch.
"""

import math
from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigError, DimensionError, ModeError

POS_EMBED_KINDS = ("dpe", "cpe")
ATTENTION_SCALES = ("sqrt_width", "sqrt_head")
PRE_BLOCK_KINDS = ("gelu_ln", "ln")

LAYERNORM_EPS = 1e-6
INIT_STD = 0.02


@dataclass(frozen=True)
class ModelSpec:
    """Architecture hyper-parameters shared by encoder and decoder stacks."""

    width: int = 256
    layers: int = 8
    heads: int = 8
    mlp_hidden: int | None = None
    pos_embed: str = "dpe"
    siamese: bool = True
    attention_scale: str = "sqrt_width"
    pre_block: str = "gelu_ln"

    def __post_init__(self):
        if self.width < 1 or self.layers < 1 or self.heads < 1:
            raise ConfigError("width, layers and heads must all be positive")
        if self.width % self.heads:
            raise DimensionError(
                f"width {self.width} is not divisible by {self.heads} heads"
            )
        if self.mlp_hidden is not None and self.mlp_hidden < 1:
            raise ConfigError(f"mlp_hidden must be positive, got {self.mlp_hidden}")
        if self.pos_embed not in POS_EMBED_KINDS:
            raise ModeError(f"pos_embed must be one of {POS_EMBED_KINDS}")
        if self.attention_scale not in ATTENTION_SCALES:
            raise ModeError(f"attention_scale must be one of {ATTENTION_SCALES}")
        if self.pre_block not in PRE_BLOCK_KINDS:
            raise ModeError(f"pre_block must be one of {PRE_BLOCK_KINDS}")

    @property
    def head_dim(self) -> int:
        return self.width // self.heads

    @property
    def mlp_width(self) -> int:
        return 4 * self.width if self.mlp_hidden is None else self.mlp_hidden

    @property
    def scale_dim(self) -> int:
        """Dimension under the square root in the attention softmax."""
        return self.width if self.attention_scale == "sqrt_width" else self.head_dim


def trunc_normal_(tensor: torch.Tensor, std: float = INIT_STD, *,
                  gen: torch.Generator | None = None) -> torch.Tensor:
    """In-place truncated normal init on [-2 std, 2 std] via inverse CDF."""
    bound = 0.5 * (1.0 + math.erf(2.0 / math.sqrt(2.0)))  # Phi(2)
    with torch.no_grad():
        u = torch.empty_like(tensor).uniform_(
            2.0 * (1.0 - bound) - 1.0, 2.0 * bound - 1.0, generator=gen
        )
        tensor.copy_(std * math.sqrt(2.0) * torch.erfinv(u))
    return tensor


def init_module_(module: nn.Module, gen: torch.Generator) -> nn.Module:
    """Package-wide init: truncated-normal weights, zero biases, unit LayerNorm.

    Parameters are visited in named order so a fixed seed reproduces the
    exact same initialization.
    """
    norm_prefixes = {
        name for name, sub in module.named_modules() if isinstance(sub, nn.LayerNorm)
    }
    for name, param in sorted(module.named_parameters(), key=lambda kv: kv[0]):
        owner, _, leaf = name.rpartition(".")
        with torch.no_grad():
            if owner in norm_prefixes:
                param.fill_(1.0) if leaf == "weight" else param.zero_()
            elif leaf == "bias" or leaf.startswith("b_"):
                param.zero_()
            else:
                trunc_normal_(param, gen=gen)
    return module


class PreBlock(nn.Module):
    """Per-token transform applied before each attention and MLP block."""

    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.norm = nn.LayerNorm(spec.width, eps=LAYERNORM_EPS)
        self.activate = spec.pre_block == "gelu_ln"
        self.gelu = nn.GELU()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.norm(x)
        return self.gelu(x) if self.activate else x


def attention_head(x: torch.Tensor, w_q: torch.Tensor, w_k: torch.Tensor,
                   w_v: torch.Tensor, b_q: torch.Tensor, b_k: torch.Tensor,
                   b_v: torch.Tensor, scale_dim: int) -> torch.Tensor:
    """One self-attention head on (..., l, d) tokens, returning (..., l, d_s)."""
    q = x @ w_q + b_q
    k = x @ w_k + b_k
    v = x @ w_v + b_v
    scores = q @ k.transpose(-2, -1) / math.sqrt(scale_dim)
    return torch.softmax(scores, dim=-1) @ v


class MultiHeadSelfAttention(nn.Module):
    """Residual multi-head self-attention: x + concat(heads) @ W_i."""

    def __init__(self, spec: ModelSpec):
        super().__init__()
        hd = spec.head_dim
        self.scale_dim = spec.scale_dim
        self.w_q = nn.Parameter(torch.empty(spec.heads, spec.width, hd))
        self.w_k = nn.Parameter(torch.empty(spec.heads, spec.width, hd))
        self.w_v = nn.Parameter(torch.empty(spec.heads, spec.width, hd))
        self.b_q = nn.Parameter(torch.empty(spec.heads, hd))
        self.b_k = nn.Parameter(torch.empty(spec.heads, hd))
        self.b_v = nn.Parameter(torch.empty(spec.heads, hd))
        self.proj = nn.Linear(spec.heads * hd, spec.width)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        heads = [
            attention_head(x, self.w_q[h], self.w_k[h], self.w_v[h],
                           self.b_q[h], self.b_k[h], self.b_v[h], self.scale_dim)
            for h in range(self.w_q.shape[0])
        ]
        return x + self.proj(torch.cat(heads, dim=-1))


class FeedForward(nn.Module):
    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.expand = nn.Linear(spec.width, spec.mlp_width)
        self.contract = nn.Linear(spec.mlp_width, spec.width)
        self.gelu = nn.GELU()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.contract(self.gelu(self.expand(x)))


class TransformerLayer(nn.Module):
    """One encoder/decoder layer: U = MSA(pre(x)); out = U + MLP(pre(U))."""

    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.pre_attn = PreBlock(spec)
        self.pre_mlp = PreBlock(spec)
        self.attn = MultiHeadSelfAttention(spec)
        self.mlp = FeedForward(spec)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        u = self.attn(self.pre_attn(x))
        return u + self.mlp(self.pre_mlp(u))


class TransformerStack(nn.Module):
    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.blocks = nn.ModuleList(TransformerLayer(spec) for _ in range(spec.layers))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for block in self.blocks:
            x = block(x)
        return x


class TablePositionEmbedding(nn.Module):
    """Learned per-token additive table ("dpe")."""

    def __init__(self, tokens: int, width: int):
        super().__init__()
        self.table = nn.Parameter(torch.empty(tokens, width))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.table


class ConvPositionEmbedding(nn.Module):
    """3x3 convolution over the p-by-p token grid ("cpe"), zero padded."""

    def __init__(self, tokens: int, width: int):
        super().__init__()
        side = math.isqrt(tokens)
        if side * side != tokens:
            raise DimensionError(
                f"cpe needs a square token grid, got sequence length {tokens}"
            )
        self.side = side
        self.conv = nn.Conv2d(width, width, kernel_size=3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        lead = x.shape[:-2]
        grid = x.reshape((-1, self.side, self.side, x.shape[-1]))
        pe = self.conv(grid.permute(0, 3, 1, 2)).permute(0, 2, 3, 1)
        return x + pe.reshape(lead + x.shape[-2:])


def make_position_embedding(spec: ModelSpec, tokens: int) -> nn.Module:
    if spec.pos_embed == "dpe":
        return TablePositionEmbedding(tokens, spec.width)
    return ConvPositionEmbedding(tokens, spec.width)


class SiameseEmbedding(nn.Module):
    """Sign-invariant front end: branch(y) + branch(-y), shared branch weights.

    The branch is Linear -> GeLU -> Linear, so the output is an even
    function of its input by construction.
    """

    def __init__(self, in_width: int, width: int):
        super().__init__()
        self.inner = nn.Linear(in_width, width)
        self.outer = nn.Linear(width, width)
        self.gelu = nn.GELU()

    def branch(self, y: torch.Tensor) -> torch.Tensor:
        return self.outer(self.gelu(self.inner(y)))

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        return self.branch(y) + self.branch(-y)
