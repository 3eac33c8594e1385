"""Transmitter side: feedback bookkeeping and block-wise encoding.

Transmission of one image takes m blocks.  Before sending block i the
encoder sees the source tokens S_s (l x c) plus one embedding slot Z_j
(l x z) per earlier block j < i; slots for blocks that have not happened
yet are zero.  The full input is

    S_in = [S_s, Z_1, ..., Z_{m-1}]  in R^(l x (c + (m-1) z)).

The slot content depends on the feedback mode:

    full        Z_j = [sg(belief), Y_hat_j], z = c + 2k/l, where `belief` is
                the receiver-model reconstruction of the zero-padded feedback
                buffer and sg stops gradients into and through it
    lite        Z_j = Y_hat_j, z = 2k/l
    scalar_snr  Z_j = a constant column holding the link SNR in dB, z = 1
    none        no slots, z = 0 (the encoder never reacts to the channel)

With m = 1 every mode degenerates to plain source coding: S_in = S_s.
"""

from dataclasses import dataclass

import torch
from torch import nn

from .channel import power_normalize
from .errors import (ConfigError, DimensionError, ModeError, SequenceError,
                     ShapeError)
from .nn_core import ModelSpec, TransformerStack, make_position_embedding

FEEDBACK_MODES = ("full", "lite", "scalar_snr", "none")


@dataclass(frozen=True)
class FeedbackMode:
    """How channel-output feedback is embedded into the encoder input."""

    kind: str = "lite"

    def __post_init__(self):
        if self.kind not in FEEDBACK_MODES:
            raise ModeError(f"feedback mode must be one of {FEEDBACK_MODES}, got {self.kind!r}")

    def slot_width(self, token_dim: int, symbol_width: int) -> int:
        """Feature width z of one feedback slot."""
        if self.kind == "full":
            return token_dim + symbol_width
        if self.kind == "lite":
            return symbol_width
        if self.kind == "scalar_snr":
            return 1
        return 0

    @property
    def needs_belief(self) -> bool:
        return self.kind == "full"


class BlockBuffer:
    """Fixed-size store of per-block (l x 2k/l) channel-output matrices.

    Slots fill strictly in block order; every slot at an index >= filled is
    held at exact zero (enforced on every rebuild, not assumed).  Used both
    for the transmitter's feedback history and the receiver's accumulated
    channel outputs.
    """

    def __init__(self, blocks: int, tokens: int, symbol_width: int,
                 batch_shape=(), dtype: torch.dtype = torch.float32):
        if blocks < 1:
            raise DimensionError(f"buffer needs at least one block, got {blocks}")
        self.blocks = blocks
        self.tokens = tokens
        self.symbol_width = symbol_width
        self.batch_shape = tuple(batch_shape)
        self.filled = 0
        self.storage = torch.zeros(
            self.batch_shape + (blocks, tokens, symbol_width), dtype=dtype
        )

    def push(self, block: torch.Tensor) -> None:
        """Append the next block's matrix; rejects overflow and bad shapes."""
        want = self.batch_shape + (self.tokens, self.symbol_width)
        if tuple(block.shape) != want:
            raise DimensionError(f"expected block of shape {want}, got {tuple(block.shape)}")
        if self.filled >= self.blocks:
            raise SequenceError(f"all {self.blocks} blocks already pushed")
        head = self.storage[..., : self.filled, :, :]
        tail = torch.zeros(
            self.batch_shape + (self.blocks - self.filled - 1,) + want[-2:],
            dtype=block.dtype,
        )
        self.storage = torch.cat([head, block.unsqueeze(-3), tail], dim=-3)
        self.filled += 1

    def enforce_padding(self) -> None:
        """Rebuild the zero padding beyond the filled prefix."""
        head = self.storage[..., : self.filled, :, :]
        tail = torch.zeros(
            self.batch_shape
            + (self.blocks - self.filled, self.tokens, self.symbol_width),
            dtype=self.storage.dtype,
        )
        self.storage = torch.cat([head, tail], dim=-3)

    def slot(self, index: int) -> torch.Tensor:
        """Matrix of block `index` (0-based); must already be filled."""
        if not 0 <= index < self.filled:
            raise SequenceError(f"slot {index} not filled yet ({self.filled} of {self.blocks})")
        return self.storage[..., index, :, :]

    def combined(self) -> torch.Tensor:
        """Feature-axis concatenation [B_1 | ... | B_m] of all m slots.

        Shape (..., l, m * 2k/l); unfilled slots contribute exact zeros.
        """
        moved = self.storage.movedim(-3, -2)  # (..., l, m, w)
        return moved.reshape(
            self.batch_shape + (self.tokens, self.blocks * self.symbol_width)
        )


class EncoderState:
    """Everything the transmitter knows between blocks of one session.

    `belief_fn` maps a combined feedback matrix (l x 2mk/l) to receiver-model
    reconstruction tokens (l x c); it is required only in full mode, and its
    output is detached before entering any encoder input.
    """

    def __init__(self, source_tokens: torch.Tensor, blocks: int, symbol_width: int,
                 mode: FeedbackMode, snr_db=None, belief_fn=None):
        if source_tokens.ndim < 2:
            raise DimensionError(
                f"expected (..., l, c) source tokens, got {tuple(source_tokens.shape)}"
            )
        if mode.needs_belief and belief_fn is None:
            raise ConfigError("full feedback mode requires a belief_fn")
        if mode.kind == "scalar_snr" and snr_db is None:
            raise ConfigError("scalar_snr feedback mode requires snr_db")
        self.source_tokens = source_tokens
        self.blocks = blocks
        self.mode = mode
        self.snr_db = snr_db
        self.belief_fn = belief_fn
        self.buffer = BlockBuffer(
            blocks, source_tokens.shape[-2], symbol_width,
            batch_shape=source_tokens.shape[:-2], dtype=source_tokens.dtype,
        )
        self.z_slots: list[torch.Tensor] = []

    @property
    def token_dim(self) -> int:
        return self.source_tokens.shape[-1]

    @property
    def slot_width(self) -> int:
        return self.mode.slot_width(self.token_dim, self.buffer.symbol_width)

    @property
    def next_block(self) -> int:
        """1-based index of the block the encoder would send next."""
        return self.buffer.filled + 1

    def _snr_column(self) -> torch.Tensor:
        shape = self.source_tokens.shape[:-1] + (1,)
        snr = torch.as_tensor(self.snr_db, dtype=self.source_tokens.dtype)
        if snr.ndim == 0:
            return torch.full(shape, float(snr), dtype=self.source_tokens.dtype)
        return snr.reshape(snr.shape + (1, 1)).expand(shape).clone()

    def push_feedback(self, feedback: torch.Tensor) -> None:
        """Record block next_block's feedback matrix and grow its Z slot."""
        self.buffer.push(feedback)
        acknowledged = self.buffer.filled
        if acknowledged > self.blocks - 1 or self.mode.kind == "none":
            return  # the last block's feedback feeds no further encoder input
        if self.mode.kind == "lite":
            z = self.buffer.slot(acknowledged - 1)
        elif self.mode.kind == "scalar_snr":
            z = self._snr_column()
        else:  # full
            belief = self.belief_fn(self.buffer.combined()).detach()
            if belief.shape != self.source_tokens.shape:
                raise ShapeError(
                    f"belief_fn must return source-token shape "
                    f"{tuple(self.source_tokens.shape)}, got {tuple(belief.shape)}"
                )
            z = torch.cat([belief, self.buffer.slot(acknowledged - 1)], dim=-1)
        self.z_slots.append(z)

    def build_input(self) -> torch.Tensor:
        """Assemble S_in = [S_s, Z_1, ..., Z_{m-1}] with zero future slots."""
        z = self.slot_width
        if z == 0 or self.blocks == 1:
            return self.source_tokens
        missing = (self.blocks - 1) - len(self.z_slots)
        pieces = [self.source_tokens] + list(self.z_slots)
        if missing > 0:
            pieces.append(
                torch.zeros(
                    self.source_tokens.shape[:-1] + (missing * z,),
                    dtype=self.source_tokens.dtype,
                )
            )
        return torch.cat(pieces, dim=-1)


class Encoder(nn.Module):
    """Input projection, position embedding, transformer stack, channel head.

    With head_width=None the module stops at the final token features
    (used by the broadcast message encoders); otherwise a d x head_width
    matrix maps features to the raw symbol matrix.
    """

    def __init__(self, spec: ModelSpec, tokens: int, in_width: int,
                 head_width: int | None = None):
        super().__init__()
        self.in_width = in_width
        self.input_proj = nn.Parameter(torch.empty(in_width, spec.width))
        self.pos = make_position_embedding(spec, tokens)
        self.stack = TransformerStack(spec)
        if head_width is None:
            self.head = None
        else:
            self.head = nn.Parameter(torch.empty(spec.width, head_width))

    def forward(self, s_in: torch.Tensor) -> torch.Tensor:
        if s_in.shape[-1] != self.in_width:
            raise DimensionError(
                f"encoder built for input width {self.in_width}, got {s_in.shape[-1]}"
            )
        f = self.pos(s_in @ self.input_proj)
        f = self.stack(f)
        return f if self.head is None else f @ self.head


def encode_block(state: EncoderState, encoder: Encoder, power: float = 1.0) -> torch.Tensor:
    """Produce the next block's power-normalized complex symbols.

    Pure in (state, parameters): calling twice without pushing feedback
    yields bitwise-identical symbols.
    """
    if state.buffer.filled >= state.blocks:
        raise SequenceError(f"session already transmitted all {state.blocks} blocks")
    raw = encoder(state.build_input())
    return power_normalize(raw, power)
