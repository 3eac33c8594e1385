"""Receiver side: combining channel outputs and reconstructing the image.

The receiver keeps the m received blocks in a zero-padded BlockBuffer and
decodes their feature-axis concatenation S_d in R^(l x 2mk/l).  The first
decoder stage is the sign-invariant Siamese embedding (a plain linear layer
when disabled), followed by the shared transformer recipe and a linear
output head back to token space.  Token outputs are unclamped; the image
form is clamped to [0, 1].

The transmitter reuses the same network on its feedback buffer to form its
belief of the receiver's current reconstruction; that path is always
gradient-stopped.
"""

import torch
from torch import nn

from .encoder import BlockBuffer
from .errors import DimensionError
from .imaging import PatchSpec, unpatchify
from .nn_core import ModelSpec, SiameseEmbedding, TransformerStack, make_position_embedding

ReceivedBuffer = BlockBuffer


class Decoder(nn.Module):
    """Map a combined received matrix (l x 2mk/l) to reconstruction tokens."""

    def __init__(self, spec: ModelSpec, tokens: int, in_width: int, token_dim: int):
        super().__init__()
        self.in_width = in_width
        if spec.siamese:
            self.embed = SiameseEmbedding(in_width, spec.width)
        else:
            self.embed = nn.Linear(in_width, spec.width)
        self.pos = make_position_embedding(spec, tokens)
        self.stack = TransformerStack(spec)
        self.out_proj = nn.Parameter(torch.empty(spec.width, token_dim))

    def forward(self, combined: torch.Tensor) -> torch.Tensor:
        if combined.shape[-1] != self.in_width:
            raise DimensionError(
                f"decoder built for input width {self.in_width}, got {combined.shape[-1]}"
            )
        f = self.pos(self.embed(combined))
        f = self.stack(f)
        return f @ self.out_proj


def decode(decoder: Decoder, buffer: BlockBuffer, patch_spec: PatchSpec) -> torch.Tensor:
    """Reconstruct the image from however many blocks have been received.

    Missing blocks contribute zeros through the buffer padding; the output
    is clamped to the pixel range.
    """
    tokens = decoder(buffer.combined())
    return unpatchify(tokens, patch_spec).clamp(0.0, 1.0)


def transmitter_belief(decoder: Decoder, buffer: BlockBuffer,
                       patch_spec: PatchSpec) -> torch.Tensor:
    """The transmitter's estimate of the receiver's reconstruction.

    Identical computation path to decode(), evaluated on the feedback
    buffer, with gradients stopped: belief values must never train the
    receiver (or, through it, earlier encoder blocks).
    """
    return decode(decoder, buffer, patch_spec).detach()
