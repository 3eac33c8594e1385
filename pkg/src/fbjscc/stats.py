"""Closed-form parameter counts and forward-pass cost estimates.

Both quantities follow directly from the architecture dimensions, so they
are computed analytically and cross-checked in tests against instantiated
modules.  Costs count multiply-accumulate operations of the matrix
products (attention projections, attention itself, MLPs, input/output
projections); element-wise work is ignored.

Two structural facts worth writing down:

  * With the total symbol budget m*k fixed, the lite encoder's input
    projection grows by exactly the amount the channel head shrinks as m
    rises, so the lite parameter count is invariant in the block count.
  * Full-mode slots carry a reconstruction (width c) per block, so its
    count grows linearly in m; and the transmitter reruns the receiver
    network per feedback block, which multiplies decoder cost into the
    block loop.
"""

from .nn_core import ModelSpec
from .protocol import BroadcastConfig, SessionConfig


def layer_parameters(spec: ModelSpec) -> int:
    """One transformer layer: per-head q/k/v, head merge, MLP, two norms."""
    d, hd, heads = spec.width, spec.head_dim, spec.heads
    qkv = 3 * heads * (d * hd + hd)
    merge = heads * hd * d + d
    mlp = d * spec.mlp_width + spec.mlp_width + spec.mlp_width * d + d
    norms = 2 * 2 * d
    return qkv + merge + mlp + norms


def position_embedding_parameters(spec: ModelSpec, tokens: int) -> int:
    if spec.pos_embed == "dpe":
        return tokens * spec.width
    return spec.width * spec.width * 9 + spec.width  # 3x3 conv + bias


def encoder_parameters(spec: ModelSpec, tokens: int, in_width: int,
                       head_width: int | None) -> int:
    total = in_width * spec.width
    total += position_embedding_parameters(spec, tokens)
    total += spec.layers * layer_parameters(spec)
    if head_width is not None:
        total += spec.width * head_width
    return total


def decoder_parameters(spec: ModelSpec, tokens: int, in_width: int,
                       token_dim: int) -> int:
    d = spec.width
    if spec.siamese:
        embed = in_width * d + d + d * d + d  # two shared-branch linears
    else:
        embed = in_width * d + d
    total = embed
    total += position_embedding_parameters(spec, tokens)
    total += spec.layers * layer_parameters(spec)
    total += d * token_dim
    return total


def parameter_count(spec: ModelSpec, session: SessionConfig) -> dict:
    """Exact parameter counts of the point-to-point pair."""
    enc = encoder_parameters(
        spec, session.tokens, session.encoder_in_width, session.symbol_width
    )
    dec = decoder_parameters(
        spec, session.tokens, session.combined_width, session.token_dim
    )
    return {"encoder": enc, "decoder": dec, "total": enc + dec}


def broadcast_parameter_count(spec: ModelSpec, config: BroadcastConfig) -> dict:
    session = config.session(1)
    message = encoder_parameters(spec, session.tokens, session.encoder_in_width, None)
    combiner = encoder_parameters(
        spec, session.tokens, 2 * spec.width, session.symbol_width
    )
    dec = decoder_parameters(
        spec, session.tokens, session.combined_width, session.token_dim
    )
    return {
        "message_encoders": 2 * message,
        "combiner": combiner,
        "decoders": 2 * dec,
        "total": 2 * message + combiner + 2 * dec,
    }


def layer_macs(spec: ModelSpec, tokens: int) -> int:
    """Matrix-product MACs of one transformer layer on an l-token input."""
    l, d = tokens, spec.width
    qkv = 3 * l * d * d  # all heads together
    attention = 2 * l * l * d  # scores and value mix
    merge = l * d * d
    mlp = 2 * l * d * spec.mlp_width
    return qkv + attention + merge + mlp


def _pos_embed_macs(spec: ModelSpec, tokens: int) -> int:
    if spec.pos_embed == "dpe":
        return 0
    return tokens * 9 * spec.width * spec.width


def encoder_macs(spec: ModelSpec, tokens: int, in_width: int,
                 head_width: int | None) -> int:
    total = tokens * in_width * spec.width
    total += _pos_embed_macs(spec, tokens)
    total += spec.layers * layer_macs(spec, tokens)
    if head_width is not None:
        total += tokens * spec.width * head_width
    return total


def decoder_macs(spec: ModelSpec, tokens: int, in_width: int, token_dim: int) -> int:
    d = spec.width
    if spec.siamese:
        embed = 2 * tokens * (in_width * d + d * d)  # branch runs on +y and -y
    else:
        embed = tokens * in_width * d
    total = embed + _pos_embed_macs(spec, tokens)
    total += spec.layers * layer_macs(spec, tokens)
    total += tokens * d * token_dim
    return total


def flops_estimate(spec: ModelSpec, session: SessionConfig) -> dict:
    """Forward MACs of one full session (all blocks, one image).

    The encoder runs once per block.  The receiver decodes once; in full
    feedback mode the transmitter additionally reruns the receiver network
    after each of the first m-1 blocks to form its belief.
    """
    enc_block = encoder_macs(
        spec, session.tokens, session.encoder_in_width, session.symbol_width
    )
    dec_run = decoder_macs(
        spec, session.tokens, session.combined_width, session.token_dim
    )
    belief_runs = session.blocks - 1 if session.feedback.kind == "full" else 0
    total = session.blocks * enc_block + (1 + belief_runs) * dec_run
    return {
        "encoder_per_block": enc_block,
        "decoder_per_run": dec_run,
        "belief_runs": belief_runs,
        "total": total,
    }


def count_module_parameters(module) -> int:
    """Actual parameter count of an instantiated torch module."""
    return sum(p.numel() for p in module.parameters())


def describe(spec: ModelSpec, session: SessionConfig) -> dict:
    """Everything the stats command prints, as one JSON-friendly dict."""
    params = parameter_count(spec, session)
    macs = flops_estimate(spec, session)
    return {
        "bandwidth_ratio": session.bandwidth_ratio,
        "blocks": session.blocks,
        "block_symbols": session.block_symbols,
        "feedback": session.feedback.kind,
        "parameters": params,
        "parameters_millions": round(params["total"] / 1e6, 4),
        "macs": macs,
        "macs_gig": round(macs["total"] / 1e9, 4),
    }
