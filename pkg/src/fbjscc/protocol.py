"""Session orchestration: who sends what, when, over which link.

One point-to-point session transmits a single image in `blocks` blocks of
`block_symbols` complex symbols each, so the bandwidth ratio is
R = blocks * block_symbols / (3 h w).  Per block the transmitter encodes,
the channel adds noise (and fading, drawn once per image), the receiver
stores the output, and the (possibly noisy) output travels back over the
feedback link into the encoder state for the next block.

The same machinery drives three front ends:

    run_session        fixed-length transmission, full trace
    run_variable_rate  transmitter stops early once its belief of the
                       receiver's PSNR meets a target (needs perfect feedback)
    run_broadcast_session
                       one shared codeword, two receivers with separate
                       decoders and noiseless per-receiver feedback

Every random draw comes from a generator derived from (seed, image_index,
block, link), which makes traces reproducible and makes noise across
repeats common when only link qualities change.
"""

import csv
from dataclasses import dataclass, field

import torch
from torch import nn

from .arrays import load_array_archive, save_array_archive
from .channel import (ChannelConfig, feedback_channel, forward_channel,
                      power_normalize, sample_fading, symbols_to_real)
from .decoder import BlockBuffer, Decoder, decode, transmitter_belief
from .encoder import Encoder, EncoderState, FeedbackMode, encode_block
from .errors import ConfigError, DimensionError
from .imaging import PatchSpec, patchify, unpatchify
from .metrics import psnr, psnr_per_image
from .nn_core import ModelSpec, init_module_
from .seeding import derived_generator, generator

TRACE_FORMAT = "fbjscc-trace"
TRACE_VERSION = 1


@dataclass(frozen=True)
class SessionConfig:
    """Geometry and link parameters of one transmission session."""

    height: int = 32
    width: int = 32
    patch: int = 8
    blocks: int = 2
    block_symbols: int = 256
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    feedback: FeedbackMode = field(default_factory=FeedbackMode)

    def __post_init__(self):
        self.patch_spec  # validates divisibility
        if self.blocks < 1:
            raise ConfigError(f"blocks must be >= 1, got {self.blocks}")
        if self.block_symbols < 1:
            raise ConfigError(f"block_symbols must be >= 1, got {self.block_symbols}")
        if self.block_symbols % self.tokens:
            raise DimensionError(
                f"block_symbols {self.block_symbols} must be a multiple of the "
                f"sequence length {self.tokens} so each token row carries whole symbols"
            )

    @property
    def patch_spec(self) -> PatchSpec:
        return PatchSpec(self.patch, self.height, self.width)

    @property
    def tokens(self) -> int:
        return self.patch_spec.tokens

    @property
    def token_dim(self) -> int:
        return self.patch_spec.token_dim

    @property
    def source_dim(self) -> int:
        """n = 3 h w, the source dimension per image."""
        return 3 * self.height * self.width

    @property
    def bandwidth_ratio(self) -> float:
        """R = m k / n, channel uses per source dimension."""
        return self.blocks * self.block_symbols / self.source_dim

    @property
    def symbol_width(self) -> int:
        """Real row width 2k/l of one block's symbol matrix."""
        return 2 * self.block_symbols // self.tokens

    @property
    def slot_width(self) -> int:
        return self.feedback.slot_width(self.token_dim, self.symbol_width)

    @property
    def encoder_in_width(self) -> int:
        return self.token_dim + (self.blocks - 1) * self.slot_width

    @property
    def combined_width(self) -> int:
        """Width 2 m k / l of the receiver's combined matrix."""
        return self.blocks * self.symbol_width


class PointToPointModel(nn.Module):
    """Encoder/decoder pair sized for one SessionConfig."""

    def __init__(self, spec: ModelSpec, session: SessionConfig):
        super().__init__()
        self.spec = spec
        self.session = session
        self.encoder = Encoder(
            spec, session.tokens, session.encoder_in_width,
            head_width=session.symbol_width,
        )
        self.decoder = Decoder(
            spec, session.tokens, session.combined_width, session.token_dim
        )


def build_point_to_point(spec: ModelSpec, session: SessionConfig,
                         seed: int = 0) -> PointToPointModel:
    model = PointToPointModel(spec, session)
    init_module_(model, generator(seed))
    return model


@dataclass
class BlockRecord:
    """What one block of a session looked like on the wire."""

    x: torch.Tensor
    y: torch.Tensor
    feedback: torch.Tensor
    power: float
    belief_psnr: float | None = None


@dataclass
class TransmissionTrace:
    seed: int
    image_index: int
    blocks_used: int
    fading: complex | None
    records: list[BlockRecord]
    reconstruction: torch.Tensor
    psnr: float
    beliefs: list[torch.Tensor] | None = None


def _transmit(tokens: torch.Tensor, model: PointToPointModel, session: SessionConfig,
              *, seed: int, base_tags=(), snr_db=None, collect_beliefs=False,
              block_recons=False):
    """Run all blocks of a (batched) session; the workhorse behind every front end.

    tokens: (..., l, c) source token matrices.  Returns a dict carrying the
    on-wire tensors, the encoder/receiver buffers and the final (unclamped)
    reconstruction tokens.  Gradients flow through everything except the
    feedback-belief branch and the sampled noise.
    """
    cfg = session.channel
    lead = tokens.shape[:-2]
    active_snr = cfg.snr_db if snr_db is None else snr_db
    state = EncoderState(
        tokens, session.blocks, session.symbol_width, session.feedback,
        snr_db=active_snr, belief_fn=model.decoder,
    )
    received = BlockBuffer(
        session.blocks, session.tokens, session.symbol_width,
        batch_shape=lead, dtype=tokens.dtype,
    )
    h = None
    if cfg.forward == "rayleigh":
        h = sample_fading(
            cfg, lead, gen=derived_generator(seed, *base_tags, "fading"),
            dtype=tokens.dtype,
        ).unsqueeze(-1)
    source_image = unpatchify(tokens, session.patch_spec)
    xs, ys, fbs, belief_psnrs, beliefs, recon_steps = [], [], [], [], [], []
    for block in range(1, session.blocks + 1):
        x = encode_block(state, model.encoder, cfg.power)
        y = forward_channel(
            x, cfg, gen=derived_generator(seed, *base_tags, block, "forward"),
            h=h, snr_db=snr_db,
        )
        fb = feedback_channel(
            y, cfg, gen=derived_generator(seed, *base_tags, block, "feedback")
        )
        received.push(symbols_to_real(y, session.tokens))
        state.push_feedback(symbols_to_real(fb, session.tokens))
        xs.append(x)
        ys.append(y)
        fbs.append(fb)
        if collect_beliefs:
            belief = transmitter_belief(model.decoder, state.buffer, session.patch_spec)
            beliefs.append(belief)
            belief_psnrs.append(psnr_per_image(source_image, belief))
        if block_recons:
            recon_steps.append(model.decoder(received.combined()))
    recon_tokens = recon_steps[-1] if block_recons else model.decoder(received.combined())
    return {
        "x": xs,
        "y": ys,
        "feedback": fbs,
        "state": state,
        "received": received,
        "recon_tokens": recon_tokens,
        "recon_steps": recon_steps,
        "beliefs": beliefs,
        "belief_psnrs": belief_psnrs,
        "fading": h,
    }


def _trace_from_run(run: dict, session: SessionConfig, seed: int, image_index: int,
                    source: torch.Tensor, collect_beliefs: bool) -> TransmissionTrace:
    records = []
    for i, x in enumerate(run["x"]):
        records.append(
            BlockRecord(
                x=x.squeeze(0),
                y=run["y"][i].squeeze(0),
                feedback=run["feedback"][i].squeeze(0),
                power=float(x.abs().square().mean()),
                belief_psnr=(
                    float(run["belief_psnrs"][i]) if run["belief_psnrs"] else None
                ),
            )
        )
    recon = unpatchify(run["recon_tokens"], session.patch_spec).clamp(0.0, 1.0)
    recon = recon.squeeze(0)
    fading = None
    if run["fading"] is not None:
        fading = complex(run["fading"].reshape(-1)[0])
    return TransmissionTrace(
        seed=seed,
        image_index=image_index,
        blocks_used=len(records),
        fading=fading,
        records=records,
        reconstruction=recon,
        psnr=psnr(source, recon),
        beliefs=[b.squeeze(0) for b in run["beliefs"]] if collect_beliefs else None,
    )


def run_session(image: torch.Tensor, model: PointToPointModel, session: SessionConfig,
                *, seed: int = 0, image_index: int = 0,
                collect_beliefs: bool = False) -> TransmissionTrace:
    """Transmit one image over all blocks and return the full trace."""
    if image.ndim != 3:
        raise DimensionError(f"run_session expects one (h, w, 3) image, got {tuple(image.shape)}")
    tokens = patchify(image.unsqueeze(0), session.patch_spec)
    with torch.no_grad():
        run = _transmit(
            tokens, model, session, seed=seed, base_tags=(image_index,),
            collect_beliefs=collect_beliefs,
        )
    return _trace_from_run(run, session, seed, image_index, image, collect_beliefs)


def run_variable_rate(image: torch.Tensor, model: PointToPointModel,
                      session: SessionConfig, target_psnr_db: float, *,
                      seed: int = 0, image_index: int = 0) -> TransmissionTrace:
    """Stop transmitting once the transmitter's belief PSNR meets the target.

    After each block the transmitter decodes its zero-padded feedback buffer
    exactly the way the receiver would and compares the belief PSNR against
    target_psnr_db; the first block whose belief meets it is the last block
    sent.  Requires perfect feedback (otherwise belief and receiver state
    drift apart silently, which we refuse to pretend is meaningful).
    """
    if image.ndim != 3:
        raise DimensionError(f"expected one (h, w, 3) image, got {tuple(image.shape)}")
    if session.channel.feedback != "perfect":
        raise ConfigError("variable-rate transmission requires perfect feedback")
    cfg = session.channel
    tokens = patchify(image.unsqueeze(0), session.patch_spec)
    with torch.no_grad():
        state = EncoderState(
            tokens, session.blocks, session.symbol_width, session.feedback,
            snr_db=cfg.snr_db, belief_fn=model.decoder,
        )
        received = BlockBuffer(
            session.blocks, session.tokens, session.symbol_width,
            batch_shape=tokens.shape[:-2], dtype=tokens.dtype,
        )
        h = None
        if cfg.forward == "rayleigh":
            h = sample_fading(
                cfg, tokens.shape[:-2],
                gen=derived_generator(seed, image_index, "fading"), dtype=tokens.dtype,
            ).unsqueeze(-1)
        records = []
        beliefs = []
        for block in range(1, session.blocks + 1):
            x = encode_block(state, model.encoder, cfg.power)
            y = forward_channel(
                x, cfg, gen=derived_generator(seed, image_index, block, "forward"), h=h
            )
            fb = feedback_channel(
                y, cfg, gen=derived_generator(seed, image_index, block, "feedback")
            )
            received.push(symbols_to_real(y, session.tokens))
            state.push_feedback(symbols_to_real(fb, session.tokens))
            belief = transmitter_belief(model.decoder, state.buffer, session.patch_spec)
            belief_db = psnr(image, belief.squeeze(0))
            records.append(
                BlockRecord(
                    x=x.squeeze(0), y=y.squeeze(0), feedback=fb.squeeze(0),
                    power=float(x.abs().square().mean()), belief_psnr=belief_db,
                )
            )
            beliefs.append(belief.squeeze(0))
            if belief_db >= target_psnr_db:
                break
        recon = decode(model.decoder, received, session.patch_spec).squeeze(0)
    fading = None if h is None else complex(h.reshape(-1)[0])
    return TransmissionTrace(
        seed=seed,
        image_index=image_index,
        blocks_used=len(records),
        fading=fading,
        records=records,
        reconstruction=recon,
        psnr=psnr(image, recon),
        beliefs=beliefs,
    )


def evaluate_point_to_point(model: PointToPointModel, images: torch.Tensor,
                            session: SessionConfig, *, seed: int = 0,
                            batch_size: int = 64, extractor=None):
    """Mean-quality evaluation over a dataset; deterministic in `seed`.

    Returns a dict with per-image "psnr" (and "lpips" when an extractor is
    supplied), both as 1-D tensors aligned with `images`.
    """
    from .metrics import lpips as lpips_metric

    psnrs = []
    lpips_vals = []
    with torch.no_grad():
        for start in range(0, images.shape[0], batch_size):
            chunk = images[start : start + batch_size]
            tokens = patchify(chunk, session.patch_spec)
            run = _transmit(
                tokens, model, session, seed=seed, base_tags=("eval", start)
            )
            recon = unpatchify(run["recon_tokens"], session.patch_spec).clamp(0.0, 1.0)
            psnrs.append(psnr_per_image(chunk, recon))
            if extractor is not None:
                lpips_vals.extend(
                    lpips_metric(chunk[j], recon[j], extractor)
                    for j in range(chunk.shape[0])
                )
    out = {"psnr": torch.cat(psnrs)}
    if extractor is not None:
        out["lpips"] = torch.stack([torch.as_tensor(float(v)) for v in lpips_vals])
    return out


# --- broadcast extension ---------------------------------------------------


@dataclass(frozen=True)
class BroadcastConfig:
    """Two-receiver broadcast session: one codeword, per-receiver AWGN.

    Feedback from both receivers is noiseless.  mix is the weight of
    receiver 1 in the training loss (receiver 2 gets 1 - mix).
    """

    height: int = 32
    width: int = 32
    patch: int = 8
    blocks: int = 2
    block_symbols: int = 256
    snr1_db: float = 10.0
    snr2_db: float = 10.0
    power: float = 1.0
    mix: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.mix <= 1.0:
            raise ConfigError(f"mix must lie in [0, 1], got {self.mix}")
        self.session(1)  # validate geometry

    def channel(self, receiver: int) -> ChannelConfig:
        snr = {1: self.snr1_db, 2: self.snr2_db}[receiver]
        return ChannelConfig(forward="awgn", snr_db=snr, feedback="perfect",
                             power=self.power)

    def session(self, receiver: int) -> SessionConfig:
        return SessionConfig(
            height=self.height, width=self.width, patch=self.patch,
            blocks=self.blocks, block_symbols=self.block_symbols,
            channel=self.channel(receiver), feedback=FeedbackMode("lite"),
        )


class BroadcastModel(nn.Module):
    """Two message encoders, a combiner encoder, and per-receiver decoders.

    Each message encoder reads its own source tokens plus its own
    receiver's feedback history and emits final token features (no channel
    head).  The combiner consumes the feature-axis concatenation of both
    token matrices and owns the single channel head.
    """

    def __init__(self, spec: ModelSpec, config: BroadcastConfig):
        super().__init__()
        self.spec = spec
        self.config = config
        session = config.session(1)
        self.message_a = Encoder(spec, session.tokens, session.encoder_in_width)
        self.message_b = Encoder(spec, session.tokens, session.encoder_in_width)
        self.combiner = Encoder(
            spec, session.tokens, 2 * spec.width, head_width=session.symbol_width
        )
        self.decoder_a = Decoder(
            spec, session.tokens, session.combined_width, session.token_dim
        )
        self.decoder_b = Decoder(
            spec, session.tokens, session.combined_width, session.token_dim
        )


def build_broadcast(spec: ModelSpec, config: BroadcastConfig,
                    seed: int = 0) -> BroadcastModel:
    model = BroadcastModel(spec, config)
    init_module_(model, generator(seed))
    return model


def _transmit_broadcast(tokens_a: torch.Tensor, tokens_b: torch.Tensor,
                        model: BroadcastModel, config: BroadcastConfig, *,
                        seed: int, base_tags=(), block_recons=False):
    """All blocks of a batched broadcast session; mirrors _transmit."""
    if tokens_a.shape != tokens_b.shape:
        raise DimensionError(
            f"source token shapes differ: {tuple(tokens_a.shape)} vs {tuple(tokens_b.shape)}"
        )
    session = config.session(1)
    lead = tokens_a.shape[:-2]
    sides = []
    for tokens, receiver in ((tokens_a, 1), (tokens_b, 2)):
        sides.append(
            {
                "receiver": receiver,
                "cfg": config.channel(receiver),
                "state": EncoderState(
                    tokens, session.blocks, session.symbol_width, session.feedback
                ),
                "received": BlockBuffer(
                    session.blocks, session.tokens, session.symbol_width,
                    batch_shape=lead, dtype=tokens_a.dtype,
                ),
                "y": [],
                "recon_steps": [],
            }
        )
    decoders = {1: model.decoder_a, 2: model.decoder_b}
    encoders = {1: model.message_a, 2: model.message_b}
    xs = []
    for block in range(1, session.blocks + 1):
        feats = [encoders[s["receiver"]](s["state"].build_input()) for s in sides]
        x = power_normalize(
            model.combiner(torch.cat(feats, dim=-1)), config.power
        )
        xs.append(x)
        for s in sides:
            y = forward_channel(
                x, s["cfg"],
                gen=derived_generator(
                    seed, *base_tags, block, "forward", s["receiver"]
                ),
            )
            s["y"].append(y)
            s["received"].push(symbols_to_real(y, session.tokens))
            s["state"].push_feedback(symbols_to_real(y, session.tokens))
            if block_recons:
                s["recon_steps"].append(
                    decoders[s["receiver"]](s["received"].combined())
                )
    for s in sides:
        if block_recons:
            s["recon_tokens"] = s["recon_steps"][-1]
        else:
            s["recon_tokens"] = decoders[s["receiver"]](s["received"].combined())
    return {"x": xs, "sides": sides, "session": session}


def run_broadcast_session(image_a: torch.Tensor, image_b: torch.Tensor,
                          model: BroadcastModel, config: BroadcastConfig, *,
                          seed: int = 0, image_index: int = 0):
    """Transmit one image pair; returns one TransmissionTrace per receiver."""
    if image_a.ndim != 3 or image_b.ndim != 3:
        raise DimensionError("run_broadcast_session expects two (h, w, 3) images")
    session = config.session(1)
    ps = session.patch_spec
    with torch.no_grad():
        run = _transmit_broadcast(
            patchify(image_a.unsqueeze(0), ps), patchify(image_b.unsqueeze(0), ps),
            model, config, seed=seed, base_tags=(image_index,),
        )
    traces = []
    for source, s in zip((image_a, image_b), run["sides"]):
        recon = unpatchify(s["recon_tokens"], ps).clamp(0.0, 1.0).squeeze(0)
        records = [
            BlockRecord(
                x=x.squeeze(0), y=s["y"][i].squeeze(0), feedback=s["y"][i].squeeze(0),
                power=float(x.abs().square().mean()),
            )
            for i, x in enumerate(run["x"])
        ]
        traces.append(
            TransmissionTrace(
                seed=seed, image_index=image_index, blocks_used=session.blocks,
                fading=None, records=records, reconstruction=recon,
                psnr=psnr(source, recon),
            )
        )
    return traces[0], traces[1]


# --- trace export ----------------------------------------------------------


def trace_csv_rows(trace: TransmissionTrace, session_id: str) -> list[list]:
    """Per-block rows: session_id, block, psnr_belief, power, blocks_used."""
    rows = []
    for i, rec in enumerate(trace.records, start=1):
        belief = "" if rec.belief_psnr is None else f"{rec.belief_psnr:.6f}"
        rows.append([session_id, i, belief, f"{rec.power:.8f}", trace.blocks_used])
    return rows


TRACE_CSV_HEADER = ["session_id", "block", "psnr_belief", "power", "blocks_used"]


def write_trace_csv(path: str, traces: dict) -> None:
    """Write {session_id: trace} to one CSV file."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_CSV_HEADER)
        for session_id in sorted(traces):
            writer.writerows(trace_csv_rows(traces[session_id], session_id))


def save_trace(path: str, trace: TransmissionTrace) -> None:
    """Binary golden-trace dump; round trips bitwise."""
    arrays = {"reconstruction": trace.reconstruction}
    for i, rec in enumerate(trace.records):
        arrays[f"block{i}.x"] = torch.view_as_real(rec.x)
        arrays[f"block{i}.y"] = torch.view_as_real(rec.y)
        arrays[f"block{i}.feedback"] = torch.view_as_real(rec.feedback)
    if trace.beliefs is not None:
        for i, belief in enumerate(trace.beliefs):
            arrays[f"belief{i}"] = belief
    manifest = {
        "seed": trace.seed,
        "image_index": trace.image_index,
        "blocks_used": trace.blocks_used,
        "fading": None if trace.fading is None else [trace.fading.real, trace.fading.imag],
        "psnr": trace.psnr,
        "powers": [rec.power for rec in trace.records],
        "belief_psnrs": [rec.belief_psnr for rec in trace.records],
        "record_count": len(trace.records),
        "has_beliefs": trace.beliefs is not None,
    }
    save_array_archive(path, arrays, manifest,
                       format_name=TRACE_FORMAT, format_version=TRACE_VERSION)


def load_trace(path: str) -> TransmissionTrace:
    manifest, arrays = load_array_archive(
        path, format_name=TRACE_FORMAT, format_version=TRACE_VERSION
    )
    records = []
    for i in range(manifest["record_count"]):
        records.append(
            BlockRecord(
                x=torch.view_as_complex(torch.from_numpy(arrays[f"block{i}.x"])),
                y=torch.view_as_complex(torch.from_numpy(arrays[f"block{i}.y"])),
                feedback=torch.view_as_complex(
                    torch.from_numpy(arrays[f"block{i}.feedback"])
                ),
                power=manifest["powers"][i],
                belief_psnr=manifest["belief_psnrs"][i],
            )
        )
    beliefs = None
    if manifest["has_beliefs"]:
        beliefs = [
            torch.from_numpy(arrays[f"belief{i}"]) for i in range(manifest["record_count"])
        ]
    fading = None
    if manifest["fading"] is not None:
        fading = complex(manifest["fading"][0], manifest["fading"][1])
    return TransmissionTrace(
        seed=manifest["seed"],
        image_index=manifest["image_index"],
        blocks_used=manifest["blocks_used"],
        fading=fading,
        records=records,
        reconstruction=torch.from_numpy(arrays["reconstruction"]),
        psnr=manifest["psnr"],
        beliefs=beliefs,
    )
