"""End-to-end training of encoder/decoder pairs through the channel.

The objective is the per-image sum of squared pixel errors averaged over
the batch, E[||S - S_hat||^2], computed on unclamped reconstructions so
saturated pixels keep their gradients.  Variants:

    mse               final reconstruction only
    mse_plus_lpips    adds lambda * LPIPS from a pluggable feature extractor
    intermediate_sum  sum over blocks i of ||S - S_hat_i||^2 where S_hat_i
                      decodes the first i received blocks (the variable-rate
                      fine-tuning objective); gradients flow through the
                      receiver-path reconstructions
    broadcast         mix * ||S1 - S1_hat||^2 + (1 - mix) * ||S2 - S2_hat||^2

Each optimization step runs a complete multi-block session on a fresh
batch with fresh channel noise.  The forward SNR is either fixed or drawn
uniformly per image from a dB range (the single-model-many-SNRs recipe).
Early stopping watches validation PSNR with a fixed patience; the best
validation state is what the loop returns.
"""

import copy
import math
from dataclasses import dataclass

import torch

from .errors import ConfigError, DivergenceError, ModeError, PluginMissing
from .imaging import patchify, split_train_val, unpatchify
from .metrics import lpips as lpips_metric
from .metrics import psnr_per_image
from .protocol import (BroadcastConfig, BroadcastModel, PointToPointModel,
                       SessionConfig, _transmit, _transmit_broadcast)
from .seeding import derive_seed, derived_generator

LOSS_KINDS = ("mse", "mse_plus_lpips", "intermediate_sum", "broadcast")
SNR_STRATEGIES = ("fixed", "uniform")

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class LossSpec:
    kind: str = "mse"
    lpips_weight: float = 0.1
    mix: float = 0.5

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ModeError(f"loss kind must be one of {LOSS_KINDS}, got {self.kind!r}")
        if self.lpips_weight < 0:
            raise ConfigError(f"lpips_weight must be >= 0, got {self.lpips_weight}")
        if not 0.0 <= self.mix <= 1.0:
            raise ConfigError(f"mix must lie in [0, 1], got {self.mix}")


@dataclass(frozen=True)
class SnrStrategy:
    """Forward-SNR schedule during training: one value, or uniform in a range."""

    kind: str = "fixed"
    snr_db: float = 10.0
    low_db: float = -2.0
    high_db: float = 15.0

    def __post_init__(self):
        if self.kind not in SNR_STRATEGIES:
            raise ModeError(f"snr strategy must be one of {SNR_STRATEGIES}")
        if self.kind == "uniform" and self.low_db > self.high_db:
            raise ConfigError(
                f"uniform SNR range is empty: [{self.low_db}, {self.high_db}]"
            )


def sample_training_snr(strategy: SnrStrategy, batch: int, gen: torch.Generator):
    """Per-image SNR draws for one step; fixed strategy returns a scalar."""
    if strategy.kind == "fixed":
        return strategy.snr_db
    span = strategy.high_db - strategy.low_db
    return strategy.low_db + span * torch.rand(batch, generator=gen)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-5
    batch_size: int = 128
    epochs: int = 100
    max_steps: int | None = None
    patience: int = 10
    val_fraction: float = 0.1
    seed: int = 0
    snr: SnrStrategy | None = None

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1 and self.max_steps is None:
            raise ConfigError("need epochs >= 1 or an explicit max_steps")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")


def sum_squared_error(source: torch.Tensor, recon: torch.Tensor) -> torch.Tensor:
    """Mean over the batch of per-image ||S - S_hat||^2 (sum over pixels)."""
    diff = (source - recon).square()
    return diff.sum(dim=tuple(range(1, diff.ndim))).mean()


def session_loss(images: torch.Tensor, model: PointToPointModel,
                 session: SessionConfig, loss_spec: LossSpec, *, seed: int,
                 snr_db=None, extractor=None) -> torch.Tensor:
    """Differentiable loss of one batched session with fresh noise."""
    ps = session.patch_spec
    tokens = patchify(images, ps)
    need_steps = loss_spec.kind == "intermediate_sum"
    run = _transmit(
        tokens, model, session, seed=seed, snr_db=snr_db, block_recons=need_steps
    )
    if need_steps:
        total = None
        for step_tokens in run["recon_steps"]:
            term = sum_squared_error(images, unpatchify(step_tokens, ps))
            total = term if total is None else total + term
        return total
    recon = unpatchify(run["recon_tokens"], ps)
    loss = sum_squared_error(images, recon)
    if loss_spec.kind == "mse_plus_lpips":
        if extractor is None:
            raise PluginMissing("mse_plus_lpips needs a feature extractor")
        perceptual = torch.stack(
            [lpips_metric(images[j], recon[j], extractor) for j in range(images.shape[0])]
        ).mean()
        loss = loss + loss_spec.lpips_weight * perceptual
    return loss


def broadcast_loss(images_a: torch.Tensor, images_b: torch.Tensor,
                   model: BroadcastModel, config: BroadcastConfig,
                   loss_spec: LossSpec, *, seed: int) -> torch.Tensor:
    ps = config.session(1).patch_spec
    run = _transmit_broadcast(
        patchify(images_a, ps), patchify(images_b, ps), model, config, seed=seed
    )
    recon_a = unpatchify(run["sides"][0]["recon_tokens"], ps)
    recon_b = unpatchify(run["sides"][1]["recon_tokens"], ps)
    return loss_spec.mix * sum_squared_error(images_a, recon_a) + (
        1.0 - loss_spec.mix
    ) * sum_squared_error(images_b, recon_b)


def _validation_psnr(model, val_images, session, *, seed, batch_size,
                     broadcast_config=None) -> float:
    """Mean PSNR on the validation set with fixed evaluation noise."""
    ps = (broadcast_config.session(1) if broadcast_config else session).patch_spec
    vals = []
    with torch.no_grad():
        for start in range(0, val_images.shape[0], batch_size):
            chunk = val_images[start : start + batch_size]
            tokens = patchify(chunk, ps)
            if broadcast_config is None:
                run = _transmit(
                    tokens, model, session, seed=seed, base_tags=("val", start)
                )
                recon = unpatchify(run["recon_tokens"], ps).clamp(0.0, 1.0)
                vals.append(psnr_per_image(chunk, recon))
            else:
                pair = torch.flip(chunk, dims=(0,))
                run = _transmit_broadcast(
                    tokens, patchify(pair, ps), model, broadcast_config,
                    seed=seed, base_tags=("val", start),
                )
                recon_a = unpatchify(run["sides"][0]["recon_tokens"], ps).clamp(0, 1)
                recon_b = unpatchify(run["sides"][1]["recon_tokens"], ps).clamp(0, 1)
                vals.append(
                    0.5 * (psnr_per_image(chunk, recon_a) + psnr_per_image(pair, recon_b))
                )
    finite = torch.cat(vals)
    finite = finite[torch.isfinite(finite)]
    return float(finite.mean()) if finite.numel() else math.inf


def train_loop(dataset: torch.Tensor, model, session, train_cfg: TrainConfig,
               loss_spec: LossSpec | None = None, *, extractor=None):
    """Train a model end to end; returns (model, history).

    `model` is a PointToPointModel (or a BroadcastModel when loss_spec.kind
    is "broadcast", in which case `session` must be its BroadcastConfig).
    History rows record per-epoch mean training loss and validation PSNR.
    The model is left holding the best-validation parameters.
    """
    loss_spec = loss_spec or LossSpec()
    is_broadcast = loss_spec.kind == "broadcast"
    if is_broadcast != isinstance(model, BroadcastModel):
        raise ConfigError("broadcast loss requires a BroadcastModel (and only then)")
    if is_broadcast != isinstance(session, BroadcastConfig):
        raise ConfigError("pass a BroadcastConfig exactly when training broadcast")
    train_images, val_images = split_train_val(
        dataset, train_cfg.val_fraction, derive_seed(train_cfg.seed, "split")
    )
    if val_images.shape[0] == 0:
        val_images = train_images
    strategy = train_cfg.snr
    point_session = None if is_broadcast else session
    optimizer = torch.optim.Adam(
        model.parameters(), lr=train_cfg.lr, betas=ADAM_BETAS, eps=ADAM_EPS
    )
    steps_per_epoch = max(1, train_images.shape[0] // train_cfg.batch_size)
    total_steps = train_cfg.epochs * steps_per_epoch
    if train_cfg.max_steps is not None:
        total_steps = train_cfg.max_steps
    history = []
    best_psnr = -math.inf
    best_state = None
    stale_epochs = 0
    epoch_losses = []
    batch_gen = derived_generator(train_cfg.seed, "batches")
    snr_gen = derived_generator(train_cfg.seed, "snr")
    for step in range(total_steps):
        idx = torch.randint(
            0, train_images.shape[0], (min(train_cfg.batch_size, train_images.shape[0]),),
            generator=batch_gen,
        )
        batch = train_images[idx]
        snr_db = None
        if strategy is not None:
            snr_db = sample_training_snr(strategy, batch.shape[0], snr_gen)
        noise_seed = derive_seed(train_cfg.seed, "noise", step)
        if is_broadcast:
            pair = train_images[
                torch.randint(0, train_images.shape[0], (batch.shape[0],), generator=batch_gen)
            ]
            loss = broadcast_loss(batch, pair, model, session, loss_spec, seed=noise_seed)
        else:
            loss = session_loss(
                batch, model, point_session, loss_spec, seed=noise_seed,
                snr_db=snr_db, extractor=extractor,
            )
        loss_value = loss.detach().item()
        if not math.isfinite(loss_value):
            raise DivergenceError(
                f"non-finite training loss {loss_value!r} at step {step}"
            )
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        epoch_losses.append(loss_value)
        end_of_epoch = (step + 1) % steps_per_epoch == 0 or step + 1 == total_steps
        if not end_of_epoch:
            continue
        val_psnr = _validation_psnr(
            model, val_images, point_session,
            seed=derive_seed(train_cfg.seed, "val"),
            batch_size=train_cfg.batch_size,
            broadcast_config=session if is_broadcast else None,
        )
        history.append(
            {
                "epoch": len(history) + 1,
                "step": step + 1,
                "train_loss": sum(epoch_losses) / len(epoch_losses),
                "val_psnr": val_psnr,
            }
        )
        epoch_losses = []
        if val_psnr > best_psnr:
            best_psnr = val_psnr
            best_state = copy.deepcopy(model.state_dict())
            stale_epochs = 0
        else:
            stale_epochs += 1
            if stale_epochs >= train_cfg.patience:
                break
    if best_state is not None:
        model.load_state_dict(best_state)
    return model, history
