"""Complex channel simulation: power constraint, AWGN and slow Rayleigh fading.

A transmitted block is a vector of k complex symbols.  The network works on
the matching real matrix of shape (l, 2k/l): symbol j lives in row
floor(j / (k/l)) at columns 2*(j mod k/l) (real part) and 2*(j mod k/l)+1
(imaginary part).  Noise on each link is circularly-symmetric complex
Gaussian, i.e. independent N(0, sigma^2/2) per real component.

With signal power P_s and noise variance sigma_w^2 the link quality is
SNR = 10 log10(sigma_h^2 / sigma_w^2) dB, where sigma_h^2 is the fading
variance (1 for the non-fading channel).  Feedback noise variance is
referenced to the unit symbol power: sigma_f^2 = 10^(-snr_fb_db / 10).

All operations are differentiable in the transmitted symbols; noise enters
as an additive constant so gradients pass through channel uses unchanged.
"""

import math
from dataclasses import dataclass

import torch

from .errors import ConfigError, DegenerateInput, DimensionError, ModeError

FORWARD_KINDS = ("awgn", "rayleigh")
FEEDBACK_KINDS = ("perfect", "awgn")


@dataclass(frozen=True)
class ChannelConfig:
    """Forward and feedback link parameters for one session.

    snr_db sets the forward noise level; with feedback="awgn" the feedback
    link adds its own noise at snr_fb_db.  noiseless=True removes forward
    noise entirely (the snr_db -> infinity limit) without resorting to a
    zero variance float.
    """

    forward: str = "awgn"
    snr_db: float = 10.0
    feedback: str = "perfect"
    snr_fb_db: float | None = None
    power: float = 1.0
    fading_var: float = 1.0
    noiseless: bool = False

    def __post_init__(self):
        if self.forward not in FORWARD_KINDS:
            raise ModeError(f"forward must be one of {FORWARD_KINDS}, got {self.forward!r}")
        if self.feedback not in FEEDBACK_KINDS:
            raise ModeError(
                f"feedback must be one of {FEEDBACK_KINDS}, got {self.feedback!r}"
            )
        if self.feedback == "awgn" and self.snr_fb_db is None:
            raise ConfigError("feedback='awgn' requires snr_fb_db")
        if self.power <= 0:
            raise ConfigError(f"power must be positive, got {self.power}")
        if self.fading_var <= 0:
            raise ConfigError(f"fading_var must be positive, got {self.fading_var}")

    def noise_var(self, snr_db=None) -> float:
        """Forward noise variance sigma_w^2 for the given (or configured) SNR."""
        snr = self.snr_db if snr_db is None else snr_db
        ref = self.fading_var if self.forward == "rayleigh" else 1.0
        return ref * 10.0 ** (-snr / 10.0)

    @property
    def feedback_noise_var(self) -> float:
        """Feedback noise variance sigma_f^2 (0 for perfect feedback)."""
        if self.feedback == "perfect":
            return 0.0
        return 10.0 ** (-self.snr_fb_db / 10.0)


def _complex_dtype(real_dtype: torch.dtype) -> torch.dtype:
    if real_dtype == torch.float64:
        return torch.complex128
    if real_dtype == torch.float32:
        return torch.complex64
    raise DimensionError(f"unsupported real dtype {real_dtype}")


def real_to_symbols(mat: torch.Tensor) -> torch.Tensor:
    """Map an (..., l, 2k/l) real matrix to (..., k) complex symbols."""
    if mat.ndim < 2:
        raise DimensionError(f"expected (..., l, w) matrix, got {tuple(mat.shape)}")
    l, w = mat.shape[-2], mat.shape[-1]
    if w % 2:
        raise DimensionError(
            f"row width {w} is odd; each complex symbol needs a (re, im) column pair"
        )
    pairs = mat.reshape(mat.shape[:-2] + (l * (w // 2), 2)).contiguous()
    return torch.view_as_complex(pairs)


def symbols_to_real(symbols: torch.Tensor, tokens: int) -> torch.Tensor:
    """Map (..., k) complex symbols to the (..., l, 2k/l) real matrix."""
    if symbols.ndim < 1:
        raise DimensionError("expected at least one symbol dimension")
    k = symbols.shape[-1]
    if k % tokens:
        raise DimensionError(f"block size {k} is not a multiple of {tokens} rows")
    parts = torch.view_as_real(symbols)  # (..., k, 2)
    return parts.reshape(symbols.shape[:-1] + (tokens, 2 * (k // tokens)))


def power_normalize(raw: torch.Tensor, power: float = 1.0) -> torch.Tensor:
    """Scale a raw (..., l, 2k/l) matrix onto the power shell and emit symbols.

    The output block X of k complex symbols satisfies ||X||^2 = k * power
    exactly, the per-block form of the average power constraint.
    """
    if raw.ndim < 2:
        raise DimensionError(f"expected (..., l, w) matrix, got {tuple(raw.shape)}")
    if not torch.isfinite(raw).all():
        raise DegenerateInput("raw symbol matrix contains non-finite values")
    k = raw.shape[-2] * raw.shape[-1] // 2
    total = raw.square().sum(dim=(-2, -1), keepdim=True)
    if (total == 0).any():
        raise DegenerateInput("cannot power-normalize an all-zero symbol matrix")
    scaled = raw * torch.sqrt(k * power / total)
    return real_to_symbols(scaled)


def _complex_gaussian(shape, var: float, gen: torch.Generator, dtype: torch.dtype):
    """CN(0, var) samples: independent N(0, var/2) real and imaginary parts."""
    parts = torch.randn(tuple(shape) + (2,), generator=gen, dtype=dtype)
    return torch.view_as_complex(parts * math.sqrt(var / 2.0))


def sample_fading(cfg: ChannelConfig, shape, *, gen: torch.Generator,
                  dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Draw per-image fading coefficients h ~ CN(0, fading_var).

    One coefficient per image, held constant across the blocks of a session.
    For the non-fading forward channel this returns ones.
    """
    if cfg.forward == "awgn":
        return torch.ones(tuple(shape), dtype=_complex_dtype(dtype))
    return _complex_gaussian(shape, cfg.fading_var, gen, dtype)


def forward_channel(x: torch.Tensor, cfg: ChannelConfig, *, gen: torch.Generator,
                    h=None, snr_db=None) -> torch.Tensor:
    """Transmit symbols over the forward link: Y = h X + W.

    h defaults to 1 (non-fading).  snr_db may be a scalar or a tensor
    broadcastable against the leading (batch) dimensions of x, enabling a
    per-image noise level inside one batched call.
    """
    if torch.is_complex(x) is False:
        raise DimensionError("forward_channel expects complex symbols")
    y = x if h is None else h * x
    if cfg.noiseless:
        return y
    if snr_db is None or isinstance(snr_db, (int, float)):
        var = cfg.noise_var(snr_db)
        noise = _complex_gaussian(x.shape, var, gen, x.real.dtype)
    else:
        snr = torch.as_tensor(snr_db, dtype=x.real.dtype)
        ref = cfg.fading_var if cfg.forward == "rayleigh" else 1.0
        std = torch.sqrt(ref * torch.pow(10.0, -snr / 10.0) / 2.0)
        std = std.reshape(std.shape + (1,) * (x.ndim - std.ndim))
        parts = torch.randn(x.shape + (2,), generator=gen, dtype=x.real.dtype)
        noise = torch.view_as_complex(parts * std.unsqueeze(-1))
    return y + noise


def feedback_channel(y: torch.Tensor, cfg: ChannelConfig, *,
                     gen: torch.Generator) -> torch.Tensor:
    """Return the transmitter's view of the channel output.

    Perfect feedback passes y through untouched; noisy feedback adds an
    independent CN(0, sigma_f^2) term per symbol.
    """
    if cfg.feedback == "perfect":
        return y
    noise = _complex_gaussian(y.shape, cfg.feedback_noise_var, gen, y.real.dtype)
    return y + noise
