"""Reconstruction quality metrics: MSE, PSNR and a pluggable LPIPS.

PSNR follows the pixel-domain convention
    PSNR = 10 log10(max^2 / MSE),  MSE = ||S - S_hat||^2 / (3 h w)
with max = 1 for unit-range images.  LPIPS is the weighted per-layer
feature distance
    sum_l (1 / (H_l W_l)) sum_{h,w} || w_l * (y_l - y_hat_l) ||^2
computed against an injected feature extractor; the package ships no
pretrained perceptual weights of its own.
"""

import importlib.util
import math
import os

import torch

from .errors import PluginMissing, ShapeError

LPIPS_PLUGIN_ENV = "FBJSCC_LPIPS_PLUGIN"


def _check_pair(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def mse(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean squared error over every entry (averages the trailing image dims)."""
    _check_pair(a, b)
    return (a - b).square().mean()


def image_mse(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Per-image MSE for batched (..., h, w, 3) tensors; keeps leading dims."""
    _check_pair(a, b)
    return (a - b).square().mean(dim=(-3, -2, -1))


def psnr(a: torch.Tensor, b: torch.Tensor, max_value: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs give math.inf."""
    err = float(mse(a, b))
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(max_value * max_value / err)


def psnr_per_image(a: torch.Tensor, b: torch.Tensor,
                   max_value: float = 1.0) -> torch.Tensor:
    """Batched PSNR; zero-error images map to +inf."""
    err = image_mse(a, b)
    out = torch.full_like(err, math.inf)
    nz = err > 0
    out[nz] = 10.0 * torch.log10(max_value * max_value / err[nz])
    return out


def identity_extractor(image: torch.Tensor):
    """Trivial single-layer extractor: features are the pixels, weights one."""
    return [(image, torch.ones(image.shape[-1], dtype=image.dtype))]


def lpips(a: torch.Tensor, b: torch.Tensor, extractor) -> torch.Tensor:
    """Weighted feature-space distance between two images.

    `extractor` maps an (h, w, 3) image to a list of
    (features (H_l, W_l, C_l), weights (C_l,)) pairs.  Passing None raises
    PluginMissing so callers can fall back explicitly.
    """
    if extractor is None:
        raise PluginMissing("lpips requires a feature extractor plugin")
    _check_pair(a, b)
    total = None
    for (fa, wa), (fb, _) in zip(extractor(a), extractor(b)):
        if fa.shape != fb.shape:
            raise ShapeError(
                f"extractor produced mismatched layers: {tuple(fa.shape)} vs {tuple(fb.shape)}"
            )
        diff = wa * (fa - fb)
        layer = diff.square().sum() / (fa.shape[-3] * fa.shape[-2])
        total = layer if total is None else total + layer
    if total is None:
        raise PluginMissing("feature extractor produced no layers")
    return total


def load_lpips_extractor(path: str | None = None):
    """Load a feature-extractor plugin from a Python file.

    The file must define make_extractor() returning a callable with the
    extractor contract above.  Falls back to the FBJSCC_LPIPS_PLUGIN
    environment variable when no path is given.
    """
    path = path or os.environ.get(LPIPS_PLUGIN_ENV)
    if not path:
        raise PluginMissing(
            f"no LPIPS plugin configured (set {LPIPS_PLUGIN_ENV} or pass a path)"
        )
    if not os.path.isfile(path):
        raise PluginMissing(f"LPIPS plugin file {path!r} does not exist")
    spec = importlib.util.spec_from_file_location("fbjscc_lpips_plugin", path)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    if not hasattr(module, "make_extractor"):
        raise PluginMissing(f"plugin {path!r} defines no make_extractor()")
    return module.make_extractor()
