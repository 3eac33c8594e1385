"""Image <-> token-sequence conversion and dataset loading.

An image is an (h, w, 3) float tensor with pixel values in [0, 1].  The
transmitter works on a sequence of l = p*p patch tokens, each a flattened
(h/p, w/p, 3) pixel block, so a whole image becomes an (l, c) matrix with
c = 3*h*w / p**2.  Patch r of the p-by-p grid maps to token row r in
row-major grid order, and the pixels inside a patch are flattened in
row-major (row, column, channel) order.
"""

import os
from dataclasses import dataclass

import numpy as np
import torch

from .errors import DegenerateInput, DimensionError, FormatError
from .seeding import generator

CIFAR10_RECORD_BYTES = 3073  # 1 label byte + 3 * 32 * 32 pixel bytes
CIFAR10_SIDE = 32


@dataclass(frozen=True)
class PatchSpec:
    """Partition of an (height, width, 3) image into a p-by-p patch grid."""

    patch: int
    height: int
    width: int

    def __post_init__(self):
        if self.patch < 1:
            raise DimensionError(f"patch grid side must be >= 1, got {self.patch}")
        if self.height < 1 or self.width < 1:
            raise DimensionError(
                f"image size must be positive, got {self.height}x{self.width}"
            )
        if self.height % self.patch or self.width % self.patch:
            raise DimensionError(
                f"patch grid {self.patch}x{self.patch} does not divide "
                f"image size {self.height}x{self.width}"
            )

    @property
    def tokens(self) -> int:
        """Sequence length l = p**2."""
        return self.patch * self.patch

    @property
    def token_dim(self) -> int:
        """Per-token feature width c = 3hw / p**2."""
        return 3 * self.height * self.width // self.tokens

    @property
    def patch_height(self) -> int:
        return self.height // self.patch

    @property
    def patch_width(self) -> int:
        return self.width // self.patch


def _check_image_tail(x: torch.Tensor, spec: PatchSpec) -> None:
    if x.ndim < 3 or x.shape[-1] != 3:
        raise DimensionError(f"expected (..., h, w, 3) image tensor, got {tuple(x.shape)}")
    if x.shape[-3] != spec.height or x.shape[-2] != spec.width:
        raise DimensionError(
            f"image is {x.shape[-3]}x{x.shape[-2]}, spec expects "
            f"{spec.height}x{spec.width}"
        )


def patchify(image: torch.Tensor, spec: PatchSpec) -> torch.Tensor:
    """Convert (..., h, w, 3) pixels to an (..., l, c) token matrix."""
    _check_image_tail(image, spec)
    p, ph, pw = spec.patch, spec.patch_height, spec.patch_width
    lead = image.shape[:-3]
    x = image.reshape(lead + (p, ph, p, pw, 3))
    # (..., grid_row, in_row, grid_col, in_col, ch) -> grid-major token order
    x = x.permute(tuple(range(len(lead))) + tuple(i + len(lead) for i in (0, 2, 1, 3, 4)))
    return x.reshape(lead + (spec.tokens, spec.token_dim))


def unpatchify(tokens: torch.Tensor, spec: PatchSpec) -> torch.Tensor:
    """Invert patchify: (..., l, c) tokens back to (..., h, w, 3) pixels."""
    if tokens.ndim < 2 or tokens.shape[-2] != spec.tokens or tokens.shape[-1] != spec.token_dim:
        raise DimensionError(
            f"expected (..., {spec.tokens}, {spec.token_dim}) token matrix, "
            f"got {tuple(tokens.shape)}"
        )
    p, ph, pw = spec.patch, spec.patch_height, spec.patch_width
    lead = tokens.shape[:-2]
    x = tokens.reshape(lead + (p, p, ph, pw, 3))
    x = x.permute(tuple(range(len(lead))) + tuple(i + len(lead) for i in (0, 2, 1, 3, 4)))
    return x.reshape(lead + (spec.height, spec.width, 3))


def load_cifar10_binary(path: str) -> torch.Tensor:
    """Load a CIFAR-10 binary batch file (or a directory of them).

    Each record is 3073 bytes: one label byte followed by 3072 pixel bytes
    in channel-major (R plane, G plane, B plane) row-major order.  Labels
    are discarded; pixels are scaled to [0, 1].  A directory argument loads
    every *.bin file in lexicographic order and concatenates them.
    """
    if os.path.isdir(path):
        files = sorted(
            os.path.join(path, f) for f in os.listdir(path) if f.endswith(".bin")
        )
        if not files:
            raise FormatError(f"no .bin files found in directory {path!r}")
        return torch.cat([load_cifar10_binary(f) for f in files], dim=0)
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) == 0 or len(raw) % CIFAR10_RECORD_BYTES:
        raise FormatError(
            f"{path!r}: size {len(raw)} is not a positive multiple of "
            f"{CIFAR10_RECORD_BYTES}-byte CIFAR-10 records"
        )
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR10_RECORD_BYTES)
    pixels = records[:, 1:].reshape(-1, 3, CIFAR10_SIDE, CIFAR10_SIDE)
    images = np.transpose(pixels, (0, 2, 3, 1)).astype(np.float32) / 255.0
    return torch.from_numpy(images)


def load_image_folder(path: str) -> torch.Tensor:
    """Load every PNG in a directory (lexicographic order) as one dataset.

    All images must share the same size.
    """
    from PIL import Image

    if not os.path.isdir(path):
        raise FormatError(f"{path!r} is not a directory")
    names = sorted(f for f in os.listdir(path) if f.lower().endswith(".png"))
    if not names:
        raise FormatError(f"no .png files found in {path!r}")
    arrays = []
    size = None
    for name in names:
        with Image.open(os.path.join(path, name)) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
        if size is None:
            size = arr.shape
        elif arr.shape != size:
            raise FormatError(
                f"{name!r} has size {arr.shape[:2]}, expected {size[:2]}"
            )
        arrays.append(arr)
    return torch.from_numpy(np.stack(arrays, axis=0))


def synthetic_dataset(count: int, size: int, seed: int) -> torch.Tensor:
    """Seeded uniform-noise images, (count, size, size, 3) in [0, 1)."""
    if count < 1 or size < 1:
        raise DimensionError(f"count and size must be positive, got {count}, {size}")
    return torch.rand((count, size, size, 3), generator=generator(seed))


def load_dataset(path, fmt: str, **params) -> torch.Tensor:
    """Dispatch over the supported dataset formats.

    fmt is one of "cifar10-binary", "image-folder", "synthetic".  The
    synthetic format ignores `path` and takes count/size/seed keywords.
    """
    if fmt == "cifar10-binary":
        return load_cifar10_binary(path)
    if fmt == "image-folder":
        return load_image_folder(path)
    if fmt == "synthetic":
        return synthetic_dataset(**params)
    raise FormatError(f"unknown dataset format {fmt!r}")


def split_train_val(dataset: torch.Tensor, val_fraction: float, seed: int):
    """Deterministic shuffled train/validation split.

    Returns (train, val).  With val_fraction > 0 at least one image goes to
    each side, which requires a dataset of two or more images.
    """
    n = dataset.shape[0]
    if not 0.0 <= val_fraction < 1.0:
        raise DegenerateInput(f"val_fraction must be in [0, 1), got {val_fraction}")
    if val_fraction == 0.0:
        return dataset, dataset[:0]
    if n < 2:
        raise DegenerateInput(f"cannot split {n} image(s) into train and val")
    n_val = min(n - 1, max(1, int(round(n * val_fraction))))
    order = torch.randperm(n, generator=generator(seed))
    return dataset[order[n_val:]], dataset[order[:n_val]]
