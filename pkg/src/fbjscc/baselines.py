"""Classical reference curves: capacity, separation bound, feedback rate region.

The AWGN capacity is log2(1 + SNR) bits per complex channel use.  The
digital separation baseline pairs an external still-image codec with a
capacity-achieving channel code: a picture compressed to B bits needs
B / log2(1 + SNR) channel uses, so every codec quality level yields one
(bandwidth ratio, PSNR) point and the baseline is their upper envelope.

The two-receiver feedback rate region is traced by a power split
alpha in [0, 1].  With noise variances s1, s2 and the harmonic term
h = s1 s2 / (s1 + s2), one boundary curve is

    R1 = 1/2 log2(1 + alpha P / h)
    R2 = 1/2 log2(1 + (1 - alpha) P / (alpha P + s2))

and the second swaps the receivers' roles.  Rates are in bits per real
channel use.  The achievable region is the intersection of the two curves'
lower-left envelopes; its convex hull is what gets plotted.
"""

import math
import os
import subprocess
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, FormatError, HookMissing

CODEC_HOOK_ENV = "FBJSCC_CODEC_HOOK"


def awgn_capacity(snr_db: float) -> float:
    """Bits per complex channel use at the given SNR."""
    if not math.isfinite(snr_db):
        raise DomainError(f"snr_db must be finite, got {snr_db}")
    return math.log2(1.0 + 10.0 ** (snr_db / 10.0))


@dataclass(frozen=True)
class RateRegionPoint:
    """One (R1, R2) pair in bits per real channel use."""

    r1: float
    r2: float


def _half_log2(x: float) -> float:
    return 0.5 * math.log2(1.0 + x)


def region_curves(snr1_db: float, snr2_db: float, power: float = 1.0,
                  steps: int = 201):
    """Sample both boundary curves over an alpha grid.

    Returns (alphas, curve1, curve2) where each curve is a list of
    RateRegionPoint.  Curve 1 favors receiver 1 as alpha grows; curve 2 is
    its mirror image.
    """
    if power <= 0:
        raise DomainError(f"power must be positive, got {power}")
    if steps < 2:
        raise DomainError(f"need at least 2 alpha samples, got {steps}")
    s1 = power / 10.0 ** (snr1_db / 10.0)
    s2 = power / 10.0 ** (snr2_db / 10.0)
    harmonic = s1 * s2 / (s1 + s2)
    alphas = np.linspace(0.0, 1.0, steps)
    curve1, curve2 = [], []
    for a in alphas:
        curve1.append(
            RateRegionPoint(
                r1=_half_log2(a * power / harmonic),
                r2=_half_log2((1.0 - a) * power / (a * power + s2)),
            )
        )
        curve2.append(
            RateRegionPoint(
                r1=_half_log2((1.0 - a) * power / (a * power + s1)),
                r2=_half_log2(a * power / harmonic),
            )
        )
    return alphas, curve1, curve2


def _frontier(points) -> tuple[np.ndarray, np.ndarray]:
    """Sorted (r1, r2) arrays forming a non-increasing frontier in r1."""
    r1 = np.array([p.r1 for p in points])
    r2 = np.array([p.r2 for p in points])
    order = np.argsort(r1)
    return r1[order], r2[order]


def broadcast_feedback_region(snr1_db: float, snr2_db: float, power: float = 1.0,
                              steps: int = 201) -> dict:
    """Achievable (R1, R2) region of the two curves' intersection.

    Returns a dict with the raw curves, the intersected boundary sampled on
    the merged R1 grid, and the convex hull of the region (boundary points
    plus axis intercepts).
    """
    alphas, curve1, curve2 = region_curves(snr1_db, snr2_db, power, steps)
    x1, y1 = _frontier(curve1)
    x2, y2 = _frontier(curve2)
    grid = np.unique(np.concatenate([x1, x2]))
    top = np.minimum(
        _interp_frontier(grid, x1, y1), _interp_frontier(grid, x2, y2)
    )
    boundary = [RateRegionPoint(float(x), float(y)) for x, y in zip(grid, top)]
    corner_points = [(0.0, 0.0), (float(grid[-1]), 0.0), (0.0, float(top[0]))]
    hull_input = [(p.r1, p.r2) for p in boundary] + corner_points
    hull = [RateRegionPoint(x, y) for x, y in convex_hull(hull_input)]
    return {
        "alphas": alphas,
        "curve1": curve1,
        "curve2": curve2,
        "boundary": boundary,
        "hull": hull,
    }


def _interp_frontier(grid: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Frontier height at each grid point; beyond the curve's reach it is 0."""
    out = np.interp(grid, x, y, left=y[0], right=0.0)
    out[grid > x[-1]] = 0.0
    return out


def convex_hull(points) -> list[tuple[float, float]]:
    """Convex hull (counter-clockwise, monotone chain).

    Deterministic and happy with collinear/degenerate inputs, which the
    symmetric rate region produces; hull vertices are a subset of the
    input points.
    """
    pts = sorted(set((float(x), float(y)) for x, y in points))
    if len(pts) <= 2:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def hull_contains(hull, point, tol: float = 1e-9) -> bool:
    """Point-in-convex-polygon test for a counter-clockwise hull."""
    if len(hull) < 3:
        return any(
            abs(point[0] - h[0]) <= tol and abs(point[1] - h[1]) <= tol for h in hull
        )
    for i in range(len(hull)):
        ax, ay = hull[i][0], hull[i][1]
        bx, by = hull[(i + 1) % len(hull)][0], hull[(i + 1) % len(hull)][1]
        if (bx - ax) * (point[1] - ay) - (by - ay) * (point[0] - ax) < -tol:
            return False
    return True


def bpg_capacity_bound(image, snr_db: float, codec_hook, source_dim: int):
    """Digital separation baseline for one image.

    codec_hook(image) must return (bits, psnr) pairs, one per quality
    level, for an external still-image codec.  Each level is mapped to a
    bandwidth ratio via capacity: uses = bits / log2(1 + SNR), ratio =
    uses / source_dim.  Returns the upper envelope as a sorted list of
    (bandwidth_ratio, psnr) tuples: strictly increasing in both
    coordinates, dominated levels dropped.
    """
    if codec_hook is None:
        raise HookMissing("separation baseline requires an external codec hook")
    if source_dim < 1:
        raise DomainError(f"source_dim must be positive, got {source_dim}")
    capacity = awgn_capacity(snr_db)
    if capacity <= 0:
        raise DomainError(f"capacity is non-positive at {snr_db} dB")
    levels = list(codec_hook(image))
    if not levels:
        raise HookMissing("codec hook produced no quality levels")
    points = sorted(
        (bits / capacity / source_dim, quality) for bits, quality in levels
    )
    envelope = []
    for ratio, quality in points:
        if envelope and quality <= envelope[-1][1]:
            continue  # dominated: more bandwidth without better quality
        if envelope and ratio == envelope[-1][0]:
            envelope[-1] = (ratio, quality)
        else:
            envelope.append((ratio, quality))
    return envelope


def external_codec_hook(path: str | None = None, qualities=tuple(range(1, 52))):
    """Wrap an external still-image codec executable as a codec hook.

    The executable is called once per quality level as

        <exe> <image.png> <quality>

    and must print "<bits> <psnr>" to stdout.  Falls back to the
    FBJSCC_CODEC_HOOK environment variable when no path is given.
    """
    path = path or os.environ.get(CODEC_HOOK_ENV)
    if not path:
        raise HookMissing(
            f"no codec hook configured (set {CODEC_HOOK_ENV} or pass a path)"
        )
    if not os.path.isfile(path):
        raise HookMissing(f"codec hook {path!r} does not exist")

    def hook(image):
        from PIL import Image

        arr = (np.asarray(image.detach().cpu() if hasattr(image, "detach") else image)
               .clip(0.0, 1.0) * 255.0).round().astype(np.uint8)
        levels = []
        with tempfile.TemporaryDirectory() as tmp:
            png = os.path.join(tmp, "source.png")
            Image.fromarray(arr).save(png)
            for q in qualities:
                out = subprocess.run(
                    [path, png, str(q)], capture_output=True, text=True, check=True
                ).stdout.split()
                if len(out) < 2:
                    raise FormatError(
                        f"codec hook output {out!r} is not '<bits> <psnr>'"
                    )
                levels.append((float(out[0]), float(out[1])))
        return levels

    return hook
