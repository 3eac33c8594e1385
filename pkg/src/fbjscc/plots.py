"""Result plotting: quality curves and the feedback rate region."""

import csv

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .errors import FormatError

PLOT_KINDS = ("psnr_vs_snr", "psnr_vs_r", "psnr_vs_m", "region")


def read_csv_rows(path: str) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return rows


def _series(rows, key):
    values = sorted({row.get(key, "") for row in rows})
    return [(v, [r for r in rows if r.get(key, "") == v]) for v in values]


def _line_plot(rows, x_key, out_path, *, xlabel, series_key):
    if not rows:
        raise FormatError("result table is empty, nothing to plot")
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, group in _series(rows, series_key):
        group = sorted(group, key=lambda r: float(r[x_key]))
        xs = [float(r[x_key]) for r in group]
        ys = [float(r["psnr_mean"]) for r in group]
        name = f"{series_key}={label}" if label != "" else "psnr"
        ax.plot(xs, ys, marker="o", label=name)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("PSNR (dB)")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def plot_results(rows: list[dict], kind: str, out_path: str) -> None:
    """Draw one of the standard result plots to a PNG."""
    if kind == "psnr_vs_snr":
        _line_plot(rows, "snr_db", out_path, xlabel="channel SNR (dB)",
                   series_key="feedback_snr_db")
    elif kind == "psnr_vs_r":
        _line_plot(rows, "bandwidth_ratio", out_path, xlabel="bandwidth ratio R",
                   series_key="snr_db")
    elif kind == "psnr_vs_m":
        _line_plot(rows, "blocks", out_path, xlabel="feedback blocks m",
                   series_key="snr_db")
    elif kind == "region":
        plot_region_rows(rows, out_path)
    else:
        raise FormatError(f"unknown plot kind {kind!r}")


def plot_region_rows(rows: list[dict], out_path: str) -> None:
    """Rate-region plot from rows with kind/r1/r2 columns."""
    if not rows:
        raise FormatError("region table is empty, nothing to plot")
    fig, ax = plt.subplots(figsize=(5, 5))
    styles = {
        "curve1": dict(linestyle="--", alpha=0.6, label="curve 1"),
        "curve2": dict(linestyle=":", alpha=0.6, label="curve 2"),
        "boundary": dict(linewidth=2, label="region boundary"),
    }
    for kind, style in styles.items():
        pts = [(float(r["r1"]), float(r["r2"])) for r in rows if r["kind"] == kind]
        if pts:
            ax.plot(*zip(*pts), **style)
    hull = [(float(r["r1"]), float(r["r2"])) for r in rows if r["kind"] == "hull"]
    if hull:
        closed = hull + hull[:1]
        ax.plot(*zip(*closed), linewidth=1, color="gray", label="convex hull")
    ax.set_xlabel("R1 (bits / real use)")
    ax.set_ylabel("R2 (bits / real use)")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def write_region_csv(path: str, region: dict) -> None:
    """Flatten a broadcast_feedback_region result into one CSV."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "r1", "r2"])
        for kind in ("curve1", "curve2", "boundary", "hull"):
            for p in region[kind]:
                writer.writerow([kind, f"{p.r1:.10f}", f"{p.r2:.10f}"])
