"""Figure output for the CLI report path."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

GNUPLOT_TEMPLATE = """\
set datafile separator ","
set key top left
set logscale xy
set xlabel "t"
set ylabel "mean pseudo-regret"
set terminal pngcairo size 800,600
set output "{png}"
plot "{csv}" every ::1 using 1:2:3 with yerrorlines title "{title}"
"""


def write_gnuplot_script(csv_name: str, path: Path, title: str = "regret") -> Path:
    path = Path(path)
    png = path.with_suffix(".gnuplot.png").name
    path.write_text(GNUPLOT_TEMPLATE.format(csv=csv_name, png=png, title=title))
    return path


def plot_regret(series, path: Path, title: str = "", bounds=None) -> Path:
    """Log-log regret curve with a +-2 SE band and optional bound lines."""
    path = Path(path)
    ts = [c[0] for c in series.checkpoints]
    mean = [c[1] for c in series.checkpoints]
    se = [c[2] for c in series.checkpoints]
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    ax.plot(ts, mean, marker="o", ms=3, label="mean regret")
    lo = [max(m - 2 * s, 1e-12) for m, s in zip(mean, se)]
    hi = [m + 2 * s for m, s in zip(mean, se)]
    ax.fill_between(ts, lo, hi, alpha=0.25, label="+-2 SE")
    for name, values in (bounds or {}).items():
        ax.plot(ts, values, ls="--", lw=1, label=name)
    if ts and min(ts) > 0 and min(mean) > 0:
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_xlabel("t")
    ax.set_ylabel("pseudo-regret")
    if title:
        ax.set_title(title)
    ax.legend(loc="upper left", fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path
