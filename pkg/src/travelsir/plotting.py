"""Long-format merging of trajectory tables and two-wave panel figures."""

from __future__ import annotations

import io
from pathlib import Path
from typing import Iterable, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .fileio import atomic_write_bytes, csv_text, read_csv  # noqa: E402

LONG_COLUMNS = ("t", "series", "value", "run_id")
DEFAULT_SERIES = ("I1", "I2", "R1", "R2")


def long_rows(paths: Sequence[str | Path], series: Iterable[str] = DEFAULT_SERIES,
              run_ids: Sequence[str] | None = None) -> list[tuple]:
    """Melt trajectory CSVs into ``(t, series, value, run_id)`` rows."""
    series = tuple(series)
    run_ids = run_ids or [Path(p).parent.name or Path(p).stem for p in paths]
    if len(set(run_ids)) != len(run_ids):
        run_ids = [f"{rid}_{k}" for k, rid in enumerate(run_ids)]
    out = []
    for path, rid in zip(paths, run_ids):
        header, rows = read_csv(path)
        missing = [s for s in series if s not in header]
        if missing or "t" not in header:
            raise ValueError(f"{path}: missing columns {missing or ['t']}")
        ti = header.index("t")
        cols = [(s, header.index(s)) for s in series]
        for row in rows:
            for name, k in cols:
                out.append((float(row[ti]), name, float(row[k]), rid))
    return out


def long_csv(rows: Sequence[tuple]) -> str:
    return csv_text(LONG_COLUMNS, rows)


def render_panels(rows: Sequence[tuple], path: str | Path, scale: float | None = None,
                  title: str | None = None) -> Path:
    """One panel per series, one line per run; values divided by ``scale`` when given."""
    series = list(dict.fromkeys(r[1] for r in rows))
    runs = list(dict.fromkeys(r[3] for r in rows))
    fig, axes = plt.subplots(1, len(series), figsize=(3.2 * len(series), 2.8), sharex=True, squeeze=False)
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for ax, name in zip(axes[0], series):
        for k, rid in enumerate(runs):
            pts = [(r[0], r[2]) for r in rows if r[1] == name and r[3] == rid]
            if not pts:
                continue
            t, v = zip(*pts)
            if scale:
                v = [x / scale for x in v]
            ax.plot(t, v, lw=1.2, color=colors[k % len(colors)], label=rid)
        ax.set_title(name)
        ax.set_xlabel("t")
        ax.spines[["top", "right"]].set_visible(False)
    axes[0][0].set_ylabel("fraction" if scale else "count")
    if len(runs) <= 8:
        axes[0][-1].legend(frameon=False, fontsize=7)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=120)
    plt.close(fig)
    return atomic_write_bytes(path, buf.getvalue())
