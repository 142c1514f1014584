"""Deterministic CSV/manifest emission and figure rendering for reports.

CSV bodies use '.' decimals and the shortest round-trip representation of
each float (17 significant digits when needed), with a mandatory header row,
so identical runs produce byte-identical files.  Figures are rendered to
files next to the delimited output; matplotlib is imported lazily so the
data path stays import-light.
"""

from __future__ import annotations

import io
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


def format_value(value) -> str:
    """Shortest round-trip text for one CSV cell."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(format_value(v) for v in row) + "\n")
    return buf.getvalue()


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(csv_text(header, rows), encoding="ascii")
    return path


def write_manifest(output_path, payload: dict) -> Path:
    """Write the run manifest next to the main output file."""
    path = Path(str(output_path) + ".manifest.json")
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="ascii")
    return path


def _figure_path(output_path) -> Path:
    out = Path(output_path)
    return out.with_suffix(".png") if out.suffix else out.parent / (out.name + ".png")


def render_error_curves(rows, output_path) -> Path:
    """Plot truncation error over time, one curve per retained degree."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    by_key: dict[tuple[int, int], list[tuple[float, float]]] = {}
    for t, n, comp, value in rows:
        by_key.setdefault((int(comp), int(n)), []).append((float(t), float(value)))
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    for (comp, n), pts in sorted(by_key.items()):
        pts.sort()
        ts, vs = zip(*pts)
        label = f"n = {n}" if len({c for c, _ in by_key}) == 1 else f"state {comp}, n = {n}"
        ax.plot(ts, vs, label=label)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("truncation error")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    path = _figure_path(output_path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_input_uncertainty(stages, means, stds, active_window, dt, output_path) -> Path:
    """Plot the optimal input's mean with a 6-sigma band over the horizon."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    stages = np.asarray(stages, dtype=float)
    means = np.asarray(means, dtype=float)
    stds = np.asarray(stds, dtype=float)
    times = stages * dt
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    ax.fill_between(times, means - 3 * stds, means + 3 * stds,
                    alpha=0.3, label="6-sigma interval")
    ax.plot(times, means, label="expected input")
    if active_window:
        ax.axvspan(min(active_window) * dt, max(active_window) * dt,
                   color="0.8", alpha=0.5, label="state constraint active")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("input")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    path = _figure_path(output_path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
