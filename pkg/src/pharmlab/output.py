"""Deterministic CSV, provenance and plot-script emission."""

from __future__ import annotations

import csv
import io
import json
import platform
from pathlib import Path

import numpy as np


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if isinstance(v, (np.ndarray, list, tuple)):
        return " ".join(_cell(x) for x in np.asarray(v).reshape(-1).tolist())
    return "" if v is None else str(v)


def csv_text(rows: list[dict]) -> str:
    """Rows to CSV text; columns in first-seen order, floats as ``.17g``."""
    cols: list[str] = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in cols])
    return buf.getvalue()


def write_csv(path: Path, rows: list[dict]) -> Path:
    path.write_text(csv_text(rows))
    return path


def versions() -> dict:
    import scipy
    import sklearn

    from . import __version__

    return {"pharmlab": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "scikit-learn": sklearn.__version__}


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if np.isfinite(f) else str(f)
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    return v


def write_provenance(path: Path, record: dict) -> Path:
    path.write_text(json.dumps(_jsonable(record), indent=2, sort_keys=True) + "\n")
    return path


PLOT_TEMPLATE = '''"""Plot {csv_name} (generated by pharmlab; needs matplotlib)."""
import csv
import sys

import matplotlib.pyplot as plt

COORDS = {coords!r}
VALUES = {values!r}

with open({csv_name!r}) as fh:
    rows = list(csv.DictReader(fh))
if not rows:
    sys.exit("no rows")
fig, axes = plt.subplots(1, len(VALUES), figsize=(4.5 * len(VALUES), 4), squeeze=False)
for ax, col in zip(axes[0], VALUES):
    v = [float(r[col]) for r in rows]
    if len(COORDS) >= 2:
        x = [float(r[COORDS[0]]) for r in rows]
        y = [float(r[COORDS[1]]) for r in rows]
        sc = ax.scatter(x, y, c=v, marker="s", s=30, cmap="viridis")
        fig.colorbar(sc, ax=ax)
        ax.set_aspect("equal")
    elif COORDS:
        ax.plot([float(r[COORDS[0]]) for r in rows], v, ".-")
    else:
        ax.plot(v, ".-")
    ax.set_title(col)
fig.tight_layout()
fig.savefig({png_name!r}, dpi=120)
'''


def write_plot_script(path: Path, csv_name: str, coords: list[str], values: list[str]) -> Path:
    png = Path(csv_name).with_suffix(".png").name
    path.write_text(PLOT_TEMPLATE.format(csv_name=csv_name, coords=coords, values=values, png_name=png))
    return path
