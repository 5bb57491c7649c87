"""Serialisation of run artefacts: JSON bundles, CSV exports and SVG charts."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import platform
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from . import __version__
from .errors import BadBundle

REPORT_SCHEMA = "satlens.report/v1"
CHECKPOINT_SCHEMA = "satlens.checkpoint/v1"
EXPERIMENT_SCHEMA = "satlens.experiment/v1"

SATURATION_COLUMNS = ("epoch", "layer", "width", "k", "saturation", "explained")
SWEEP_COLUMNS = ("delta", "n", "mu_diff", "sigma", "t", "p", "status", "sum_dim", "rel_perf")
PROBE_COLUMNS = ("index", "layer", "width", "k", "saturation", "probe_accuracy",
                 "probe_train_accuracy", "receptive_field", "in_tail")


def clean(obj):
    """Recursively convert numpy values to plain Python and non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        obj = float(obj)
        return obj if math.isfinite(obj) else None
    return obj


def canonical_json(obj) -> str:
    return json.dumps(clean(obj), sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


def run_metadata(config: dict, seed: int) -> dict:
    return {
        "seed": seed,
        "config_hash": config_hash(config),
        "versions": {"satlens": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
    }


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(clean(obj), indent=2, sort_keys=True) + "\n")


def read_json(path, schema: str | None = None) -> dict:
    """Load a JSON artefact, raising BadBundle on missing, corrupt or mismatched files."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise BadBundle(f"{path} does not exist") from exc
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise BadBundle(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise BadBundle(f"{path} does not hold a JSON object")
    if schema is not None and data.get("schema") != schema:
        raise BadBundle(f"{path} has schema {data.get('schema')!r}, expected {schema!r}")
    return data


# -- CSV -------------------------------------------------------------------------

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return "nan" if not math.isfinite(value) else f"{float(value):.10g}"
    return str(value)


def _csv(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def saturation_csv(reports) -> str:
    rows = []
    for r in reports:
        for i, name in enumerate(r.layers):
            rows.append({"epoch": r.epoch, "layer": name, "width": r.widths[i], "k": r.ks[i],
                         "saturation": r.saturations[i],
                         "explained": r.explained[i] if r.explained else None})
    return _csv(SATURATION_COLUMNS, rows)


def sweep_csv(rows: list[dict]) -> str:
    return _csv(SWEEP_COLUMNS, rows)


def probe_csv(rows: list[dict]) -> str:
    return _csv(PROBE_COLUMNS, rows)


# -- SVG chart ---------------------------------------------------------------------

CHART_WIDTH = 800
CHART_HEIGHT = 400
_MARGIN = {"left": 60, "right": 20, "top": 30, "bottom": 70}


def chart_svg(layers: list[str], saturations: list[float], probes: list[float] | None = None,
              tails=(), marker: int | None = None, title: str = "") -> str:
    """Bar chart of saturation per layer with an optional probe-accuracy line.

    Tails are shaded behind the bars and the receptive-field marker is a
    vertical rule on the left edge of the first layer whose receptive field
    exceeds the input. Element classes: ``bar``, ``probe``, ``tail``,
    ``rf-marker``; the canvas always uses a fixed viewBox.
    """
    n = len(layers)
    left, top = _MARGIN["left"], _MARGIN["top"]
    plot_w = CHART_WIDTH - left - _MARGIN["right"]
    plot_h = CHART_HEIGHT - top - _MARGIN["bottom"]
    slot = plot_w / max(n, 1)
    bar_w = slot * 0.7

    def y(v: float) -> float:
        return top + plot_h * (1.0 - v)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {CHART_WIDTH} {CHART_HEIGHT}" '
        f'width="{CHART_WIDTH}" height="{CHART_HEIGHT}">',
        f'<rect class="background" x="0" y="0" width="{CHART_WIDTH}" height="{CHART_HEIGHT}" fill="white"/>',
        f'<text class="title" x="{CHART_WIDTH / 2:.1f}" y="18" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{escape(title)}</text>',
    ]
    for t in tails:
        x0 = left + t.start * slot
        out.append(f'<rect class="tail" data-start="{t.start}" data-end="{t.end}" x="{x0:.2f}" '
                   f'y="{top}" width="{(t.end - t.start + 1) * slot:.2f}" height="{plot_h:.2f}" '
                   f'fill="#f4c7c3" opacity="0.6"/>')
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        out.append(f'<line class="grid" x1="{left}" x2="{left + plot_w}" y1="{y(tick):.2f}" '
                   f'y2="{y(tick):.2f}" stroke="#dddddd"/>')
        out.append(f'<text class="tick" x="{left - 6}" y="{y(tick) + 4:.2f}" text-anchor="end" '
                   f'font-family="sans-serif" font-size="11">{tick:.2f}</text>')
    for i, (name, s) in enumerate(zip(layers, saturations)):
        x0 = left + i * slot + (slot - bar_w) / 2
        out.append(f'<rect class="bar" data-layer="{escape(name)}" data-value="{s:.6f}" '
                   f'x="{x0:.2f}" y="{y(s):.2f}" width="{bar_w:.2f}" height="{plot_h * s:.2f}" '
                   f'fill="#4c72b0"/>')
        cx = left + (i + 0.5) * slot
        out.append(f'<text class="label" x="{cx:.2f}" y="{top + plot_h + 14}" '
                   f'transform="rotate(45 {cx:.2f} {top + plot_h + 14})" font-family="sans-serif" '
                   f'font-size="10">{escape(name)}</text>')
    if probes is not None and len(probes):
        pts = " ".join(f"{left + (i + 0.5) * slot:.2f},{y(a):.2f}" for i, a in enumerate(probes))
        out.append(f'<polyline class="probe" points="{pts}" fill="none" stroke="#dd8452" stroke-width="2"/>')
    if marker is not None:
        xm = left + marker * slot
        out.append(f'<line class="rf-marker" data-layer="{escape(layers[marker])}" x1="{xm:.2f}" '
                   f'x2="{xm:.2f}" y1="{top}" y2="{top + plot_h}" stroke="black" stroke-width="2"/>')
    out.append(f'<line class="axis" x1="{left}" x2="{left}" y1="{top}" y2="{top + plot_h}" stroke="black"/>')
    out.append(f'<line class="axis" x1="{left}" x2="{left + plot_w}" y1="{top + plot_h}" '
               f'y2="{top + plot_h}" stroke="black"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
