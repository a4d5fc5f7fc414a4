"""Deterministic artifact writers: CSV sample tables, JSON reports and SVG heatmaps."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

CSV_HEADER = ("x", "y", "re", "im", "abs")

# viridis-like anchors, sampled from dark blue through teal to yellow
_RAMP = np.array(
    [
        [68, 1, 84],
        [72, 40, 120],
        [62, 74, 137],
        [49, 104, 142],
        [38, 130, 142],
        [31, 158, 137],
        [53, 183, 121],
        [109, 205, 89],
        [180, 222, 44],
        [253, 231, 37],
    ],
    dtype=float,
)


def fmt(v) -> str:
    """Shortest round-trip text of a float; -0.0 prints as 0.0."""
    return repr(float(v) + 0.0)


def row_norms(values) -> np.ndarray:
    """Euclidean norm of each row of a (P,) or (P, n) complex array."""
    v = np.asarray(values, dtype=complex)
    if v.ndim == 1:
        v = v[:, None]
    return np.sqrt(np.sum(np.abs(v) ** 2, axis=1))


def _write(path, text: str):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as e:
        raise OSError(f"cannot write {path}: {e.strerror or e}") from e
    return path


def emit_csv(path, points, values, extra: dict | None = None):
    """Write one row per sample: coordinates, value (re, im, norm) and extra columns.

    ``values`` has shape (P,) or (P, n); for n > 1 the re/im columns hold the
    first component and further components follow as re<k>, im<k>.
    """
    pts = np.atleast_1d(np.asarray(points, dtype=complex))
    vals = np.asarray(values, dtype=complex)
    vals = vals.reshape(pts.size, -1) if pts.size else vals.reshape(0, max(1, vals.shape[-1] if vals.ndim > 1 else 1))
    n = vals.shape[1] if vals.size else 1
    extra = extra or {}
    header = list(CSV_HEADER) + list(extra)
    for k in range(1, n):
        header += [f"re{k}", f"im{k}"]
    cols = {name: np.asarray(col, dtype=float).ravel() for name, col in extra.items()}
    lines = [",".join(header)]
    norms = row_norms(vals) if vals.size else np.zeros(0)
    for i in range(pts.size):
        row = [fmt(pts[i].real), fmt(pts[i].imag), fmt(vals[i, 0].real), fmt(vals[i, 0].imag), fmt(norms[i])]
        row += [fmt(cols[name][i]) for name in extra]
        for k in range(1, n):
            row += [fmt(vals[i, k].real), fmt(vals[i, k].imag)]
        lines.append(",".join(row))
    return _write(path, "\n".join(lines) + "\n")


def read_csv(path) -> dict:
    """Columns of a CSV written by ``emit_csv`` as float arrays."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return {name: data[:, k] for k, name in enumerate(header)}


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, complex):
        return [_clean(obj.real), _clean(obj.imag)]
    return obj


def emit_json(path, data: dict):
    text = json.dumps(_clean(data), indent=2, sort_keys=True, ensure_ascii=False)
    return _write(path, text + "\n")


def colormap(t) -> np.ndarray:
    """Map values in [0, 1] to RGB bytes along the fixed ramp."""
    t = np.clip(np.nan_to_num(np.asarray(t, dtype=float)), 0.0, 1.0)
    x = t * (len(_RAMP) - 1)
    i = np.minimum(np.floor(x).astype(int), len(_RAMP) - 2)
    a = (x - i)[..., None]
    return np.rint(_RAMP[i] * (1 - a) + _RAMP[i + 1] * a).astype(int)


def _downsample(field: np.ndarray, limit: int) -> np.ndarray:
    N = field.shape[0]
    k = 1
    while N // k > limit:
        k *= 2
    if k == 1:
        return field
    m = N // k
    return field[: m * k, : m * k].reshape(m, k, m, k).mean(axis=(1, 3))


def emit_svg(field, path, title: str = "", extent=None, mask=None, limit: int = 96):
    """Heatmap of a real (N, N) field (first axis x, second y) with a colour bar.

    Nodes outside ``mask`` are drawn blank. ``extent`` is (xmin, xmax, ymin, ymax)
    for the axis labels.
    """
    f = np.array(np.real(field), dtype=float)
    if f.ndim != 2 or f.shape[0] != f.shape[1]:
        raise ValueError(f"heatmap needs a square 2-D field, got shape {f.shape}")
    if mask is not None:
        f = np.where(mask, f, np.nan)
    img = _downsample(f, limit)
    m = img.shape[0]
    finite = np.isfinite(img)
    lo = float(img[finite].min()) if finite.any() else 0.0
    hi = float(img[finite].max()) if finite.any() else 1.0
    span = hi - lo if hi > lo else 1.0
    cell = max(1, 384 // m)
    size = m * cell
    bar_x = size + 16
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size + 110}" height="{size + 40}" '
        f'viewBox="0 0 {size + 110} {size + 40}" shape-rendering="crispEdges">',
        f"<title>{_esc(title)}</title>",
        f'<text x="0" y="14" font-family="monospace" font-size="12">{_esc(title)}</text>',
        '<g transform="translate(0,20)">',
    ]
    rgb = colormap((img - lo) / span)
    for i in range(m):
        for j in range(m):
            if not finite[i, j]:
                continue
            r, g, b = rgb[i, j]
            # y grows upwards: the last column of the array is the top row
            out.append(
                f'<rect x="{i * cell}" y="{(m - 1 - j) * cell}" width="{cell}" height="{cell}" '
                f'fill="#{r:02x}{g:02x}{b:02x}"/>'
            )
    steps = 32
    sh = size / steps
    for k in range(steps):
        r, g, b = colormap((steps - 1 - k) / (steps - 1))
        out.append(
            f'<rect x="{bar_x}" y="{k * sh:.3f}" width="14" height="{sh + 0.5:.3f}" fill="#{r:02x}{g:02x}{b:02x}"/>'
        )
    out.append(f'<text x="{bar_x + 18}" y="10" font-family="monospace" font-size="10">{hi:.4g}</text>')
    out.append(f'<text x="{bar_x + 18}" y="{size}" font-family="monospace" font-size="10">{lo:.4g}</text>')
    if extent is not None:
        x0, x1, y0, y1 = extent
        out.append(
            f'<text x="0" y="{size + 14}" font-family="monospace" font-size="10">'
            f"x in [{x0:.4g}, {x1:.4g}], y in [{y0:.4g}, {y1:.4g}]</text>"
        )
    out.append("</g>")
    out.append("</svg>")
    return _write(path, "\n".join(out) + "\n")


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
