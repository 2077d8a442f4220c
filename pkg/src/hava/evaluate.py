"""Regional error metrics and report emission.

The headline numbers are E_vl / E_ve: for each frame take the maximum
per-vertex error inside a region mask (lip or eye band), then average
those maxima over frames. Per-vertex error is the Euclidean distance
in millimeters; a ``squared`` variant (mm^2) is available since the
source metric's wording is ambiguous about squaring.
"""

import math
import os

import numpy as np

from .mesh import RegionMask


class EvalError(ValueError):
    """Evaluation inputs are inconsistent."""


def per_vertex_error(y, yhat):
    """Euclidean distance per vertex, mm: (N, 3) x 2 -> (N,)."""
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape or y.ndim != 2 or y.shape[1] != 3:
        raise EvalError(f"vertex arrays must both be (N, 3), got {y.shape} and {yhat.shape}")
    return np.linalg.norm(yhat - y, axis=1)


def _mask_indices(mask, n):
    idx = mask.indices if isinstance(mask, RegionMask) else np.asarray(mask, dtype=np.int64)
    if idx.size == 0:
        raise EvalError("region mask is empty")
    if idx.min() < 0 or idx.max() >= n:
        raise EvalError(f"mask index out of range for {n} vertices")
    return idx


def regional_series(pairs, mask, squared=False):
    """Per-frame maximum error inside the mask: (T,)."""
    out = []
    for y, yhat in pairs:
        err = per_vertex_error(y, yhat)
        idx = _mask_indices(mask, err.shape[0])
        peak = float(err[idx].max())
        out.append(peak * peak if squared else peak)
    if not out:
        raise EvalError("no frames to evaluate")
    return np.array(out)


def regional_metric(pairs, mask, squared=False):
    """Mean over frames of the per-frame regional maximum (mm, or mm^2)."""
    return float(regional_series(pairs, mask, squared=squared).mean())


def mean_vertex_error_field(pairs):
    """Per-vertex error averaged over frames: (N,), for colormap export."""
    total = None
    count = 0
    for y, yhat in pairs:
        err = per_vertex_error(y, yhat)
        total = err if total is None else total + err
        count += 1
    if count == 0:
        raise EvalError("no frames to evaluate")
    return total / count


def _round3(x):
    # half away from zero at the third decimal
    if math.isnan(x):
        return float("nan")
    sign = -1.0 if x < 0 else 1.0
    return sign * math.floor(abs(x) * 1000.0 + 0.5) / 1000.0


def format_metric(x):
    return f"{_round3(x):.3f}"


def emit_report(rows, path):
    """Write the metric table and a per-frame series file beside it.

    ``rows`` are mappings with keys method, dataset, e_vl, e_ve
    (e_ve may be None), and optional series {region: (T,) array}.
    The table goes to ``path``; series rows go to ``<stem>_series.csv``
    as method,region,frame,error_mm.
    """
    with open(path, "w", encoding="ascii") as fh:
        fh.write("method,dataset,E_vl,E_ve\n")
        for row in rows:
            e_ve = row.get("e_ve")
            ve_text = "" if e_ve is None else format_metric(e_ve)
            fh.write(
                f"{row['method']},{row['dataset']},"
                f"{format_metric(row['e_vl'])},{ve_text}\n"
            )
    stem, _ = os.path.splitext(path)
    series_path = stem + "_series.csv"
    with open(series_path, "w", encoding="ascii") as fh:
        fh.write("method,region,frame,error_mm\n")
        for row in rows:
            for region, series in (row.get("series") or {}).items():
                for frame, value in enumerate(series):
                    fh.write(f"{row['method']},{region},{frame},{value:.6f}\n")
    return series_path
