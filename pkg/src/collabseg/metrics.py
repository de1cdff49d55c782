"""Overlap and surface-distance metrics for binary volumes."""

import csv
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .exceptions import DimensionError, UndefinedMetricError

_FACE_CONNECTIVITY = ndimage.generate_binary_structure(3, 1)


def _pair(pred, ref):
    pred = np.asarray(pred).astype(bool)
    ref = np.asarray(ref).astype(bool)
    if pred.shape != ref.shape:
        raise DimensionError(f"prediction {pred.shape} and reference {ref.shape} differ")
    return pred, ref


def dice(pred, ref):
    """2|P & R| / (|P| + |R|); two empty masks agree perfectly (1.0)."""
    pred, ref = _pair(pred, ref)
    total = int(pred.sum()) + int(ref.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(pred, ref).sum()) / total


def iou(pred, ref):
    pred, ref = _pair(pred, ref)
    union = int(np.logical_or(pred, ref).sum())
    if union == 0:
        return 1.0
    return int(np.logical_and(pred, ref).sum()) / union


def precision(pred, ref):
    """Fraction of predicted foreground that is correct; 1.0 for an empty prediction."""
    pred, ref = _pair(pred, ref)
    n = int(pred.sum())
    if n == 0:
        return 1.0
    return int(np.logical_and(pred, ref).sum()) / n


def ravd(pred, ref):
    """Signed relative volume difference (|P| - |R|) / |R|."""
    pred, ref = _pair(pred, ref)
    r = int(ref.sum())
    if r == 0:
        raise UndefinedMetricError("RAVD is undefined for an empty reference")
    return (int(pred.sum()) - r) / r


def surface(mask):
    """Foreground voxels with a face-adjacent background neighbour (the border counts as background)."""
    mask = np.asarray(mask).astype(bool)
    if mask.ndim == 3:
        structure = _FACE_CONNECTIVITY
    else:
        structure = ndimage.generate_binary_structure(mask.ndim, 1)
    eroded = ndimage.binary_erosion(mask, structure=structure, border_value=0)
    return mask & ~eroded


def assd(pred, ref, spacing=None):
    """Average symmetric surface distance, in the units of ``spacing``.

    ``spacing`` follows array axis order; defaults to unit spacing.
    """
    pred, ref = _pair(pred, ref)
    if not pred.any() or not ref.any():
        raise UndefinedMetricError("ASSD is undefined when a mask is empty")
    spacing = (1.0,) * pred.ndim if spacing is None else tuple(float(s) for s in spacing)
    sp, sr = surface(pred), surface(ref)
    dist_to_ref = ndimage.distance_transform_edt(~sr, sampling=spacing)
    dist_to_pred = ndimage.distance_transform_edt(~sp, sampling=spacing)
    total = dist_to_ref[sp].sum() + dist_to_pred[sr].sum()
    return float(total / (sp.sum() + sr.sum()))


@dataclass
class MetricsReport:
    volume_id: str
    dice: float
    iou: float
    assd: float
    ravd: float
    method: str = ""
    fold: object = ""

    @property
    def abs_ravd(self):
        return abs(self.ravd)


def evaluate_volume(pred, ref, spacing=None, volume_id="", method="", fold=""):
    """All four metrics for one volume. Undefined ASSD / RAVD become NaN with a warning."""
    try:
        distance = assd(pred, ref, spacing)
    except UndefinedMetricError as exc:
        warnings.warn(f"{volume_id}: {exc}", stacklevel=2)
        distance = float("nan")
    try:
        rel = ravd(pred, ref)
    except UndefinedMetricError as exc:
        warnings.warn(f"{volume_id}: {exc}", stacklevel=2)
        rel = float("nan")
    return MetricsReport(volume_id, dice(pred, ref), iou(pred, ref), distance, rel, method, fold)


METRICS = ("dice", "iou", "assd", "ravd", "abs_ravd")


def aggregate(reports):
    """Mean and population SD of each metric, skipping undefined (NaN) values."""
    out = {}
    for name in METRICS:
        values = np.array([getattr(r, name) for r in reports], dtype=float)
        values = values[np.isfinite(values)]
        if values.size == 0:
            out[name] = (float("nan"), float("nan"))
        else:
            out[name] = (float(values.mean()), float(values.std(ddof=0)))
    return out


CSV_FIELDS = ("method", "fold", "volume_id") + METRICS


def _fmt(value):
    return "nan" if not np.isfinite(value) else f"{value:.6g}"


def report_rows(reports, method, fold):
    """Per-volume rows followed by flagged MEAN and SD aggregate rows."""
    rows = []
    for r in reports:
        rows.append([method, fold, r.volume_id] + [_fmt(getattr(r, m)) for m in METRICS])
    agg = aggregate(reports)
    rows.append([method, fold, "MEAN"] + [_fmt(agg[m][0]) for m in METRICS])
    rows.append([method, fold, "SD"] + [_fmt(agg[m][1]) for m in METRICS])
    return rows


def write_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        writer.writerows(rows)
