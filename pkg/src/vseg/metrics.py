"""Segmentation evaluation: overlap, surface distances, volumes, and the
four-segment-per-slice sensitivity/specificity protocol against a
reference mask, plus cohort-level median/min/max reports.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import ndimage


@dataclass
class EvaluationRecord:
    case_id: str
    dsc: float = None
    hd_mm: float = None
    assd_mm: float = None
    vol_pred_ml: float = None
    vol_ref_ml: float = None
    sensitivity: float = None
    specificity: float = None
    segment_count: int = None
    timing_sec: float = None


def _as_bool(mask):
    m = np.asarray(mask)
    if hasattr(mask, "data"):
        m = np.asarray(mask.data)
    return m.astype(bool)


def _check_aligned_arrays(a, b, what):
    if a.shape != b.shape:
        raise ValueError(f"{what}: mask shapes differ, {a.shape} vs {b.shape}")


def dsc(a, b):
    """Dice-Sørensen coefficient 2|A∩B|/(|A|+|B|).

    Returns 1.0 when both masks are empty (documented convention)."""
    a, b = _as_bool(a), _as_bool(b)
    _check_aligned_arrays(a, b, "dsc")
    sa, sb = int(a.sum()), int(b.sum())
    if sa + sb == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / (sa + sb)


def surface_voxels(mask):
    """Voxels of the mask with at least one 6-neighbor outside the mask,
    counting the volume border as outside."""
    mask = _as_bool(mask)
    interior = np.ones_like(mask)
    for axis in range(mask.ndim):
        lo = np.roll(mask, 1, axis=axis)
        hi = np.roll(mask, -1, axis=axis)
        # rolled-in wrap values must count as outside
        sl_lo = [slice(None)] * mask.ndim
        sl_lo[axis] = 0
        lo[tuple(sl_lo)] = False
        sl_hi = [slice(None)] * mask.ndim
        sl_hi[axis] = -1
        hi[tuple(sl_hi)] = False
        interior &= lo & hi
    return mask & ~interior


def _directed_surface_distances(src_surface, dst_surface, spacing):
    """Distance in mm from every src surface voxel to the nearest dst
    surface voxel, via a Euclidean distance transform of the dst set."""
    dist = ndimage.distance_transform_edt(~dst_surface, sampling=spacing)
    return dist[src_surface]


def hausdorff_mm(a, b, spacing):
    """Symmetric Hausdorff distance between mask surfaces, Euclidean mm."""
    a, b = _as_bool(a), _as_bool(b)
    _check_aligned_arrays(a, b, "hausdorff")
    if not a.any() or not b.any():
        raise ValueError("hausdorff distance is undefined for an empty mask")
    sa, sb = surface_voxels(a), surface_voxels(b)
    d_ab = _directed_surface_distances(sa, sb, spacing)
    d_ba = _directed_surface_distances(sb, sa, spacing)
    return float(max(d_ab.max(), d_ba.max()))


def assd_mm(a, b, spacing):
    """Average symmetric surface distance in mm: nearest-surface distances
    pooled over both surfaces."""
    a, b = _as_bool(a), _as_bool(b)
    _check_aligned_arrays(a, b, "assd")
    if not a.any() or not b.any():
        raise ValueError("assd is undefined for an empty mask")
    sa, sb = surface_voxels(a), surface_voxels(b)
    d_ab = _directed_surface_distances(sa, sb, spacing)
    d_ba = _directed_surface_distances(sb, sa, spacing)
    return float((d_ab.sum() + d_ba.sum()) / (d_ab.size + d_ba.size))


def volume_ml(mask, spacing):
    """Mask volume in milliliters: voxel count times voxel volume."""
    count = int(_as_bool(mask).sum())
    voxel_mm3 = spacing[0] * spacing[1] * spacing[2]
    return count * voxel_mm3 / 1000.0


def segment_sens_spec(pred, reference, prostate):
    """Four-segment-per-slice sensitivity/specificity.

    Every axial slice intersecting the prostate is split into four
    quadrants at the slice-wise prostate centroid (in-plane, axis
    aligned). A segment is positive for a mask iff at least one of its
    prostate voxels is set. Returns (sensitivity, specificity,
    segment_count); sensitivity is None when the reference marks no
    segment (undefined, not 0).

    Masks are indexed [x, y, z] with z the axial direction; pred and
    reference are expected to be restricted to the prostate already.
    """
    pred, reference, prostate = _as_bool(pred), _as_bool(reference), _as_bool(prostate)
    _check_aligned_arrays(pred, reference, "segment_sens_spec")
    _check_aligned_arrays(pred, prostate, "segment_sens_spec")
    if not prostate.any():
        raise ValueError("prostate mask is empty")

    tp = fp = tn = fn = 0
    n_slices = 0
    for z in range(prostate.shape[2]):
        pz = prostate[:, :, z]
        if not pz.any():
            continue
        n_slices += 1
        xs, ys = np.nonzero(pz)
        cx, cy = xs.mean(), ys.mean()
        left = xs <= cx
        anterior = ys <= cy
        for qx, qy in ((True, True), (True, False), (False, True), (False, False)):
            sel = (left == qx) & (anterior == qy)
            qxs, qys = xs[sel], ys[sel]
            ref_pos = reference[qxs, qys, z].any() if sel.any() else False
            pred_pos = pred[qxs, qys, z].any() if sel.any() else False
            if ref_pos and pred_pos:
                tp += 1
            elif ref_pos:
                fn += 1
            elif pred_pos:
                fp += 1
            else:
                tn += 1

    sensitivity = tp / (tp + fn) if (tp + fn) > 0 else None
    specificity = tn / (tn + fp) if (tn + fp) > 0 else None
    return sensitivity, specificity, 4 * n_slices


REPORT_COLUMNS = ("case_id", "dsc", "hd_mm", "assd_mm", "vol_pred_ml",
                  "vol_ref_ml", "sensitivity", "specificity", "segments",
                  "time_sec")

SUMMARY_METRICS = ("dsc", "hd_mm", "assd_mm", "vol_pred_ml", "vol_ref_ml",
                   "sensitivity", "specificity", "timing_sec")


def _median(values):
    # even count: mean of the two middle values
    v = sorted(values)
    n = len(v)
    mid = n // 2
    if n % 2 == 1:
        return v[mid]
    return 0.5 * (v[mid - 1] + v[mid])


def cohort_report(records):
    """Median/min/max per metric over evaluation records, skipping
    metrics a record reports as absent."""
    if not records:
        raise ValueError("cohort_report needs at least one record")
    report = {}
    for metric in SUMMARY_METRICS:
        values = [getattr(r, metric) for r in records if getattr(r, metric) is not None]
        if not values:
            continue
        report[metric] = {
            "median": _median(values),
            "min": min(values),
            "max": max(values),
        }
    return report


def write_case_csv(records, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(REPORT_COLUMNS)
        for r in records:
            w.writerow([r.case_id, r.dsc, r.hd_mm, r.assd_mm, r.vol_pred_ml,
                        r.vol_ref_ml, r.sensitivity, r.specificity,
                        r.segment_count, r.timing_sec])


def write_summary_csv(report, path):
    """Cohort summary with one row per metric and Median/Min/Max columns."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["metric", "median", "min", "max"])
        for metric, stats in report.items():
            w.writerow([metric, stats["median"], stats["min"], stats["max"]])
