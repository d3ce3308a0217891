"""Segmentation evaluation: per-region Dice and Hausdorff, cohort summaries.

Regions are label sets (defaults follow the nested brain-tumor convention:
ET = {4}, TC = {1, 4}, WT = {1, 2, 4}). Hausdorff distances are computed
between the 6-connectivity boundary voxel centers of the two masks, in
physical millimeters, via an exact Euclidean distance transform; both the
maximum and the 95th-percentile variants are reported. Conventions for
empty masks: both empty -> Dice 100, Hausdorff undefined (NaN); one empty
-> Dice 0, Hausdorff undefined. Undefined values are excluded from cohort
statistics with a reported count.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import ndimage

from .errors import DimensionMismatchError
from .volume import LabelMap

METRIC_KEYS = ("dice", "hd95", "hd")


@dataclass(frozen=True)
class RegionSpec:
    """Named evaluation region: the set of labels it comprises."""

    name: str
    labels: tuple[int, ...]

    def __post_init__(self):
        if not self.labels:
            raise ValueError(f"region {self.name!r} has an empty label set")
        object.__setattr__(self, "labels", tuple(int(l) for l in self.labels))


DEFAULT_REGIONS = (
    RegionSpec("ET", (4,)),
    RegionSpec("WT", (1, 2, 4)),
    RegionSpec("TC", (1, 4)),
)


def region_binarize(l: LabelMap, region: RegionSpec) -> np.ndarray:
    """Boolean mask: voxel is true iff its label belongs to the region."""
    members = np.zeros(256, dtype=bool)  # labels are uint8
    members[list(region.labels)] = True
    return members[l.labels]


def dice(a: np.ndarray, b: np.ndarray) -> float:
    """Dice overlap of two boolean masks, in percent.

    Both masks empty is perfect agreement by convention (100).
    """
    if a.shape != b.shape:
        raise DimensionMismatchError(f"mask shapes differ: {a.shape} vs {b.shape}")
    a = a.astype(bool)
    b = b.astype(bool)
    size_a = int(a.sum())
    size_b = int(b.sum())
    if size_a == 0 and size_b == 0:
        return 100.0
    inter = int(np.logical_and(a, b).sum())
    return 100.0 * 2.0 * inter / (size_a + size_b)


def _surface(mask: np.ndarray) -> np.ndarray:
    """Boundary voxels: foreground with a 6-neighbor background voxel.

    Voxels on the array edge count as boundary (outside is background).
    """
    structure = ndimage.generate_binary_structure(3, 1)
    eroded = ndimage.binary_erosion(mask, structure=structure, border_value=0)
    return mask & ~eroded


def hausdorff(a: np.ndarray, b: np.ndarray, spacing=(1.0, 1.0, 1.0),
              percentile: float = 95) -> float:
    """Symmetric directed-distance statistic between mask boundaries, in mm.

    ``percentile=100`` gives the classic maximum Hausdorff distance;
    ``percentile=95`` the HD95 variant: the larger of the two directed
    distance sets' 95th percentiles (linear interpolation). Returns NaN
    when either mask is empty.
    """
    if a.shape != b.shape:
        raise DimensionMismatchError(f"mask shapes differ: {a.shape} vs {b.shape}")
    if not 0 < percentile <= 100:
        raise ValueError(f"percentile must be in (0, 100], got {percentile}")
    spacing = tuple(float(s) for s in spacing)
    a = a.astype(bool)
    b = b.astype(bool)
    if not a.any() or not b.any():
        return math.nan
    surf_a = _surface(a)
    surf_b = _surface(b)
    # distance from every voxel to the nearest boundary voxel of the mask
    dist_to_a = ndimage.distance_transform_edt(~surf_a, sampling=spacing)
    dist_to_b = ndimage.distance_transform_edt(~surf_b, sampling=spacing)
    d_ab = dist_to_b[surf_a]
    d_ba = dist_to_a[surf_b]
    if percentile == 100:
        return float(max(d_ab.max(), d_ba.max()))
    return float(max(np.percentile(d_ab, percentile),
                     np.percentile(d_ba, percentile)))


def evaluate_case(pred: LabelMap, gt: LabelMap,
                  regions: Sequence[RegionSpec] = DEFAULT_REGIONS) -> dict:
    """Per-region metrics for one case.

    Returns:
        {region name: {"dice": %, "hd95": mm, "hd": mm}} with NaN for
        undefined Hausdorff values.
    """
    if pred.dims != gt.dims:
        raise DimensionMismatchError(
            f"prediction dims {pred.dims} do not match ground truth {gt.dims}"
        )
    if not np.allclose(pred.spacing, gt.spacing, rtol=1e-5, atol=1e-6):
        raise DimensionMismatchError(
            f"prediction spacing {pred.spacing} does not match "
            f"ground truth {gt.spacing}"
        )
    out = {}
    for region in regions:
        mask_pred = region_binarize(pred, region)
        mask_gt = region_binarize(gt, region)
        out[region.name] = {
            "dice": dice(mask_pred, mask_gt),
            "hd95": hausdorff(mask_pred, mask_gt, gt.spacing, percentile=95),
            "hd": hausdorff(mask_pred, mask_gt, gt.spacing, percentile=100),
        }
    return out


def _summary_stats(values: list[float]) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    return {
        "mean": float(arr.mean()),
        "std": float(arr.std()),  # population std
        "median": float(np.percentile(arr, 50)),
        "q25": float(np.percentile(arr, 25)),
        "q75": float(np.percentile(arr, 75)),
    }


def summarize(cases: Iterable[dict]) -> dict:
    """Cohort statistics per region and metric.

    Quantiles use linear interpolation; the standard deviation is the
    population one. Undefined (NaN) values are excluded, with the excluded
    count reported per entry.

    Returns:
        {region: {metric: {"mean", "std", "median", "q25", "q75",
        "count", "undefined"}}}
    """
    cases = list(cases)
    if not cases:
        raise ValueError("cannot summarize an empty cohort")
    regions = list(cases[0].keys())
    out = {}
    for region in regions:
        out[region] = {}
        for metric in METRIC_KEYS:
            values = [c[region][metric] for c in cases]
            defined = [v for v in values if not math.isnan(v)]
            entry = {"count": len(defined), "undefined": len(values) - len(defined)}
            if defined:
                entry.update(_summary_stats(defined))
            else:
                entry.update({k: math.nan for k in
                              ("mean", "std", "median", "q25", "q75")})
            out[region][metric] = entry
    return out


def _json_safe(value):
    if isinstance(value, float) and math.isnan(value):
        return None
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_json_safe(v) for v in value]
    return value


def write_report_json(path, cases: Mapping[str, dict], summary: dict) -> None:
    """Nested JSON report; undefined values serialize as null."""
    doc = {"cases": _json_safe(dict(sorted(cases.items()))),
           "summary": _json_safe(summary)}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_report_csv(path, cases: Mapping[str, dict]) -> None:
    """Flat CSV report: one row per (case, region, metric); undefined -> empty."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["case", "region", "metric", "value"])
        for case in sorted(cases):
            for region, metrics in cases[case].items():
                for metric in METRIC_KEYS:
                    value = metrics[metric]
                    writer.writerow([case, region, metric,
                                     "" if math.isnan(value) else repr(value)])
