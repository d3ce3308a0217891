"""Independent brute-force oracles used by the unit and acceptance tests.

Everything here is written for clarity over speed and deliberately avoids
the production code paths it is used to check: per-voxel Python loops,
Counter-based frequency counting, all-pairs distances, hand-rolled
percentile interpolation.
"""

from collections import Counter
import math

import numpy as np


def argmax_scan(probs: np.ndarray) -> np.ndarray:
    """Per-voxel linear scan maximizer; ties to the smallest class index."""
    classes = probs.shape[0]
    out = np.zeros(probs.shape[1:], dtype=np.int64)
    for x in range(probs.shape[1]):
        for y in range(probs.shape[2]):
            for z in range(probs.shape[3]):
                best, best_p = 0, probs[0, x, y, z]
                for k in range(1, classes):
                    if probs[k, x, y, z] > best_p:
                        best, best_p = k, probs[k, x, y, z]
                out[x, y, z] = best
    return out


def vote_count(votes) -> int:
    """Most frequent value; ties to the smallest value."""
    counts = Counter(votes)
    best_label, best_count = None, -1
    for label in sorted(counts):
        if counts[label] > best_count:
            best_label, best_count = label, counts[label]
    return best_label


def vote_map(stack_array: np.ndarray) -> np.ndarray:
    """Brute-force majority voting over an (N, nx, ny, nz) stack."""
    n, nx, ny, nz = stack_array.shape
    out = np.zeros((nx, ny, nz), dtype=np.uint8)
    for x in range(nx):
        for y in range(ny):
            for z in range(nz):
                out[x, y, z] = vote_count([int(stack_array[i, x, y, z])
                                           for i in range(n)])
    return out


def entropy_of_votes(votes) -> float:
    """Direct evaluation of -sum p_m ln p_m over label frequencies."""
    n = len(votes)
    counts = Counter(votes)
    terms = []
    for count in counts.values():
        p = count / n
        terms.append(p * math.log(p))
    return -math.fsum(terms)


def surface_voxels(mask: np.ndarray) -> list:
    """Foreground voxels with at least one 6-neighbor outside the mask.

    The array border counts as background.
    """
    nx, ny, nz = mask.shape
    points = []
    for x in range(nx):
        for y in range(ny):
            for z in range(nz):
                if not mask[x, y, z]:
                    continue
                boundary = False
                for dx, dy, dz in ((1, 0, 0), (-1, 0, 0), (0, 1, 0),
                                   (0, -1, 0), (0, 0, 1), (0, 0, -1)):
                    px, py, pz = x + dx, y + dy, z + dz
                    if not (0 <= px < nx and 0 <= py < ny and 0 <= pz < nz):
                        boundary = True
                        break
                    if not mask[px, py, pz]:
                        boundary = True
                        break
                if boundary:
                    points.append((x, y, z))
    return points


def percentile_linear(values, q: float) -> float:
    """Quantile with linear interpolation between order statistics."""
    ordered = sorted(values)
    if len(ordered) == 1:
        return float(ordered[0])
    pos = (len(ordered) - 1) * q / 100.0
    lo = math.floor(pos)
    hi = math.ceil(pos)
    if lo == hi:
        return float(ordered[lo])
    return float(ordered[lo] + (pos - lo) * (ordered[hi] - ordered[lo]))


def hausdorff_all_pairs(a: np.ndarray, b: np.ndarray, spacing,
                        percentile: float) -> float:
    """All-pairs directed-distance statistic between mask boundaries, in mm."""
    pa = surface_voxels(a)
    pb = surface_voxels(b)
    if not pa or not pb:
        return math.nan
    sx, sy, sz = spacing

    def directed(src, dst):
        dists = []
        for (x1, y1, z1) in src:
            best = math.inf
            for (x2, y2, z2) in dst:
                d = math.sqrt(((x1 - x2) * sx) ** 2
                              + ((y1 - y2) * sy) ** 2
                              + ((z1 - z2) * sz) ** 2)
                if d < best:
                    best = d
            dists.append(best)
        return dists

    d_ab = directed(pa, pb)
    d_ba = directed(pb, pa)
    if percentile == 100:
        return max(max(d_ab), max(d_ba))
    return max(percentile_linear(d_ab, percentile),
               percentile_linear(d_ba, percentile))
