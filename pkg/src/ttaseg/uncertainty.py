"""Voxel-wise aleatoric uncertainty from the TTA sample stack.

The estimator is the entropy of the empirical label distribution at each
voxel: with p_m the frequency of the m-th distinct label among the N
samples, H = -sum_m p_m ln(p_m), in nats, with 0 ln 0 = 0. The double
precision core is exposed as :func:`entropy_from_counts`; the public map
stores float32.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .engine import SampleStack, label_counts
from .volume import LabelMap, UncertaintyMap


def entropy_from_counts(counts: np.ndarray, total: int) -> np.ndarray:
    """Entropy in nats of count vectors; float64, exact 0 where all agree.

    Args:
        counts: (labels, nvox) vote counts.
        total: number of samples N (each column sums to this).
    """
    p = counts.astype(np.float64) / float(total)
    terms = np.zeros_like(p)
    nz = counts > 0
    terms[nz] = p[nz] * np.log(p[nz])
    return -terms.sum(axis=0)


def entropy_map(stack: SampleStack) -> UncertaintyMap:
    """Per-voxel entropy of the sample stack's label distribution."""
    _, counts = label_counts(stack)
    h = entropy_from_counts(counts, len(stack))
    return UncertaintyMap(h.reshape(stack.dims).astype(np.float32), stack.spacing)


def boundary_mask(labels: LabelMap, shell_width: float = 2.0) -> np.ndarray:
    """Voxels within ``shell_width`` voxels of any label transition.

    A transition voxel is one whose label differs from a 6-neighbor; the
    shell is grown by Euclidean distance in voxel units.
    """
    arr = labels.labels
    transition = np.zeros(arr.shape, dtype=bool)
    for axis in range(3):
        diff = np.diff(arr, axis=axis) != 0
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        transition[tuple(lo)] |= diff
        transition[tuple(hi)] |= diff
    if not transition.any():
        raise ValueError("label map has no transitions, boundary shell is undefined")
    dist = ndimage.distance_transform_edt(~transition)
    return dist <= shell_width


def boundary_uncertainty_summary(u: UncertaintyMap, labels: LabelMap,
                                 shell_width: float = 2.0) -> tuple[float, float]:
    """Mean entropy on the boundary shell vs. everywhere else.

    Returns:
        (mean on shell, mean elsewhere); the second is NaN when the shell
        covers the whole grid.
    """
    if u.dims != labels.dims:
        raise ValueError(
            f"uncertainty dims {u.dims} do not match label dims {labels.dims}"
        )
    shell = boundary_mask(labels, shell_width)
    on = float(u.values[shell].mean(dtype=np.float64))
    rest = u.values[~shell]
    off = float(rest.mean(dtype=np.float64)) if rest.size else float("nan")
    return on, off
