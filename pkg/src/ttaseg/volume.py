"""Dense volumetric data model: images, label maps, probability maps.

All grids live on a regular voxel lattice of shape ``(nx, ny, nz)`` with a
physical spacing in millimeters per voxel. Multi-channel images carry one
channel per acquisition sequence and are stored as ``(channels, nx, ny, nz)``
float32 arrays.

The canonical serialized layout (used by the NIfTI writer, the raw sidecar
export, and the external-predictor wire protocol) is channel-major with x
varying fastest: all voxels of channel 0 first, ordered x, then y, then z.
In-memory arrays are indexed ``data[channel, x, y, z]``; their strides are an
implementation detail.

Arrays are marked read-only after construction; instances are safe to share
across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateChannelError

# BraTS-style label convention: 0 background, 1 non-enhancing/necrotic core,
# 2 edema, 4 enhancing core. Configurable everywhere it is consumed.
DEFAULT_LABEL_ALPHABET = (0, 1, 2, 4)

PROB_SUM_TOL = 1e-4


def _check_spacing(spacing) -> tuple[float, float, float]:
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != 3:
        raise ValueError(f"spacing must have 3 components, got {len(spacing)}")
    if not all(np.isfinite(s) and s > 0 for s in spacing):
        raise ValueError(f"spacing components must be finite and > 0, got {spacing}")
    return spacing


def _check_dims(shape) -> None:
    if any(n <= 0 for n in shape):
        raise ValueError(f"voxel counts must be positive, got {shape}")


@dataclass(eq=False)
class Volume:
    """Multi-channel scalar image on a regular 3D grid.

    Args:
        data: array of shape ``(channels, nx, ny, nz)`` (a 3D array is
            promoted to a single channel). Cast to float32; must be finite.
        spacing: millimeters per voxel along x, y, z.
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim == 3:
            data = data[np.newaxis]
        if data.ndim != 4:
            raise ValueError(f"expected 3D or 4D data, got {data.ndim}D")
        _check_dims(data.shape)
        if not np.isfinite(data).all():
            raise ValueError("volume data contains non-finite values")
        data.flags.writeable = False
        self.data = data
        self.spacing = _check_spacing(self.spacing)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape[1:]


@dataclass(eq=False)
class LabelMap:
    """Hard segmentation: one unsigned 8-bit label per voxel.

    When ``alphabet`` is given, every voxel is validated against it. The
    default convention for brain-tumor tasks is
    ``DEFAULT_LABEL_ALPHABET = (0, 1, 2, 4)``.
    """

    labels: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    alphabet: tuple[int, ...] | None = None

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 3:
            raise ValueError(f"expected 3D labels, got {labels.ndim}D")
        _check_dims(labels.shape)
        if labels.dtype != np.uint8:
            if labels.size and (labels.min() < 0 or labels.max() > 255):
                raise ValueError("labels outside uint8 range")
            labels = labels.astype(np.uint8)
        if self.alphabet is not None:
            self.alphabet = tuple(int(a) for a in self.alphabet)
            present = np.unique(labels)
            bad = sorted(set(present.tolist()) - set(self.alphabet))
            if bad:
                raise ValueError(
                    f"labels {bad} not in declared alphabet {self.alphabet}"
                )
        labels.flags.writeable = False
        self.labels = labels
        self.spacing = _check_spacing(self.spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.labels.shape


@dataclass(eq=False)
class ProbMap:
    """Per-voxel class probabilities, shape ``(classes, nx, ny, nz)``.

    Every voxel's class vector must be nonnegative and sum to 1 within
    ``PROB_SUM_TOL``.
    """

    probs: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float32)
        if probs.ndim != 4:
            raise ValueError(f"expected 4D probabilities, got {probs.ndim}D")
        _check_dims(probs.shape)
        if probs.min() < 0:
            raise ValueError("probabilities must be nonnegative")
        sums = probs.sum(axis=0, dtype=np.float64)
        err = np.abs(sums - 1.0).max()
        if err > PROB_SUM_TOL:
            raise ValueError(
                f"class probabilities must sum to 1 within {PROB_SUM_TOL}, "
                f"worst deviation {err:.3g}"
            )
        probs.flags.writeable = False
        self.probs = probs
        self.spacing = _check_spacing(self.spacing)

    @property
    def classes(self) -> int:
        return self.probs.shape[0]

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.probs.shape[1:]


@dataclass(eq=False)
class UncertaintyMap:
    """Voxel-wise entropy of the prediction distribution, in nats."""

    values: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim != 3:
            raise ValueError(f"expected 3D values, got {values.ndim}D")
        _check_dims(values.shape)
        if not np.isfinite(values).all():
            raise ValueError("uncertainty values must be finite")
        if values.min() < -1e-6:
            raise ValueError("entropy cannot be negative")
        values.flags.writeable = False
        self.values = values
        self.spacing = _check_spacing(self.spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape

    def as_volume(self) -> Volume:
        return Volume(self.values[np.newaxis], self.spacing)


def channel_mask_stats(v: Volume, policy: str = "nonzero"):
    """Per-channel (mean, population std) over the masked voxels.

    ``policy="nonzero"`` selects voxels that are nonzero in that channel (the
    brain-mask convention for skull-stripped data); ``policy="all"`` uses
    every voxel. Accumulation is float64.

    Returns:
        list of (mask, mean, std) per channel; mask is a boolean array.
    """
    if policy not in ("nonzero", "all"):
        raise ValueError(f"unknown mask policy {policy!r}")
    stats = []
    for ch in range(v.channels):
        chan = v.data[ch]
        mask = chan != 0 if policy == "nonzero" else np.ones(v.dims, dtype=bool)
        if mask.any():
            selected = chan[mask].astype(np.float64)
            mean = float(selected.mean())
            std = float(selected.std())
        else:
            mean, std = 0.0, 0.0
        stats.append((mask, mean, std))
    return stats


def normalize(v: Volume, policy: str = "nonzero") -> Volume:
    """Z-score each channel over its masked voxels; outside the mask -> 0.

    Raises:
        DegenerateChannelError: if a channel's masked std is below 1e-6
            (constant or empty channel).
    """
    out = np.zeros_like(v.data)
    for ch, (mask, mean, std) in enumerate(channel_mask_stats(v, policy)):
        if std < 1e-6:
            raise DegenerateChannelError(
                f"channel {ch}: masked std {std:.3g} is below 1e-6, cannot normalize"
            )
        shifted = (v.data[ch][mask].astype(np.float64) - mean) / std
        out[ch][mask] = shifted.astype(np.float32)
    return Volume(out, v.spacing)


def argmax_labels(p: ProbMap, labels: Sequence[int] | None = None) -> LabelMap:
    """Hard decision: per voxel, the class with maximal probability.

    Ties break toward the smallest class index. ``labels`` maps class index
    to output label value (identity when omitted).
    """
    if labels is None:
        labels = range(p.classes)
    labels = np.asarray(list(labels))
    if labels.shape[0] != p.classes:
        raise ValueError(
            f"label alphabet has {labels.shape[0]} entries for {p.classes} classes"
        )
    winners = np.argmax(p.probs, axis=0)  # first occurrence = smallest index
    return LabelMap(labels[winners].astype(np.uint8), p.spacing)


def array_to_bytes(arr: np.ndarray) -> bytes:
    """Serialize ``(count, nx, ny, nz)`` to the canonical wire layout.

    Leading-axis-major (channel or class), x fastest within each block,
    little-endian.
    """
    arr = np.asarray(arr)
    le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
    # (count, nx, ny, nz) -> x fastest, count slowest
    return le.transpose(1, 2, 3, 0).tobytes(order="F")


def bytes_to_array(buf: bytes, count: int, dims: tuple[int, int, int],
                   dtype=np.float32) -> np.ndarray:
    """Inverse of :func:`array_to_bytes`; returns a C-contiguous array."""
    nx, ny, nz = dims
    dt = np.dtype(dtype).newbyteorder("<")
    expected = count * nx * ny * nz * dt.itemsize
    if len(buf) != expected:
        raise ValueError(f"payload has {len(buf)} bytes, expected {expected}")
    flat = np.frombuffer(buf, dtype=dt)
    arr = flat.reshape((nx, ny, nz, count), order="F").transpose(3, 0, 1, 2)
    return np.ascontiguousarray(arr).astype(np.dtype(dtype), copy=False)
