"""Synthetic nested-sphere phantom with analytically known ground truth.

Three concentric spheres mimic the nested evaluation regions of brain-tumor
segmentation: outer shell = label 2 (edema), middle shell = label 1 (core
shell), inner sphere = label 4 (enhancing core), background = 0. The image
is piecewise constant per region (per channel) plus optional Gaussian noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .volume import DEFAULT_LABEL_ALPHABET, LabelMap, Volume

# region order: background, outer shell, middle shell, inner sphere
REGION_LABELS = (0, 2, 1, 4)


@dataclass
class PhantomSpec:
    """Geometry and intensity model of the phantom.

    ``radii_mm`` is (outer, middle, inner), strictly decreasing, and must
    fit inside the physical extent of the grid. ``region_means`` holds one
    row per channel with four entries (background, outer, middle, inner).
    """

    dims: tuple[int, int, int] = (64, 64, 64)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    radii_mm: tuple[float, float, float] = (24.0, 16.0, 8.0)
    region_means: tuple = ((0.0, 0.3, 0.6, 0.9),)
    noise_sigma: float = 0.0

    def __post_init__(self):
        self.dims = tuple(int(n) for n in self.dims)
        self.spacing = tuple(float(s) for s in self.spacing)
        self.radii_mm = tuple(float(r) for r in self.radii_mm)
        if len(self.radii_mm) != 3:
            raise ValueError("need exactly three radii (outer, middle, inner)")
        if not (self.radii_mm[0] > self.radii_mm[1] > self.radii_mm[2] > 0):
            raise ValueError(f"radii must be strictly decreasing: {self.radii_mm}")
        half_extent = min((n - 1) * s / 2.0 for n, s in zip(self.dims, self.spacing))
        if self.radii_mm[0] > half_extent:
            raise ValueError(
                f"outer radius {self.radii_mm[0]} does not fit the grid "
                f"(half extent {half_extent:.1f} mm)"
            )
        self.region_means = tuple(tuple(float(m) for m in row)
                                  for row in self.region_means)
        if any(len(row) != 4 for row in self.region_means):
            raise ValueError("each channel needs 4 region means")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")

    @property
    def channels(self) -> int:
        return len(self.region_means)

    def to_json(self) -> dict:
        return {
            "dims": list(self.dims),
            "spacing": list(self.spacing),
            "radii_mm": list(self.radii_mm),
            "region_means": [list(r) for r in self.region_means],
            "noise_sigma": self.noise_sigma,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "PhantomSpec":
        kwargs = {k: doc[k] for k in
                  ("dims", "spacing", "radii_mm", "region_means", "noise_sigma")
                  if k in doc}
        return cls(**kwargs)


def generate_phantom(spec: PhantomSpec, seed: int = 0) -> tuple[Volume, LabelMap]:
    """Build (image, ground truth) for a phantom geometry; deterministic per seed."""
    axes = [
        (np.arange(n, dtype=np.float64) - (n - 1) / 2.0) * s
        for n, s in zip(spec.dims, spec.spacing)
    ]
    xx, yy, zz = np.meshgrid(*axes, indexing="ij")
    r2 = xx * xx + yy * yy + zz * zz

    outer, middle, inner = spec.radii_mm
    region = np.zeros(spec.dims, dtype=np.int64)
    region[r2 <= outer * outer] = 1
    region[r2 <= middle * middle] = 2
    region[r2 <= inner * inner] = 3
    labels = np.asarray(REGION_LABELS, dtype=np.uint8)[region]

    rng = np.random.default_rng(seed)
    data = np.empty((spec.channels,) + spec.dims, dtype=np.float32)
    for ch, means in enumerate(spec.region_means):
        chan = np.asarray(means, dtype=np.float32)[region]
        if spec.noise_sigma > 0:
            chan = chan + rng.normal(0.0, spec.noise_sigma, spec.dims).astype(np.float32)
        data[ch] = chan
    return (Volume(data, spec.spacing),
            LabelMap(labels, spec.spacing, alphabet=DEFAULT_LABEL_ALPHABET))
