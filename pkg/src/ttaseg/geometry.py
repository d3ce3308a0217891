"""Spatial/intensity augmentation model.

Parameter sampling from configurable priors, affine construction,
forward/inverse resampling, and additive Gaussian noise. Transforms are
expressed as 4x4 homogeneous matrices mapping output voxel coordinates to
input voxel coordinates, composed about the volume center.

Randomness uses numpy's PCG64 generator seeded through ``SeedSequence``;
streams are split per sample index so results do not depend on execution
order. Streams are stable across platforms for a fixed numpy version.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .errors import SingularTransformError
from .volume import LabelMap, ProbMap, Volume

TWO_PI = 2.0 * math.pi


@dataclass
class AugmentationPrior:
    """Sampling law for one augmentation draw.

    Defaults: flips Bernoulli(0.5) per axis, rotation angle Uniform(0, 2*pi)
    per axis, isotropic scale Uniform(0.8, 1.2), additive Gaussian intensity
    noise with standard deviation 0.05 (in normalized-intensity units).

    ``rotation_axes`` restricts which axes rotate (e.g. ``(False, False,
    True)`` for in-plane-only rotation of anisotropic data); disabled axes
    keep angle 0. ``per_axis_scale`` switches from one isotropic factor to
    three independent draws.
    """

    flip_prob: tuple[float, float, float] = (0.5, 0.5, 0.5)
    rotation_range: tuple[float, float] = (0.0, TWO_PI)
    scale_range: tuple[float, float] = (0.8, 1.2)
    noise_sigma: float = 0.05
    rotation_axes: tuple[bool, bool, bool] = (True, True, True)
    per_axis_scale: bool = False

    def __post_init__(self):
        if np.isscalar(self.flip_prob):
            self.flip_prob = (float(self.flip_prob),) * 3
        else:
            self.flip_prob = tuple(float(p) for p in self.flip_prob)
        if len(self.flip_prob) != 3 or not all(0 <= p <= 1 for p in self.flip_prob):
            raise ValueError(f"flip_prob must be 3 probabilities, got {self.flip_prob}")
        self.rotation_range = (float(self.rotation_range[0]), float(self.rotation_range[1]))
        self.scale_range = (float(self.scale_range[0]), float(self.scale_range[1]))
        for name, (lo, hi) in (("rotation_range", self.rotation_range),
                               ("scale_range", self.scale_range)):
            if lo > hi:
                raise ValueError(f"{name} has lo {lo} > hi {hi}")
        if self.scale_range[0] <= 0:
            raise ValueError("scale must stay positive")
        self.noise_sigma = float(self.noise_sigma)
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        self.rotation_axes = tuple(bool(a) for a in self.rotation_axes)

    @classmethod
    def identity(cls) -> "AugmentationPrior":
        """Degenerate prior: every draw is the identity augmentation."""
        return cls(flip_prob=0.0, rotation_range=(0.0, 0.0),
                   scale_range=(1.0, 1.0), noise_sigma=0.0)

    @classmethod
    def flips_only(cls, flip_prob: float = 0.5) -> "AugmentationPrior":
        """Axis flips only; noiseless. Every draw is an exact voxel permutation."""
        return cls(flip_prob=flip_prob, rotation_range=(0.0, 0.0),
                   scale_range=(1.0, 1.0), noise_sigma=0.0)

    def to_json(self) -> dict:
        return {
            "flip_prob": list(self.flip_prob),
            "rotation_range_rad": list(self.rotation_range),
            "scale_range": list(self.scale_range),
            "noise_sigma": self.noise_sigma,
            "rotation_axes": list(self.rotation_axes),
            "per_axis_scale": self.per_axis_scale,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "AugmentationPrior":
        kwargs = {}
        if "flip_prob" in doc:
            kwargs["flip_prob"] = doc["flip_prob"]
        if "rotation_range_rad" in doc:
            kwargs["rotation_range"] = tuple(doc["rotation_range_rad"])
        if "scale_range" in doc:
            kwargs["scale_range"] = tuple(doc["scale_range"])
        if "noise_sigma" in doc:
            kwargs["noise_sigma"] = doc["noise_sigma"]
        if "rotation_axes" in doc:
            kwargs["rotation_axes"] = tuple(doc["rotation_axes"])
        if "per_axis_scale" in doc:
            kwargs["per_axis_scale"] = doc["per_axis_scale"]
        return cls(**kwargs)


@dataclass
class AugmentationParams:
    """One Monte Carlo draw: flips, per-axis rotations, scale, noise seed."""

    flips: tuple[bool, bool, bool]
    rotations: tuple[float, float, float]
    scale: tuple[float, float, float]
    noise_seed: int

    def __post_init__(self):
        self.flips = tuple(bool(f) for f in self.flips)
        self.rotations = tuple(float(r) for r in self.rotations)
        if np.isscalar(self.scale):
            self.scale = (float(self.scale),) * 3
        else:
            self.scale = tuple(float(s) for s in self.scale)
        if any(not math.isfinite(r) for r in self.rotations):
            raise ValueError("rotation angles must be finite")
        if any(s <= 0 for s in self.scale):
            raise ValueError("scale factors must be > 0")
        self.noise_seed = int(self.noise_seed)

    @classmethod
    def identity(cls, noise_seed: int = 0) -> "AugmentationParams":
        return cls(flips=(False,) * 3, rotations=(0.0,) * 3,
                   scale=(1.0,) * 3, noise_seed=noise_seed)

    def to_json(self) -> dict:
        return {
            "flips": list(self.flips),
            "rotations_rad": list(self.rotations),
            "scale": list(self.scale),
            "noise_seed": self.noise_seed,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "AugmentationParams":
        return cls(flips=tuple(doc["flips"]),
                   rotations=tuple(doc["rotations_rad"]),
                   scale=tuple(doc["scale"]),
                   noise_seed=doc["noise_seed"])


@dataclass(eq=False)
class AffineTransform:
    """4x4 homogeneous matrix, row-major, output voxel -> input voxel."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError(f"expected a 4x4 matrix, got {m.shape}")
        if not np.array_equal(m[3], (0.0, 0.0, 0.0, 1.0)):
            raise ValueError(f"last row must be (0,0,0,1), got {m[3]}")
        if abs(np.linalg.det(m[:3, :3])) <= 1e-12:
            raise SingularTransformError("affine 3x3 block is singular")
        m.flags.writeable = False
        self.matrix = m

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(np.eye(4))


def sample_params(prior: AugmentationPrior, rng: np.random.Generator) -> AugmentationParams:
    """Draw one augmentation from the prior.

    Draw order is fixed (flips, rotations, scale, noise seed) so a given
    (seed, prior) pair always yields the same parameter stream. Rotation
    uniforms are drawn for all three axes and zeroed on disabled ones,
    keeping downstream draws aligned across axis configurations.
    """
    flips = tuple(bool(rng.random() < p) for p in prior.flip_prob)
    lo, hi = prior.rotation_range
    raw = [float(rng.uniform(lo, hi)) for _ in range(3)]
    rotations = tuple(r if on else 0.0 for r, on in zip(raw, prior.rotation_axes))
    slo, shi = prior.scale_range
    if prior.per_axis_scale:
        scale = tuple(float(rng.uniform(slo, shi)) for _ in range(3))
    else:
        s = float(rng.uniform(slo, shi))
        scale = (s, s, s)
    noise_seed = int(rng.integers(0, 2 ** 63, dtype=np.int64))
    return AugmentationParams(flips=flips, rotations=rotations, scale=scale,
                              noise_seed=noise_seed)


def _rot_x(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _rot_y(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_z(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def params_to_affine(p: AugmentationParams, center) -> AffineTransform:
    """Build the output->input voxel map for one draw, anchored at ``center``.

    Composition (right to left, i.e. applied to the output coordinate in
    this order): translate to center frame, flip, inverse rotations
    Rx(-rx)@Ry(-ry)@Rz(-rz), inverse scale, translate back. Identity
    parameters produce the exact identity matrix.
    """
    center = np.asarray(center, dtype=np.float64)
    linear = np.diag([1.0 / s for s in p.scale])
    linear = linear @ _rot_x(-p.rotations[0]) @ _rot_y(-p.rotations[1]) @ _rot_z(-p.rotations[2])
    linear = linear @ np.diag([-1.0 if f else 1.0 for f in p.flips])
    m = np.eye(4)
    m[:3, :3] = linear
    m[:3, 3] = center - linear @ center
    return AffineTransform(m)


def volume_center(dims) -> tuple[float, float, float]:
    """Geometric center of the voxel grid, in voxel coordinates."""
    return tuple((n - 1) / 2.0 for n in dims)


def invert(a: AffineTransform) -> AffineTransform:
    """Exact-form inverse; keeps the homogeneous row exact."""
    linear = a.matrix[:3, :3]
    det = np.linalg.det(linear)
    if abs(det) <= 1e-12:
        raise SingularTransformError(f"cannot invert: |det|={abs(det):.3g}")
    inv_linear = np.linalg.inv(linear)
    m = np.eye(4)
    m[:3, :3] = inv_linear
    m[:3, 3] = -inv_linear @ a.matrix[:3, 3]
    return AffineTransform(m)


_GRID_CACHE: dict = {}


def _base_grid(dims) -> np.ndarray:
    """Cached (3, nvox) voxel-index grid; grids are reused across samples."""
    grid = _GRID_CACHE.get(dims)
    if grid is None:
        if len(_GRID_CACHE) >= 8:
            _GRID_CACHE.clear()
        grid = np.indices(dims, dtype=np.float32).reshape(3, -1)
        grid.flags.writeable = False
        _GRID_CACHE[dims] = grid
    return grid


def _source_coords(dims, matrix: np.ndarray) -> np.ndarray:
    """Input-space coordinates for every output voxel; shape (3, nvox).

    Float32 throughout: voxel indices are exactly representable, so exact
    permutations (flips, quarter turns) stay exact, and the ~1e-5 voxel
    rounding elsewhere is far below interpolation scale.
    """
    linear = matrix[:3, :3].astype(np.float32)
    shift = matrix[:3, 3:4].astype(np.float32)
    return linear @ _base_grid(dims) + shift


def _gather_nearest(chan: np.ndarray, coords: np.ndarray, fill) -> np.ndarray:
    nx, ny, nz = chan.shape
    idx = np.rint(coords).astype(np.int64)
    inb = ((idx >= 0).all(axis=0)
           & (idx[0] < nx) & (idx[1] < ny) & (idx[2] < nz))
    out = np.full(coords.shape[1], fill, dtype=chan.dtype)
    out[inb] = chan[idx[0, inb], idx[1, inb], idx[2, inb]]
    return out


def _gather_trilinear(chan: np.ndarray, coords: np.ndarray, fill: float) -> np.ndarray:
    chan = np.ascontiguousarray(chan)
    nx, ny, nz = chan.shape
    base_f = np.floor(coords)
    frac = coords - base_f  # exact for |coords| < 2^23
    base = base_f.astype(np.int64)
    out = np.empty(coords.shape[1], dtype=chan.dtype)

    # fast path: voxels whose whole 2x2x2 neighborhood is in bounds
    interior = ((base[0] >= 0) & (base[0] < nx - 1)
                & (base[1] >= 0) & (base[1] < ny - 1)
                & (base[2] >= 0) & (base[2] < nz - 1))
    if interior.any():
        bi = base[:, interior]
        fx, fy, fz = frac[:, interior]
        wx, wy, wz = 1.0 - fx, 1.0 - fy, 1.0 - fz
        flat = chan.reshape(-1)
        idx = (bi[0] * ny + bi[1]) * nz + bi[2]

        def lerp(lo, hi, w_lo, w_hi):
            lo *= w_lo
            hi *= w_hi
            lo += hi
            return lo

        c00 = lerp(flat[idx], flat[idx + 1], wz, fz)
        c01 = lerp(flat[idx + nz], flat[idx + nz + 1], wz, fz)
        c10 = lerp(flat[idx + ny * nz], flat[idx + ny * nz + 1], wz, fz)
        c11 = lerp(flat[idx + ny * nz + nz], flat[idx + ny * nz + nz + 1],
                   wz, fz)
        c0 = lerp(c00, c01, wy, fy)
        c1 = lerp(c10, c11, wy, fy)
        out[interior] = lerp(c0, c1, wx, fx)

    edge = ~interior
    if edge.any():
        be = base[:, edge]
        fe = frac[:, edge].astype(np.float64)
        acc = np.zeros(be.shape[1], dtype=np.float64)
        for dx, dy, dz in product((0, 1), repeat=3):
            ix, iy, iz = be[0] + dx, be[1] + dy, be[2] + dz
            w = ((fe[0] if dx else 1.0 - fe[0])
                 * (fe[1] if dy else 1.0 - fe[1])
                 * (fe[2] if dz else 1.0 - fe[2]))
            inb = ((ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
                   & (iz >= 0) & (iz < nz))
            vals = np.where(
                inb,
                chan[ix.clip(0, nx - 1), iy.clip(0, ny - 1), iz.clip(0, nz - 1)],
                fill,
            )
            acc += w * vals
        out[edge] = acc
    return out


def _resample_planes(data: np.ndarray, matrix: np.ndarray, interp: str, fill) -> np.ndarray:
    dims = data.shape[1:]
    coords = _source_coords(dims, matrix)
    out = []
    for chan in data:
        if interp == "nearest":
            out.append(_gather_nearest(chan, coords, fill))
        else:
            out.append(_gather_trilinear(chan, coords, float(fill)))
    return np.stack(out).reshape(data.shape)


def _renormalize_probs(planes: np.ndarray) -> np.ndarray:
    """Renormalize class vectors after interpolation.

    Voxels already summing to 1 within float precision are left untouched
    (this keeps exact-permutation resampling bit-exact); voxels whose class
    mass vanished (mapped fully out of bounds) collapse to the first class,
    the background convention.
    """
    sums = planes.sum(axis=0, dtype=np.float64)
    empty = sums < 1e-6
    off = (np.abs(sums - 1.0) > 1e-6) & ~empty
    if off.any():
        planes = np.array(planes)
        planes[:, off] = (planes[:, off] / sums[off]).astype(np.float32)
    if empty.any():
        planes = np.array(planes)
        planes[:, empty] = 0.0
        planes[0, empty] = 1.0
    return planes


def resample(obj, a: AffineTransform, interp: str = "trilinear", fill=0.0):
    """Pull-back resampling: output voxel o takes the value at ``a @ o``.

    Trilinear interpolation for continuous data, nearest neighbor for
    labels; out-of-bounds coordinates take ``fill``. Probability maps are
    renormalized per voxel so the result remains a valid ProbMap.
    """
    if interp not in ("trilinear", "nearest"):
        raise ValueError(f"unknown interpolation {interp!r}")
    if isinstance(obj, Volume):
        out = _resample_planes(obj.data, a.matrix, interp, fill)
        return Volume(out, obj.spacing)
    if isinstance(obj, LabelMap):
        if interp != "nearest":
            raise ValueError("label maps require nearest-neighbor resampling")
        out = _resample_planes(obj.labels[np.newaxis], a.matrix, "nearest",
                               np.uint8(fill))
        return LabelMap(out[0], obj.spacing, alphabet=obj.alphabet)
    if isinstance(obj, ProbMap):
        out = _resample_planes(obj.probs, a.matrix, interp, fill)
        return ProbMap(_renormalize_probs(out), obj.spacing)
    raise TypeError(f"cannot resample {type(obj).__name__}")


def add_noise(v: Volume, sigma: float, seed: int) -> Volume:
    """Add an iid Gaussian(0, sigma^2) field, deterministic per seed.

    ``sigma == 0`` returns the input unchanged.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return v
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma, size=v.data.shape).astype(np.float32)
    return Volume(v.data + noise, v.spacing)


def apply_augmentation(v: Volume, p: AugmentationParams,
                       prior: AugmentationPrior) -> Volume:
    """Spatially transform the image, then add the draw's intensity noise."""
    a = params_to_affine(p, volume_center(v.dims))
    out = resample(v, a, "trilinear", 0.0)
    return add_noise(out, prior.noise_sigma, p.noise_seed)


def inverse_spatial(pred, p: AugmentationParams):
    """Map a prediction back to the un-augmented frame.

    Nearest neighbor for label maps, trilinear plus per-voxel
    renormalization for probability maps. The intensity noise has no
    spatial footprint and is not inverted.
    """
    if not isinstance(pred, (LabelMap, ProbMap)):
        raise TypeError(f"cannot invert {type(pred).__name__}")
    a = invert(params_to_affine(p, volume_center(pred.dims)))
    interp = "nearest" if isinstance(pred, LabelMap) else "trilinear"
    return resample(pred, a, interp, 0.0)
