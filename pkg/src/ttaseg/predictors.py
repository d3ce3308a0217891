"""Pluggable segmentation-predictor contract and built-in analytic predictors.

A predictor is any object with ``name``, ``classes``, ``channels``,
``concurrent_safe`` attributes and a ``predict(Volume) -> ProbMap`` method.
Built-ins are closed-form stand-ins for trained networks: the threshold
predictor is exactly equivariant to voxel permutations (the cornerstone of
the engine's inverse-transform tests) and the perturbed wrapper injects
controlled label noise so fusion benefits are measurable at desk scale.
"""

from __future__ import annotations

from typing import Protocol, runtime_checkable

import numpy as np

from .errors import ChannelMismatchError
from .volume import ProbMap, Volume


@runtime_checkable
class Predictor(Protocol):
    """Contract every predictor implements."""

    name: str
    classes: int
    channels: int
    concurrent_safe: bool

    def predict(self, v: Volume) -> ProbMap:
        ...


def check_input(pred, v: Volume) -> None:
    if v.channels != pred.channels:
        raise ChannelMismatchError(
            f"predictor {pred.name!r} expects {pred.channels} channels, "
            f"volume has {v.channels}"
        )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class ThresholdPredictor:
    """Voxelwise intensity thresholding on one channel.

    The class of a voxel is the number of thresholds strictly below its
    value. ``softness > 0`` replaces the hard step with logistic ramps of
    that width, producing a smooth probability profile; ``softness = 0``
    produces one-hot output. Purely voxelwise, hence exactly equivariant to
    any spatial permutation of the input.
    """

    concurrent_safe = True

    def __init__(self, thresholds, channel: int = 0, softness: float = 0.0,
                 channels: int = 1, name: str = "threshold"):
        thresholds = [float(t) for t in thresholds]
        if not thresholds:
            raise ValueError("need at least one threshold")
        if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
            raise ValueError(f"thresholds must be strictly ascending: {thresholds}")
        if not 0 <= channel < channels:
            raise ValueError(f"channel {channel} out of range for {channels} channels")
        if softness < 0:
            raise ValueError("softness must be >= 0")
        self.thresholds = tuple(thresholds)
        self.channel = channel
        self.softness = float(softness)
        self.channels = channels
        self.classes = len(thresholds) + 1
        self.name = name

    def predict(self, v: Volume) -> ProbMap:
        check_input(self, v)
        x = v.data[self.channel]
        k = self.classes
        if self.softness == 0.0:
            cls = np.zeros(v.dims, dtype=np.int64)
            for t in self.thresholds:
                cls += x > t
            probs = np.zeros((k,) + v.dims, dtype=np.float32)
            np.put_along_axis(probs, cls[np.newaxis], 1.0, axis=0)
        else:
            # exceed[j] = P(class > j); adjacent differences give the classes
            x64 = x.astype(np.float64)
            exceed = [_sigmoid((x64 - t) / self.softness) for t in self.thresholds]
            probs = np.empty((k,) + v.dims, dtype=np.float32)
            probs[0] = (1.0 - exceed[0]).astype(np.float32)
            for j in range(1, k - 1):
                probs[j] = (exceed[j - 1] - exceed[j]).astype(np.float32)
            probs[k - 1] = exceed[-1].astype(np.float32)
        return ProbMap(probs, v.spacing)


class PerturbedPredictor:
    """Wraps a predictor with per-voxel label-flip noise.

    With probability ``flip_rate`` a voxel's argmax class is replaced by a
    uniformly random other class (as a one-hot vector); all other voxels
    keep the base probabilities unchanged. Flips are drawn fresh per call,
    deterministically from (seed, call index), so repeated runs of the same
    call sequence reproduce exactly. Stateful, therefore not safe for
    concurrent use.
    """

    concurrent_safe = False

    def __init__(self, base, flip_rate: float, seed: int):
        if not 0 <= flip_rate < 1:
            raise ValueError(f"flip_rate must be in [0, 1), got {flip_rate}")
        self.base = base
        self.flip_rate = float(flip_rate)
        self.seed = int(seed)
        self.channels = base.channels
        self.classes = base.classes
        self.name = f"perturbed({base.name}, rate={flip_rate})"
        self._call_index = 0

    def predict(self, v: Volume) -> ProbMap:
        base = self.base.predict(v)
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=self.seed, spawn_key=(self._call_index,))
        )
        self._call_index += 1
        flip = rng.random(size=base.dims) < self.flip_rate
        offsets = rng.integers(1, self.classes, size=base.dims)
        if not flip.any():
            return base
        probs = np.array(base.probs)
        winners = np.argmax(base.probs, axis=0)
        new_cls = (winners[flip] + offsets[flip]) % self.classes
        flat = probs.reshape(self.classes, -1)
        cols = np.flatnonzero(flip.ravel())
        flat[:, cols] = 0.0
        flat[new_cls, cols] = 1.0
        return ProbMap(flat.reshape(probs.shape), base.spacing)


class ConstantPredictor:
    """Always returns the same class distribution; handy in tests."""

    concurrent_safe = True

    def __init__(self, probs, channels: int = 1, name: str = "constant"):
        probs = np.asarray(probs, dtype=np.float32)
        if probs.ndim != 1 or probs.shape[0] < 2:
            raise ValueError("need a 1D distribution over >= 2 classes")
        self.distribution = probs
        self.classes = probs.shape[0]
        self.channels = channels
        self.name = name

    def predict(self, v: Volume) -> ProbMap:
        check_input(self, v)
        planes = np.broadcast_to(
            self.distribution[:, np.newaxis, np.newaxis, np.newaxis],
            (self.classes,) + v.dims,
        )
        return ProbMap(np.array(planes), v.spacing)
