"""Reference model: voxelwise intensity thresholding.

Numerically identical to the engine's built-in threshold predictor (same
formulas, dtypes and operation order), so serving it through the adapter
must reproduce the in-process results bit for bit. Useful as a conformance
target and as a template for wrapping real checkpoints.
"""

from __future__ import annotations

import numpy as np


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def threshold_model(thresholds, channel: int = 0, softness: float = 0.0):
    """Factory returning a model callable for the adapter.

    The class of a voxel is the number of thresholds strictly below its
    value on the chosen channel; ``softness > 0`` replaces the hard step
    with logistic ramps.
    """
    thresholds = [float(t) for t in thresholds]
    if not thresholds:
        raise ValueError("need at least one threshold")
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError(f"thresholds must be strictly ascending: {thresholds}")
    if softness < 0:
        raise ValueError("softness must be >= 0")
    k = len(thresholds) + 1

    def model(arr: np.ndarray) -> np.ndarray:
        x = arr[channel]
        dims = x.shape
        if softness == 0.0:
            cls = np.zeros(dims, dtype=np.int64)
            for t in thresholds:
                cls += x > t
            probs = np.zeros((k,) + dims, dtype=np.float32)
            np.put_along_axis(probs, cls[np.newaxis], 1.0, axis=0)
        else:
            x64 = x.astype(np.float64)
            exceed = [_sigmoid((x64 - t) / softness) for t in thresholds]
            probs = np.empty((k,) + dims, dtype=np.float32)
            probs[0] = (1.0 - exceed[0]).astype(np.float32)
            for j in range(1, k - 1):
                probs[j] = (exceed[j - 1] - exceed[j]).astype(np.float32)
            probs[k - 1] = exceed[-1].astype(np.float32)
        return probs

    return model
