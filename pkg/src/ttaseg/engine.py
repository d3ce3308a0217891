"""Monte Carlo test-time augmentation loop and fusion rules.

For each of N samples the engine draws augmentation parameters from the
prior, transforms the input, runs the predictor, and maps the prediction
back through the inverse spatial transform. Fusion is either per-voxel
majority voting over the inverse-transformed hard labels (default) or
probability averaging followed by argmax. Sample streams are split from the
run seed by index, so results are identical regardless of worker count.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import SampleFailedError
from .geometry import (
    AugmentationParams,
    AugmentationPrior,
    apply_augmentation,
    inverse_spatial,
    sample_params,
)
from .predictors import check_input
from .volume import LabelMap, ProbMap, Volume, argmax_labels

FUSION_MODES = ("majority-vote", "prob-average")


@dataclass
class TtaConfig:
    """Engine configuration.

    ``class_labels`` maps predictor class index to output label value
    (identity when None); for the brain-tumor convention with ascending
    intensities use e.g. ``(0, 2, 1, 4)``.
    """

    num_samples: int = 20
    prior: AugmentationPrior = field(default_factory=AugmentationPrior)
    seed: int | tuple = 0
    fusion: str = "majority-vote"
    keep_samples: bool = True
    class_labels: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.num_samples < 1:
            raise ValueError("num_samples must be >= 1")
        if self.fusion not in FUSION_MODES:
            raise ValueError(f"fusion must be one of {FUSION_MODES}, got {self.fusion!r}")
        if self.class_labels is not None:
            self.class_labels = tuple(int(c) for c in self.class_labels)


@dataclass(eq=False)
class SampleStack:
    """Inverse-transformed hard predictions, ordered by sample index."""

    maps: list[LabelMap]
    params: list[AugmentationParams]

    def __post_init__(self):
        if not self.maps:
            raise ValueError("sample stack cannot be empty")
        if len(self.maps) != len(self.params):
            raise ValueError("one parameter draw per sample map is required")
        dims = self.maps[0].dims
        spacing = self.maps[0].spacing
        for i, m in enumerate(self.maps):
            if m.dims != dims or m.spacing != spacing:
                raise ValueError(f"sample {i} has inconsistent dims or spacing")

    def __len__(self) -> int:
        return len(self.maps)

    @property
    def dims(self):
        return self.maps[0].dims

    @property
    def spacing(self):
        return self.maps[0].spacing

    def as_array(self) -> np.ndarray:
        """(N, nx, ny, nz) uint8 view of the stack."""
        return np.stack([m.labels for m in self.maps])


@dataclass(eq=False)
class TtaResult:
    labels: LabelMap
    stack: SampleStack | None
    params: list[AugmentationParams]


def label_counts(stack: SampleStack) -> tuple[np.ndarray, np.ndarray]:
    """Per-voxel vote counts.

    Returns:
        (labels_present ascending, counts of shape (len(labels), nvox)).
    """
    arrays = stack.as_array().reshape(len(stack), -1)
    hist = np.bincount(arrays.ravel(), minlength=256)
    present = np.flatnonzero(hist).astype(np.uint8)
    counts = np.empty((present.size, arrays.shape[1]), dtype=np.uint16)
    for i, label in enumerate(present):
        counts[i] = (arrays == label).sum(axis=0, dtype=np.uint16)
    return present, counts


def majority_vote(stack: SampleStack) -> LabelMap:
    """Per-voxel most frequent label; ties break to the smallest label."""
    present, counts = label_counts(stack)
    winners = np.argmax(counts, axis=0)  # first max = smallest label
    labels = present[winners].reshape(stack.dims)
    return LabelMap(labels, stack.spacing)


def average_probs(maps: list[ProbMap]) -> ProbMap:
    """Voxelwise arithmetic mean of probability maps."""
    if not maps:
        raise ValueError("cannot average an empty list of probability maps")
    first = maps[0]
    for i, m in enumerate(maps):
        if m.dims != first.dims or m.classes != first.classes:
            raise ValueError(f"probability map {i} has inconsistent shape")
    acc = np.zeros(first.probs.shape, dtype=np.float64)
    for m in maps:
        acc += m.probs
    return ProbMap((acc / len(maps)).astype(np.float32), first.spacing)


class MultiViewPredictor:
    """Fuses axial/sagittal/coronal predictors by probability averaging.

    Each view predictor owns its internal view handling; this wrapper only
    averages their outputs, so it composes with the TTA engine like any
    other predictor.
    """

    VIEWS = ("axial", "sagittal", "coronal")

    def __init__(self, views: dict):
        missing = [k for k in self.VIEWS if k not in views]
        if missing:
            raise ValueError(f"missing view predictors: {missing}")
        preds = [views[k] for k in self.VIEWS]
        if len({p.classes for p in preds}) != 1:
            raise ValueError("view predictors disagree on class count")
        if len({p.channels for p in preds}) != 1:
            raise ValueError("view predictors disagree on channel count")
        self.views = {k: views[k] for k in self.VIEWS}
        self.classes = preds[0].classes
        self.channels = preds[0].channels
        self.concurrent_safe = all(p.concurrent_safe for p in preds)
        self.name = "multi-view(" + ", ".join(p.name for p in preds) + ")"

    def predict(self, v: Volume) -> ProbMap:
        return average_probs([self.views[k].predict(v) for k in self.VIEWS])


def multi_view_fuse(v: Volume, view_predictors: dict) -> ProbMap:
    """One fused prediction from per-view predictors."""
    return MultiViewPredictor(view_predictors).predict(v)


def _warn_if_unnormalized(v: Volume) -> None:
    from .volume import channel_mask_stats

    off = [ch for ch, (_, _, std) in enumerate(channel_mask_stats(v))
           if abs(std - 1.0) > 0.1]
    if off:
        warnings.warn(
            f"channels {off} have masked std far from 1; "
            "input does not look normalized",
            stacklevel=3,
        )


def run_tta(v: Volume, predictor, cfg: TtaConfig, jobs: int = 1,
            check_normalization: bool = True) -> TtaResult:
    """Run the Monte Carlo TTA loop and fuse the N predictions.

    Samples run concurrently when ``jobs > 1`` and the predictor declares
    itself concurrent-safe; stateful predictors always run sequentially in
    sample order. Any per-sample failure aborts the run with the sample
    index and cause.

    Returns:
        TtaResult with the fused label map, the sample stack (when
        ``cfg.keep_samples``), and the parameter draws.
    """
    check_input(predictor, v)
    if check_normalization:
        _warn_if_unnormalized(v)

    n = cfg.num_samples
    children = np.random.SeedSequence(cfg.seed).spawn(n)
    draws = [sample_params(cfg.prior, np.random.default_rng(children[i]))
             for i in range(n)]
    want_probs = cfg.fusion == "prob-average"

    def one_sample(i: int):
        try:
            params = draws[i]
            augmented = apply_augmentation(v, params, cfg.prior)
            probs = predictor.predict(augmented)
            if want_probs:
                inv_probs = inverse_spatial(probs, params)
                hard = argmax_labels(inv_probs, cfg.class_labels)
                return hard, inv_probs
            hard = inverse_spatial(argmax_labels(probs, cfg.class_labels), params)
            return hard, None
        except Exception as exc:
            raise SampleFailedError(i, f"{type(exc).__name__}: {exc}") from exc

    if jobs > 1 and getattr(predictor, "concurrent_safe", False):
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(one_sample, i) for i in range(n)]
            results = [f.result() for f in futures]
    else:
        results = [one_sample(i) for i in range(n)]

    stack = SampleStack(maps=[hard for hard, _ in results], params=draws)
    if want_probs:
        fused_probs = average_probs([p for _, p in results])
        final = argmax_labels(fused_probs, cfg.class_labels)
    else:
        final = majority_vote(stack)
    return TtaResult(labels=final,
                     stack=stack if cfg.keep_samples else None,
                     params=draws)
