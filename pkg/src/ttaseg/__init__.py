"""Model-agnostic test-time augmentation for volumetric multi-class segmentation.

Samples spatial/intensity augmentations from configurable priors, fuses N
augmented predictions from a pluggable predictor into a final label map,
and derives a voxel-wise uncertainty map from the spread of the samples;
includes Dice/Hausdorff evaluation and a NIfTI-1 I/O subset.
"""

__version__ = "0.1.0"

from .engine import (
    MultiViewPredictor,
    SampleStack,
    TtaConfig,
    TtaResult,
    average_probs,
    majority_vote,
    multi_view_fuse,
    run_tta,
)
from .external import ExternalPredictor, ExternalPredictorPool
from .geometry import (
    AffineTransform,
    AugmentationParams,
    AugmentationPrior,
    add_noise,
    apply_augmentation,
    inverse_spatial,
    invert,
    params_to_affine,
    resample,
    sample_params,
    volume_center,
)
from .metrics import (
    DEFAULT_REGIONS,
    RegionSpec,
    dice,
    evaluate_case,
    hausdorff,
    region_binarize,
    summarize,
)
from .nifti import (
    load_label_map,
    load_sidecar,
    load_volume,
    save_label_map,
    save_sidecar,
    save_volume,
)
from .phantom import PhantomSpec, generate_phantom
from .predictors import (
    ConstantPredictor,
    PerturbedPredictor,
    Predictor,
    ThresholdPredictor,
)
from .uncertainty import boundary_uncertainty_summary, entropy_map
from .volume import (
    DEFAULT_LABEL_ALPHABET,
    LabelMap,
    ProbMap,
    UncertaintyMap,
    Volume,
    argmax_labels,
    normalize,
)

__all__ = [
    "__version__",
    "AffineTransform",
    "AugmentationParams",
    "AugmentationPrior",
    "ConstantPredictor",
    "DEFAULT_LABEL_ALPHABET",
    "DEFAULT_REGIONS",
    "ExternalPredictor",
    "ExternalPredictorPool",
    "LabelMap",
    "MultiViewPredictor",
    "PerturbedPredictor",
    "PhantomSpec",
    "Predictor",
    "ProbMap",
    "RegionSpec",
    "SampleStack",
    "ThresholdPredictor",
    "TtaConfig",
    "TtaResult",
    "UncertaintyMap",
    "Volume",
    "add_noise",
    "apply_augmentation",
    "argmax_labels",
    "average_probs",
    "boundary_uncertainty_summary",
    "dice",
    "entropy_map",
    "evaluate_case",
    "generate_phantom",
    "hausdorff",
    "inverse_spatial",
    "invert",
    "load_label_map",
    "load_sidecar",
    "load_volume",
    "majority_vote",
    "multi_view_fuse",
    "normalize",
    "params_to_affine",
    "region_binarize",
    "resample",
    "run_tta",
    "sample_params",
    "save_label_map",
    "save_sidecar",
    "save_volume",
    "summarize",
    "volume_center",
]
