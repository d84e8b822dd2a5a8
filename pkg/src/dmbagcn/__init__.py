"""Dual selective-state-space enhancement of graph convolutional networks.

Two branches fight over-smoothing from opposite directions: a per-node scan
over hop-depth sequences keeps layer-wise evolution node-specific, and a
bidirectional scan over the whole node sequence injects linear-time global
context. A convex fusion of the two feeds a linear classifier.
"""

from .data import SplitSpec, generate_sbm, load_dataset, make_splits, save_dataset
from .errors import (
    DatasetError,
    EmptySelectionError,
    ShapeError,
    SingularityError,
    TrainingDivergedError,
    ValidationError,
)
from .estimator import DMbaGCNClassifier
from .experiments import (
    bench,
    depth_study,
    features_logreg_accuracy,
    propagation_baseline_accuracy,
    sweep,
)
from .gcamba import (
    GcambaLayer,
    build_node_sequence,
    gcamba_forward,
    init_gcamba,
    reversal_equivariance_check,
)
from .graph import (
    Graph,
    LayerSequence,
    NormalizedPropagator,
    build_layer_sequence,
    normalize,
    oversmoothing_metric,
    propagate,
)
from .lsemba import LsembaLayer, init_lsemba, lsemba_forward, lsemba_gradcheck
from .model import (
    DmbaModel,
    RunReport,
    TrainConfig,
    evaluate,
    forward,
    init_model,
    train,
)
from .ssm import (
    SsmBlock,
    discretize,
    generate_params,
    init_hippo,
    kernel_oracle,
    selective_scan,
)
from .tensor import Adam, Tape, Tensor, adam_step, gradcheck, ssm_scan

__version__ = "0.1.0"

__all__ = [
    "Adam", "DMbaGCNClassifier", "DatasetError", "DmbaModel",
    "EmptySelectionError", "GcambaLayer", "Graph", "LayerSequence",
    "LsembaLayer", "NormalizedPropagator", "RunReport", "ShapeError",
    "SingularityError", "SplitSpec", "SsmBlock", "Tape", "Tensor",
    "TrainConfig", "TrainingDivergedError", "ValidationError", "adam_step",
    "bench", "build_layer_sequence", "build_node_sequence", "depth_study",
    "discretize", "evaluate", "features_logreg_accuracy", "forward",
    "gcamba_forward", "generate_params", "generate_sbm", "gradcheck",
    "init_gcamba", "init_hippo", "init_lsemba", "init_model", "kernel_oracle",
    "load_dataset", "lsemba_forward", "lsemba_gradcheck", "make_splits",
    "normalize", "oversmoothing_metric", "propagate",
    "propagation_baseline_accuracy", "reversal_equivariance_check",
    "save_dataset", "selective_scan", "ssm_scan", "sweep", "train",
]
