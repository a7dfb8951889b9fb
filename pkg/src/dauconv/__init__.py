"""CNN library built on displaced-aggregation-unit convolutions.

Filters are mixtures of fixed-variance Gaussian units at learned
sub-pixel displacements. The package provides the layer (fast path,
explicit-filter oracle, full gradients), classic baseline layers, an SGD
training engine, CIFAR-10 binary ingestion, binary checkpoints, and the
displacement-distribution / pruning analyses, all behind one CLI.
"""

from .analysis import (
    DisplacementStats,
    distance_histogram,
    parameter_report,
    prune_by_relative_threshold,
    scatter_export,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .dau import (
    DauGradients,
    DauLayerParams,
    bilinear_weights,
    dau_backward,
    dau_forward,
    dau_forward_oracle,
    init_params,
    scale_displacements,
)
from .data import DatasetSplit, load_cifar10, write_synthetic_cifar
from .engine import (
    LayerSpec,
    Model,
    NetworkSpec,
    TrainConfig,
    build_network,
    evaluate,
    sgd_step,
    train,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DataFormatError,
    DauConvError,
    TrainingError,
)
from .gaussian import GaussianKernelBank, blur_channels, blur_derivative_channels, build_bank

__version__ = "0.1.0"
