"""featinv: reconstruct images from HOG, dense SIFT, and small CNN codes.

A feature representation is expressed as a stack of differentiable layers;
reconstruction minimizes the normalized code mismatch plus natural-image
priors (range-bounding alpha-norm, total-variation energy) with momentum
gradient descent from seeded noise.
"""

from .descriptors import (
    Box,
    DescriptorParams,
    build_dsift,
    build_hog,
    build_hogb,
    build_toy_cnn,
    center_window,
    crop_to_cells,
    receptive_field,
    receptive_field_size,
)
from .evaluate import (
    ExperimentReport,
    normalization_constant,
    normalized_error,
    run_experiment,
)
from .inverter import (
    DivergenceError,
    InversionConfig,
    ObjectiveTerms,
    ReconstructionResult,
    invert,
    make_channel_mask,
    make_spatial_mask,
    objective,
)
from .layers import (
    ClampCeiling,
    Conv2d,
    DirectionalBinning,
    GroupNorm,
    Layer,
    MaxPool,
    Network,
    ReLU,
    gradient_check,
    layer_gradient_check,
)
from .netio import load_network, save_network
from .oracles import dsift_oracle, hog_oracle, hogb_oracle
from .priors import (
    PriorConfig,
    alpha_norm,
    balance_coefficients,
    estimate_sigma,
    tv_beta,
)
from .tensor import (
    ImageFormatError,
    TensorFormatError,
    load_image,
    read_tensor,
    save_image,
    write_tensor,
)

__version__ = "0.1.0"
