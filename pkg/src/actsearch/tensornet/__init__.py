"""Small numpy networks that expose what K-FAC needs: layer inputs and
pre-activation gradients under sampled labels."""
from .data import (
    Dataset,
    blobs_network,
    downsample,
    image_dataset,
    load_csv,
    load_idx,
    load_task,
    make_blobs,
    make_separable,
    make_tiles,
    tiles_network,
)
from .layers import (
    Conv2D,
    Dense,
    Depthwise2D,
    Flatten,
    GlobalAvgPool,
    SoftmaxHead,
    expand_patches,
    expand_patches_depthwise,
    param_count,
)
from .network import (
    BatchTrace,
    ForwardTrace,
    Network,
    NetworkSpec,
    ShapeError,
    backward,
    backward_sampled,
    forward,
    init_weights,
    negated_network,
    softmax,
)
from .train import TrainConfig, accuracy, train, train_detailed
