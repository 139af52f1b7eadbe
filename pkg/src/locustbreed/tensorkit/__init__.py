"""Minimal N-D tensor library with reverse-mode autodiff."""
from .conv import conv2d, conv3d, conv_transpose2d
from .gradcheck import check_gradients
from .losses import IGNORE, EmptyMask, cross_entropy, hinge, masked_pixel_cross_entropy
from .nn import (
    Conv2d,
    Conv3d,
    ConvLSTMCell,
    ConvTranspose2d,
    LayerNorm,
    Linear,
    LSTMCell,
    Module,
    MultiHeadAttention,
    PatchEmbed3d,
    convlstm_cell,
    lstm_cell,
    multi_head_attention,
    patch_embed_3d,
)
from .snapshot import decode_tensor, encode_tensor
from .tensor import (
    ShapeError,
    Tensor,
    add,
    avg_pool2d,
    concat,
    div,
    exp,
    gelu,
    getitem,
    is_grad_enabled,
    layer_norm,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    no_grad,
    pad,
    relu,
    reshape,
    sigmoid,
    softmax,
    stack,
    sub,
    sum_,
    tanh,
    transpose,
)
