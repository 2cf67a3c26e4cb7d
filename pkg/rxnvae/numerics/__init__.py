from .checkpoint import load_checkpoint, load_checkpoint_f32, save_checkpoint
from .nn import GRUWeights, ParamStore, add_linear, apply_linear, gru_cell
from .optim import AdamState, adam_step, clip_grad_norm
from .tensor import (
    Tape,
    Tensor,
    add,
    add_n,
    backward,
    bce_with_logits,
    concat,
    constant,
    cross_entropy,
    current_tape,
    dot,
    exp,
    kl_diag_gaussian,
    linear,
    log_softmax,
    matvec,
    mul,
    no_grad,
    one_hot,
    relu,
    scale,
    sigmoid,
    softmax,
    softmax_np,
    stack,
    sub,
    tanh,
    total,
    transpose,
    zeros,
)
