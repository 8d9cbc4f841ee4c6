from .functional import bce_loss, check_finite, mish, mish_grad, sigmoid, softplus
from .layers import (
    DenseBlock,
    Dropout,
    EmbeddingBottleneck,
    FrozenEmbedding,
    LayerNorm,
    Linear,
    Mish,
    Module,
    Parameter,
    SigmoidHead,
)
from .optim import Adam, Lookahead, make_optimizer
from .recurrent import GRU, LSTM, GRULayer, LSTMLayer, RecurrentStack
from .gradcheck import GradCheckReport, grad_check, relative_error
from .checkpoint import load_checkpoint, save_checkpoint
