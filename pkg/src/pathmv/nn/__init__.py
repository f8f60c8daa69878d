"""Small LSTM + MLP value network with exact reverse-mode gradients."""

from .network import (
    LstmParams,
    MlpParams,
    NetworkParams,
    init_params,
    lstm_chain,
    tip_stencil,
    value,
    values_batch,
)
from .optim import AdamState, opt_step
from .tape import Var, grad

__all__ = [
    "AdamState",
    "LstmParams",
    "MlpParams",
    "NetworkParams",
    "Var",
    "grad",
    "init_params",
    "lstm_chain",
    "opt_step",
    "tip_stencil",
    "value",
    "values_batch",
]
