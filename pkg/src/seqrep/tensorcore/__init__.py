"""Dense numerical core: recurrent cells, BPTT, Adam and clipping."""
from .cells import CellParams, gru_cell_forward, lstm_cell_forward, sigmoid
from .gradcheck import BlockCheck, compare_gradients, numerical_gradient
from .optim import OptimizerState, adam_step, clip_gradients, global_norm
from .rnn import RnnTrace, lengths_to_mask, rnn_backward, rnn_forward

__all__ = [
    "BlockCheck", "CellParams", "OptimizerState", "RnnTrace", "adam_step", "clip_gradients",
    "compare_gradients", "global_norm", "gru_cell_forward", "lengths_to_mask",
    "lstm_cell_forward", "numerical_gradient", "rnn_backward", "rnn_forward", "sigmoid",
]
