"""Recurrent sequence-to-sequence autoencoder: model, training, checkpoints."""
from .checkpoint import (
    Checkpoint,
    checkpoint_from_bytes,
    checkpoint_to_bytes,
    load_checkpoint,
    save_checkpoint,
)
from .model import Autoencoder, AutoencoderTopology, decoder_inputs, reverse_valid, rmse_loss
from .training import TrainConfig, extract_features, pad_batch, train_autoencoder

__all__ = [
    "Autoencoder", "AutoencoderTopology", "Checkpoint", "TrainConfig", "checkpoint_from_bytes",
    "checkpoint_to_bytes", "decoder_inputs",
    "extract_features", "load_checkpoint", "pad_batch", "reverse_valid", "rmse_loss",
    "save_checkpoint", "train_autoencoder",
]
