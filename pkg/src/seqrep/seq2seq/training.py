"""Unsupervised autoencoder training and feature extraction."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional

import numpy as np

from .. import _binfmt
from .._parallel import ordered_map
from ..datamodel import DataSetContainer, Instance
from ..errors import IncompatibleCheckpointError, InvalidArgumentError, NumericalError
from ..tensorcore.optim import OptimizerState, adam_step, clip_gradients
from .checkpoint import Checkpoint, save_checkpoint
from .model import Autoencoder, AutoencoderTopology

log = logging.getLogger(__name__)

LOSS_LOG_NAME = "loss.tsv"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-3
    clip_norm: float = 2.0
    seed: int = 0
    checkpoint_dir: Optional[str] = None

    def __post_init__(self):
        if self.epochs < 0:
            raise InvalidArgumentError("epochs must be >= 0")
        if self.batch_size < 1:
            raise InvalidArgumentError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise InvalidArgumentError("learning rate must be >= 0")
        if not self.clip_norm > 0:
            raise InvalidArgumentError("clip_norm must be positive")


def pad_batch(sequences: List[np.ndarray]):
    """Zero-pad (T_i, F) arrays to (B, max T, F); returns ``(batch, mask)``."""
    lengths = np.array([s.shape[0] for s in sequences])
    T = int(lengths.max())
    batch = np.zeros((len(sequences), T, sequences[0].shape[1]), dtype=sequences[0].dtype)
    for b, s in enumerate(sequences):
        batch[b, :len(s)] = s
    return batch, np.arange(T)[None, :] < lengths[:, None]


def epoch_checkpoint_name(epoch: int) -> str:
    return f"epoch-{epoch:04d}.ckpt"


def train_autoencoder(container: DataSetContainer, topology: AutoencoderTopology,
                      config: TrainConfig = TrainConfig(),
                      on_epoch: Optional[Callable[[int, float], None]] = None) -> Checkpoint:
    """Train on every spectrogram in ``container``; labels are never read.

    Each epoch shuffles instances (seeded), pads every batch to its longest
    sequence and applies forward, RMSE, BPTT, global-norm clipping and Adam.
    With ``checkpoint_dir`` set, a checkpoint and the loss log are written
    after every epoch; a non-finite loss aborts before anything is written
    for the failing epoch.
    """
    if container.kind != "spectrogram":
        raise InvalidArgumentError(f"training needs spectrograms, container holds {container.kind}")
    if len(container) == 0:
        raise InvalidArgumentError("cannot train on an empty container")
    if container.dim != topology.input_dim:
        raise InvalidArgumentError(
            f"topology input_dim {topology.input_dim} != container frequency bins {container.dim}")
    init_seq, shuffle_seq, feedback_seq = np.random.SeedSequence(config.seed).spawn(3)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    feedback_rng = np.random.default_rng(feedback_seq)
    model = Autoencoder.initialize(topology, np.random.default_rng(init_seq))
    state = OptimizerState.for_params(model.params, learning_rate=config.learning_rate)
    ckpt = Checkpoint(topology, model.params, state, 0, [], config.seed)
    out_dir = Path(config.checkpoint_dir) if config.checkpoint_dir else None

    data = [inst.data for inst in container.instances]
    n = len(data)
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            batch, mask = pad_batch([data[i] for i in idx])
            try:
                loss, grads = model.loss_and_grads(batch, mask, rng=feedback_rng)
            except NumericalError as exc:
                raise NumericalError(f"epoch {epoch}, batch starting at {start}: {exc}") from exc
            grads = clip_gradients(grads, config.clip_norm)
            adam_step(model.params, grads, state)
            losses.append(loss)
        mean = float(np.mean(losses))
        ckpt.history.append(mean)
        ckpt.epoch = epoch
        log.info("epoch %d: mean RMSE %.6f", epoch, mean)
        if out_dir is not None:
            save_checkpoint(ckpt, out_dir / epoch_checkpoint_name(epoch))
            write_loss_log(out_dir / LOSS_LOG_NAME, ckpt.history)
        if on_epoch is not None:
            on_epoch(epoch, mean)
    return ckpt


def write_loss_log(path, history) -> None:
    lines = ["epoch\tmean_rmse"] + [f"{e}\t{h!r}" for e, h in enumerate(history, start=1)]
    _binfmt.atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def extract_features(container: DataSetContainer, checkpoint: Checkpoint, threads=None) -> DataSetContainer:
    """Bridge activations for every instance, in container order, metadata copied."""
    topo = checkpoint.topology
    if container.kind != "spectrogram":
        raise InvalidArgumentError(f"feature extraction needs spectrograms, container holds {container.kind}")
    if container.dim != topo.input_dim:
        raise IncompatibleCheckpointError(
            f"checkpoint was trained on {topo.input_dim} frequency bins, "
            f"container has {container.dim}")
    model = checkpoint.model

    def one(inst: Instance) -> np.ndarray:
        return model.represent(inst.data).astype(np.float32)

    rows = ordered_map(one, container.instances, threads)
    instances = [Instance(inst.instance_id, row, inst.label, inst.partition, inst.fold)
                 for inst, row in zip(container.instances, rows)]
    attrs = {"source": container.attrs, "topology": topo.to_dict(), "checkpoint_epoch": checkpoint.epoch}
    return DataSetContainer("features", topo.representation_dim, instances, container.num_folds, attrs)
