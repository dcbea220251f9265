"""Versioned, checksummed autoencoder checkpoints (magic ``SRCK``).

The header records topology, epoch, loss history, seed and optimizer
hyperparameters; blobs hold every parameter followed by the Adam first
and second moments (``param:<name>``, ``adam_m:<name>``, ``adam_v:<name>``).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .. import _binfmt
from ..errors import CorruptCheckpointError, SeqrepIOError
from ..tensorcore.optim import OptimizerState
from .model import Autoencoder, AutoencoderTopology

MAGIC = b"SRCK"
FORMAT_VERSION = 1
FINAL_NAME = "model.ckpt"


@dataclass
class Checkpoint:
    topology: AutoencoderTopology
    params: Dict[str, np.ndarray]
    optimizer: OptimizerState
    epoch: int = 0
    history: List[float] = field(default_factory=list)
    seed: Optional[int] = None

    @property
    def model(self) -> Autoencoder:
        return Autoencoder(self.topology, self.params)


def checkpoint_to_bytes(ckpt: Checkpoint) -> bytes:
    names = list(ckpt.params)
    blobs = [(f"param:{k}", ckpt.params[k]) for k in names]
    if ckpt.optimizer.m:
        blobs += [(f"adam_m:{k}", ckpt.optimizer.m[k]) for k in names]
        blobs += [(f"adam_v:{k}", ckpt.optimizer.v[k]) for k in names]
    header = {
        "topology": ckpt.topology.to_dict(),
        "epoch": int(ckpt.epoch),
        "history": [float(h) for h in ckpt.history],
        "seed": ckpt.seed,
        "optimizer": dict(ckpt.optimizer.hyperparameters(), step=int(ckpt.optimizer.step)),
        "parameter_names": names,
    }
    return _binfmt.pack(MAGIC, FORMAT_VERSION, header, blobs)


def checkpoint_from_bytes(data: bytes) -> Checkpoint:
    header, arrays = _binfmt.unpack(data, MAGIC, FORMAT_VERSION, CorruptCheckpointError)
    try:
        topo = AutoencoderTopology.from_dict(header["topology"])
        names = header["parameter_names"]
        params = {k: arrays[f"param:{k}"] for k in names}
        opt = dict(header["optimizer"])
        step = opt.pop("step")
        state = OptimizerState(step=step, **opt)
        if f"adam_m:{names[0]}" in arrays:
            state.m = {k: arrays[f"adam_m:{k}"] for k in names}
            state.v = {k: arrays[f"adam_v:{k}"] for k in names}
        ckpt = Checkpoint(topo, params, state, header["epoch"], list(header["history"]), header["seed"])
        ckpt.model  # validates shapes against topology
        return ckpt
    except (KeyError, TypeError, IndexError, ValueError) as exc:
        raise CorruptCheckpointError(f"malformed checkpoint header: {exc}") from exc


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    _binfmt.atomic_write(path, checkpoint_to_bytes(ckpt))


def resolve_checkpoint_path(path) -> Path:
    """A directory resolves to its final ``model.ckpt`` or, failing that, the latest epoch file."""
    path = Path(path)
    if not path.is_dir():
        return path
    if (path / FINAL_NAME).is_file():
        return path / FINAL_NAME
    epochs = sorted(path.glob("epoch-*.ckpt"))
    if not epochs:
        raise SeqrepIOError(f"no checkpoint found in directory {path}")
    return epochs[-1]


def load_checkpoint(path) -> Checkpoint:
    path = resolve_checkpoint_path(path)
    data = _binfmt.read_bytes(path)
    try:
        return checkpoint_from_bytes(data)
    except CorruptCheckpointError as exc:
        raise CorruptCheckpointError(f"{path}: {exc}") from exc
