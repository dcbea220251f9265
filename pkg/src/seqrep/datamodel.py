"""Dataset containers, metadata import, stratified folds and feature fusion.

A :class:`DataSetContainer` holds either spectrograms (each instance a
T x F matrix) or feature vectors (each instance a length-D vector) together
with optional label, partition and fold metadata. Containers persist to a
checksummed binary file with magic ``ADRL`` (see :mod:`seqrep._binfmt`).
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import _binfmt
from .errors import (
    CorruptContainerError,
    DuplicateInstanceError,
    FusionMismatchError,
    InvalidArgumentError,
    MetadataConflictError,
    SeqrepIOError,
    ShapeError,
)

log = logging.getLogger(__name__)

MAGIC = b"ADRL"
FORMAT_VERSION = 1
KINDS = ("spectrogram", "features")
PARTITIONS = ("train", "devel", "test")
METADATA_COLUMNS = ("id", "label", "partition", "fold")


@dataclass(eq=False)
class Instance:
    instance_id: str
    data: np.ndarray
    label: Optional[str] = None
    partition: Optional[str] = None
    fold: Optional[int] = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)

    def metadata(self):
        return self.label, self.partition, self.fold

    def __eq__(self, other):
        if not isinstance(other, Instance):
            return NotImplemented
        return (self.instance_id == other.instance_id and self.metadata() == other.metadata()
                and self.data.dtype == other.data.dtype and self.data.shape == other.data.shape
                and self.data.tobytes() == other.data.tobytes())


@dataclass(eq=False)
class DataSetContainer:
    kind: str
    dim: int
    instances: List[Instance] = field(default_factory=list)
    num_folds: Optional[int] = None
    attrs: Dict = field(default_factory=dict)

    def __post_init__(self):
        if self.num_folds is None:
            folds = [i.fold for i in self.instances if i.fold is not None]
            if folds:
                self.num_folds = max(folds) + 1
        self.validate()

    def __len__(self):
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    def __eq__(self, other):
        if not isinstance(other, DataSetContainer):
            return NotImplemented
        return (self.kind == other.kind and self.dim == other.dim and self.num_folds == other.num_folds
                and self.attrs == other.attrs and self.instances == other.instances)

    @property
    def ids(self) -> List[str]:
        return [i.instance_id for i in self.instances]

    @property
    def labels(self) -> List[Optional[str]]:
        return [i.label for i in self.instances]

    @property
    def folds(self) -> List[Optional[int]]:
        return [i.fold for i in self.instances]

    @property
    def vocabulary(self) -> List[str]:
        return sorted({i.label for i in self.instances if i.label is not None})

    def has_folds(self) -> bool:
        return bool(self.instances) and all(i.fold is not None for i in self.instances)

    def matrix(self) -> np.ndarray:
        """Feature containers only: the (N, D) float32 matrix in instance order."""
        if self.kind != "features":
            raise InvalidArgumentError(f"matrix() needs a features container, this one holds {self.kind}")
        if not self.instances:
            return np.zeros((0, self.dim), dtype=np.float32)
        return np.stack([i.data for i in self.instances])

    def validate(self):
        if self.kind not in KINDS:
            raise InvalidArgumentError(f"unknown payload kind {self.kind!r}")
        if int(self.dim) < 1:
            raise InvalidArgumentError(f"dimension must be positive, got {self.dim}")
        seen = set()
        for inst in self.instances:
            if inst.instance_id in seen:
                raise DuplicateInstanceError(f"duplicate instance id {inst.instance_id!r}")
            seen.add(inst.instance_id)
            shape = inst.data.shape
            if self.kind == "spectrogram":
                ok = len(shape) == 2 and shape[0] >= 1 and shape[1] == self.dim
            else:
                ok = shape == (self.dim,)
            if not ok:
                raise ShapeError(f"instance {inst.instance_id!r} has shape {shape}, "
                                 f"inconsistent with {self.kind} dim {self.dim}")
            if inst.partition is not None and inst.partition not in PARTITIONS:
                raise InvalidArgumentError(f"instance {inst.instance_id!r}: unknown partition {inst.partition!r}")
            if inst.fold is not None and not (0 <= inst.fold < (self.num_folds or 0)):
                raise InvalidArgumentError(f"instance {inst.instance_id!r}: fold {inst.fold} "
                                           f"outside [0, {self.num_folds})")

    def with_folds(self, folds: Sequence[int], num_folds: int) -> "DataSetContainer":
        instances = [replace(inst, fold=int(f)) for inst, f in zip(self.instances, folds)]
        return DataSetContainer(self.kind, self.dim, instances, num_folds, dict(self.attrs))


# -- persistence -------------------------------------------------------------

def container_to_bytes(container: DataSetContainer) -> bytes:
    container.validate()
    records = [{"id": i.instance_id, "label": i.label, "partition": i.partition, "fold": i.fold,
                "shape": list(i.data.shape)} for i in container.instances]
    if container.instances:
        payload = np.concatenate([i.data.astype("<f4").ravel() for i in container.instances])
    else:
        payload = np.zeros(0, dtype="<f4")
    header = {"kind": container.kind, "dim": int(container.dim), "vocabulary": container.vocabulary,
              "num_folds": container.num_folds, "attrs": container.attrs, "instances": records}
    return _binfmt.pack(MAGIC, FORMAT_VERSION, header, [("payload", payload)])


def container_from_bytes(data: bytes) -> DataSetContainer:
    header, arrays = _binfmt.unpack(data, MAGIC, FORMAT_VERSION, CorruptContainerError)
    try:
        payload = arrays["payload"]
        instances, offset = [], 0
        for rec in header["instances"]:
            size = int(np.prod(rec["shape"]))
            if offset + size > payload.size:
                raise CorruptContainerError("instance shapes exceed stored payload")
            arr = payload[offset:offset + size].astype(np.float32).reshape(rec["shape"])
            offset += size
            instances.append(Instance(rec["id"], arr, rec["label"], rec["partition"], rec["fold"]))
        if offset != payload.size:
            raise CorruptContainerError("stored payload larger than instance shapes")
        vocab = set(header["vocabulary"])
        if any(i.label is not None and i.label not in vocab for i in instances):
            raise CorruptContainerError("instance label missing from stored vocabulary")
        return DataSetContainer(header["kind"], header["dim"], instances, header["num_folds"], header["attrs"])
    except (KeyError, TypeError) as exc:
        raise CorruptContainerError(f"malformed container header: {exc}") from exc


def save_container(container: DataSetContainer, path) -> None:
    _binfmt.atomic_write(path, container_to_bytes(container))


def load_container(path) -> DataSetContainer:
    data = _binfmt.read_bytes(path)
    try:
        return container_from_bytes(data)
    except CorruptContainerError as exc:
        raise CorruptContainerError(f"{path}: {exc}") from exc


# -- audio directory import ----------------------------------------------------

@dataclass
class AudioEntry:
    instance_id: str
    path: Path
    label: Optional[str] = None
    partition: Optional[str] = None
    fold: Optional[int] = None


@dataclass
class ScanResult:
    entries: List[AudioEntry]
    dangling: List[str] = field(default_factory=list)  # metadata ids with no file
    unlisted: List[str] = field(default_factory=list)  # files absent from the metadata table

    @property
    def warnings(self) -> int:
        return len(self.dangling)


def _id_sort_key(instance_id: str):
    return instance_id.encode("utf-8")


def read_metadata_table(path) -> Dict[str, dict]:
    """Parse a comma- or tab-separated table with header ``id[,label][,partition][,fold]``."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise SeqrepIOError(f"cannot read metadata table {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines:
        raise InvalidArgumentError(f"metadata table {path} is empty")
    delimiter = "\t" if "\t" in lines[0] else ","
    reader = csv.DictReader(lines, delimiter=delimiter)
    columns = [c.strip() for c in reader.fieldnames or []]
    unknown = [c for c in columns if c not in METADATA_COLUMNS]
    if "id" not in columns or unknown:
        raise InvalidArgumentError(
            f"metadata table {path} must have an 'id' column and only {METADATA_COLUMNS}; got {columns}")
    reader.fieldnames = columns
    rows: Dict[str, dict] = {}
    for lineno, row in enumerate(reader, start=2):
        rid = (row.get("id") or "").strip()
        if not rid:
            raise InvalidArgumentError(f"{path}:{lineno}: empty id")
        if rid in rows:
            raise DuplicateInstanceError(f"{path}:{lineno}: duplicate id {rid!r}")
        label = (row.get("label") or "").strip() or None
        partition = (row.get("partition") or "").strip() or None
        if partition is not None and partition not in PARTITIONS:
            raise InvalidArgumentError(f"{path}:{lineno}: unknown partition {partition!r}")
        fold_text = (row.get("fold") or "").strip()
        try:
            fold = int(fold_text) if fold_text else None
        except ValueError:
            raise InvalidArgumentError(f"{path}:{lineno}: fold {fold_text!r} is not an integer") from None
        if fold is not None and fold < 0:
            raise InvalidArgumentError(f"{path}:{lineno}: negative fold")
        rows[rid] = {"label": label, "partition": partition, "fold": fold}
    return rows


def import_audio_directory(root, label_source: str = "parent-dir", metadata=None) -> ScanResult:
    """Recursively collect WAV files under ``root``.

    Instance ids are ``/``-separated paths relative to ``root``, sorted by
    their UTF-8 bytes. ``label_source`` is ``"parent-dir"`` (label = name of
    the containing directory; files directly in ``root`` stay unlabelled),
    ``"none"``, or ``"metadata"`` (inner join with the table at
    ``metadata`` on relative path).
    """
    root = Path(root)
    if not root.is_dir():
        raise SeqrepIOError(f"input directory {root} does not exist")
    files = {}
    for p in root.rglob("*"):
        if p.is_file() and p.suffix.lower() == ".wav":
            rid = p.relative_to(root).as_posix()
            if rid in files:
                raise DuplicateInstanceError(f"duplicate instance id {rid!r}")
            files[rid] = p
    ids = sorted(files, key=_id_sort_key)

    if label_source == "none":
        return ScanResult([AudioEntry(i, files[i]) for i in ids])
    if label_source == "parent-dir":
        entries = []
        for i in ids:
            parts = i.split("/")
            entries.append(AudioEntry(i, files[i], parts[-2] if len(parts) > 1 else None))
        return ScanResult(entries)
    if label_source != "metadata":
        raise InvalidArgumentError(f"unknown label source {label_source!r}")
    if metadata is None:
        raise InvalidArgumentError("label_source='metadata' needs a metadata table path")

    table = read_metadata_table(metadata)
    dangling = sorted((rid for rid in table if rid not in files), key=_id_sort_key)
    for rid in dangling:
        log.warning("metadata row %r references a missing file; skipped", rid)
    entries = [AudioEntry(i, files[i], **table[i]) for i in ids if i in table]
    unlisted = [i for i in ids if i not in table]
    if unlisted:
        log.info("%d audio file(s) not listed in %s were ignored", len(unlisted), metadata)
    return ScanResult(entries, dangling, unlisted)


# -- stratified folds ------------------------------------------------------------

@dataclass
class FoldAssignment:
    k: int
    folds: np.ndarray  # per-instance fold index
    seed: Optional[int] = None

    def fold_sizes(self) -> np.ndarray:
        return np.bincount(self.folds, minlength=self.k)


def generate_stratified_folds(labels: Sequence[str], k: int, seed: Optional[int] = 0) -> FoldAssignment:
    """Deal each class's shuffled instances round-robin over ``k`` folds.

    The dealing position carries over from one class to the next (classes in
    sorted order), so fold sizes also differ by at most one and every fold is
    non-empty whenever ``k <= len(labels)``.
    """
    labels = list(labels)
    if k < 2:
        raise InvalidArgumentError(f"need at least 2 folds, got {k}")
    if k > len(labels):
        raise InvalidArgumentError(f"cannot split {len(labels)} instances into {k} folds")
    if any(lab is None for lab in labels):
        raise InvalidArgumentError("stratified folds need a label for every instance")
    rng = np.random.default_rng(seed)
    label_arr = np.array(labels, dtype=object)
    folds = np.empty(len(labels), dtype=np.int64)
    pos = 0
    for cls in sorted(set(labels)):
        members = rng.permutation(np.flatnonzero(label_arr == cls))
        folds[members] = (pos + np.arange(len(members))) % k
        pos = (pos + len(members)) % k
    return FoldAssignment(k, folds, seed)


# -- fusion ----------------------------------------------------------------------

def fuse_features(containers: Sequence[DataSetContainer]) -> DataSetContainer:
    """Concatenate per-instance feature vectors, aligned by instance id.

    Row order follows the first container. Metadata fields must agree
    wherever more than one container sets them.
    """
    if len(containers) < 2:
        raise InvalidArgumentError("fusion needs at least two containers")
    for idx, c in enumerate(containers):
        if c.kind != "features":
            raise InvalidArgumentError(f"container {idx} holds {c.kind}, not features")
    first = containers[0]
    base_ids = set(first.ids)
    for idx, c in enumerate(containers[1:], start=1):
        diff = base_ids ^ set(c.ids)
        if diff:
            shown = sorted(diff)[:10]
            raise FusionMismatchError(
                f"container {idx} instance ids differ from container 0; offending ids: {shown}", diff)
    lookups = [{i.instance_id: i for i in c.instances} for c in containers]
    fused = []
    for inst in first.instances:
        parts = [lk[inst.instance_id] for lk in lookups]
        meta = []
        for fname in ("label", "partition", "fold"):
            values = {getattr(p, fname) for p in parts} - {None}
            if len(values) > 1:
                raise MetadataConflictError(
                    f"instance {inst.instance_id!r} has conflicting {fname} values {sorted(map(str, values))}")
            meta.append(values.pop() if values else None)
        fused.append(Instance(inst.instance_id, np.concatenate([p.data for p in parts]), *meta))
    folds = [c.num_folds for c in containers if c.num_folds is not None]
    attrs = {"fused_from": [c.attrs for c in containers]}
    return DataSetContainer("features", sum(c.dim for c in containers), fused,
                            max(folds) if folds else None, attrs)
