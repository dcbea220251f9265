"""CSV and ARFF writers for feature containers.

Both writers use ``\\n`` line endings and print every value with the
shortest decimal string that round-trips to the same 32-bit float, so
output is byte-deterministic.
"""
from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _binfmt
from .datamodel import PARTITIONS, DataSetContainer
from .errors import InvalidArgumentError, MissingMetadataError

FORMATS = ("csv", "arff")
_ARFF_BARE = re.compile(r"^[A-Za-z0-9_.\-+]+$")


@dataclass(frozen=True)
class ExportSpec:
    format: str
    path: str
    include_label: bool = True
    include_partition: bool = False
    include_fold: bool = False
    relation: str = "seqrep_features"

    def __post_init__(self):
        if self.format not in FORMATS:
            raise InvalidArgumentError(f"unknown export format {self.format!r}; choose from {FORMATS}")
        if self.format == "arff" and not self.relation:
            raise InvalidArgumentError("ARFF export needs a non-empty relation name")


def format_float(value) -> str:
    """Shortest decimal representation that parses back to the same float32."""
    v = np.float32(value)
    if not np.isfinite(v):
        raise InvalidArgumentError(f"cannot export non-finite value {v}")
    return str(v)


def _check_features(container: DataSetContainer):
    if container.kind != "features":
        raise InvalidArgumentError(f"export needs a features container, got {container.kind}")


def _metadata_columns(spec: ExportSpec):
    cols = []
    if spec.include_label:
        cols.append("label")
    if spec.include_partition:
        cols.append("partition")
    if spec.include_fold:
        cols.append("fold")
    return cols


def csv_text(container: DataSetContainer, spec: ExportSpec) -> str:
    _check_features(container)
    meta = _metadata_columns(spec)
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
    writer.writerow(["id"] + [f"f{i}" for i in range(container.dim)] + meta)
    for inst in container.instances:
        row = [inst.instance_id] + [format_float(v) for v in inst.data]
        for col in meta:
            value = getattr(inst, col)
            row.append("" if value is None else str(value))
        writer.writerow(row)
    return out.getvalue()


def export_csv(container: DataSetContainer, spec: ExportSpec) -> Path:
    """Header ``id,f0,...,f{D-1}[,label][,partition][,fold]``, one row per instance."""
    path = Path(spec.path)
    _binfmt.atomic_write(path, csv_text(container, spec).encode("utf-8"))
    return path


def arff_quote(value: str) -> str:
    if _ARFF_BARE.match(value) and value != "?":
        return value
    return "'" + value.replace("\\", "\\\\").replace("'", "\\'") + "'"


def arff_text(container: DataSetContainer, spec: ExportSpec) -> str:
    _check_features(container)
    meta = _metadata_columns(spec)
    vocab = container.vocabulary
    if spec.include_label and not vocab:
        if container.instances:
            raise MissingMetadataError("label column requested but the container has no labels")
        # an empty nominal set is not valid ARFF; nothing to label anyway
        meta.remove("label")
    lines = [f"@RELATION {arff_quote(spec.relation)}", "", "@ATTRIBUTE id STRING"]
    lines += [f"@ATTRIBUTE f{i} NUMERIC" for i in range(container.dim)]
    if "label" in meta:
        lines.append("@ATTRIBUTE label {" + ",".join(arff_quote(v) for v in vocab) + "}")
    if spec.include_partition:
        lines.append("@ATTRIBUTE partition {" + ",".join(PARTITIONS) + "}")
    if spec.include_fold:
        lines.append("@ATTRIBUTE fold NUMERIC")
    lines += ["", "@DATA"]
    for inst in container.instances:
        row = [arff_quote(inst.instance_id)] + [format_float(v) for v in inst.data]
        for col in meta:
            value = getattr(inst, col)
            row.append("?" if value is None else arff_quote(str(value)))
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def export_arff(container: DataSetContainer, spec: ExportSpec) -> Path:
    path = Path(spec.path)
    _binfmt.atomic_write(path, arff_text(container, spec).encode("utf-8"))
    return path


def export(container: DataSetContainer, spec: ExportSpec) -> Path:
    return export_csv(container, spec) if spec.format == "csv" else export_arff(container, spec)
