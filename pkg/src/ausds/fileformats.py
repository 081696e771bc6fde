"""Readers and writers for the on-disk dataset artifacts.

Binary layouts (all integers little-endian):

  embedding file   magic ``AEMB`` | u32 version=1 | u64 count | u32 dim
                   | count*dim float32, row-major
  token file       magic ``ATOK`` | u32 version=1 | u64 count | u32 dim
                   | u64 total_tokens | (count+1) u64 offsets
                   | total_tokens*dim float32, row-major

Labels are UTF-8 TSV, one ``id<TAB>label`` line per sample; sequence labels
are comma-joined. The manifest is a JSON document tying the files together.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError

AEMB_MAGIC = b"AEMB"
ATOK_MAGIC = b"ATOK"
FORMAT_VERSION = 1


def write_embeddings(path: str | Path, vectors: np.ndarray) -> None:
    """Write a dense (count, dim) float matrix as an AEMB file."""
    vectors = np.ascontiguousarray(vectors, dtype="<f4")
    if vectors.ndim != 2:
        raise FormatError(f"expected a 2-D matrix, got shape {vectors.shape}")
    count, dim = vectors.shape
    with open(path, "wb") as fh:
        fh.write(AEMB_MAGIC)
        fh.write(struct.pack("<IQI", FORMAT_VERSION, count, dim))
        fh.write(vectors.tobytes())


def read_embeddings(path: str | Path, mmap: bool = False) -> np.ndarray:
    """Read an AEMB file into a (count, dim) float32 array."""
    header = struct.calcsize("<IQI")
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != AEMB_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {AEMB_MAGIC!r}")
        version, count, dim = struct.unpack("<IQI", fh.read(header))
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    offset = 4 + header
    if mmap:
        data = np.memmap(path, dtype="<f4", mode="r", offset=offset, shape=(count, dim))
    else:
        data = np.fromfile(path, dtype="<f4", offset=offset)
        if data.size != count * dim:
            raise FormatError(
                f"{path}: payload holds {data.size} floats, header promises {count * dim}"
            )
        data = data.reshape(count, dim)
    return data


def write_token_embeddings(path: str | Path, sequences: list[np.ndarray]) -> None:
    """Write ragged per-token vectors as an ATOK file."""
    if not sequences:
        raise FormatError("token file needs at least one sequence")
    dim = int(np.asarray(sequences[0]).shape[1])
    offsets = np.zeros(len(sequences) + 1, dtype="<u8")
    blocks = []
    for i, seq in enumerate(sequences):
        seq = np.ascontiguousarray(seq, dtype="<f4")
        if seq.ndim != 2 or seq.shape[1] != dim:
            raise FormatError(f"sequence {i}: expected (*, {dim}), got {seq.shape}")
        offsets[i + 1] = offsets[i] + seq.shape[0]
        blocks.append(seq)
    total = int(offsets[-1])
    with open(path, "wb") as fh:
        fh.write(ATOK_MAGIC)
        fh.write(struct.pack("<IQIQ", FORMAT_VERSION, len(sequences), dim, total))
        fh.write(offsets.tobytes())
        for block in blocks:
            fh.write(block.tobytes())


def read_token_embeddings(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read an ATOK file.

    Returns (flat, offsets): ``flat`` is (total_tokens, dim) float32 and the
    tokens of sample i live in ``flat[offsets[i]:offsets[i+1]]``.
    """
    header = struct.calcsize("<IQIQ")
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != ATOK_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {ATOK_MAGIC!r}")
        version, count, dim, total = struct.unpack("<IQIQ", fh.read(header))
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        offsets = np.frombuffer(fh.read(8 * (count + 1)), dtype="<u8")
        flat = np.fromfile(fh, dtype="<f4")
    if offsets.size != count + 1 or int(offsets[-1]) != total:
        raise FormatError(f"{path}: offsets table inconsistent with header")
    if flat.size != total * dim:
        raise FormatError(
            f"{path}: payload holds {flat.size} floats, header promises {total * dim}"
        )
    return flat.reshape(total, dim), offsets.astype(np.int64)


def write_labels(path: str | Path, ids: np.ndarray, labels: list) -> None:
    """Write labels TSV. Each label is an int or a sequence of ints."""
    with open(path, "w", encoding="utf-8") as fh:
        for sample_id, label in zip(ids, labels):
            if np.ndim(label) == 0:
                fh.write(f"{int(sample_id)}\t{int(label)}\n")
            else:
                joined = ",".join(str(int(v)) for v in label)
                fh.write(f"{int(sample_id)}\t{joined}\n")


def read_labels(path: str | Path) -> dict[int, int | np.ndarray]:
    """Read labels TSV into id -> label (int or int array)."""
    out: dict[int, int | np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise FormatError(f"{path}:{lineno}: expected 'id<TAB>label'")
            sample_id = int(parts[0])
            if sample_id in out:
                raise FormatError(f"{path}:{lineno}: duplicate id {sample_id}")
            if "," in parts[1]:
                out[sample_id] = np.array([int(v) for v in parts[1].split(",")], dtype=np.int64)
            else:
                out[sample_id] = int(parts[1])
    return out


@dataclass
class DatasetManifest:
    """Header document naming the files of one dataset."""

    name: str
    task: str  # "classification" | "labeling"
    num_classes: int
    embeddings_path: str
    labels_path: str
    dim: int
    count: int
    token_embeddings_path: str | None = None
    test_embeddings_path: str | None = None
    test_labels_path: str | None = None
    test_token_embeddings_path: str | None = None
    test_count: int = 0
    extra: dict = field(default_factory=dict)

    def resolve(self, key: str, base: Path) -> Path | None:
        value = getattr(self, key)
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else base / p

    def to_json(self) -> str:
        doc = {
            "name": self.name,
            "task": self.task,
            "num_classes": self.num_classes,
            "embeddings": self.embeddings_path,
            "labels": self.labels_path,
            "dim": self.dim,
            "count": self.count,
        }
        if self.token_embeddings_path is not None:
            doc["token_embeddings"] = self.token_embeddings_path
        if self.test_embeddings_path is not None:
            doc["test_embeddings"] = self.test_embeddings_path
            doc["test_labels"] = self.test_labels_path
            doc["test_count"] = self.test_count
        if self.test_token_embeddings_path is not None:
            doc["test_token_embeddings"] = self.test_token_embeddings_path
        doc.update(self.extra)
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def write_manifest(path: str | Path, manifest: DatasetManifest) -> None:
    Path(path).write_text(manifest.to_json(), encoding="utf-8")


def read_manifest(path: str | Path) -> DatasetManifest:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        manifest = DatasetManifest(
            name=doc["name"],
            task=doc["task"],
            num_classes=int(doc["num_classes"]),
            embeddings_path=doc["embeddings"],
            labels_path=doc["labels"],
            dim=int(doc["dim"]),
            count=int(doc["count"]),
            token_embeddings_path=doc.get("token_embeddings"),
            test_embeddings_path=doc.get("test_embeddings"),
            test_labels_path=doc.get("test_labels"),
            test_token_embeddings_path=doc.get("test_token_embeddings"),
            test_count=int(doc.get("test_count", 0)),
        )
    except KeyError as exc:
        raise FormatError(f"{path}: manifest missing field {exc}") from exc
    if manifest.task not in ("classification", "labeling"):
        raise FormatError(f"{path}: unknown task {manifest.task!r}")
    return manifest
