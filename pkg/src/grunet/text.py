"""Histopathology text labels, pluggable label encoders and the 32x32 text projection.

The language model that embeds the labels is not a dependency. Embeddings
produced elsewhere are exchanged through a single JSON file::

    {
      "format": "grunet-embeddings",
      "version": 1,
      "label_count": 16,
      "dim": N,
      "encoder_id": "distilbert-base-uncased/cls",
      "labels": [...],                  # optional, checked when present
      "dtype": "<f8",
      "data": "<base64 of row-major float64 values>"
    }

``StubEncoder`` gives deterministic hash-seeded vectors for tests and desk runs.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import torch
from torch import nn

N_LABELS = 16
PROJECTED_SIDE = 32
FORMAT_NAME = "grunet-embeddings"


class TextConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LabelSet:
    labels: tuple[str, ...]

    def __post_init__(self):
        validate_labels(self.labels)

    def __len__(self):
        return len(self.labels)

    def __iter__(self):
        return iter(self.labels)


def validate_labels(labels):
    if len(labels) != N_LABELS:
        raise TextConfigError(f"expected {N_LABELS} labels, found {len(labels)}")
    seen = set()
    for label in labels:
        if not label:
            raise TextConfigError("empty label")
        if label in seen:
            raise TextConfigError(f"duplicate label: {label!r}")
        seen.add(label)


def default_labels_path() -> Path:
    return Path(str(resources.files("grunet") / "resources" / "labels.txt"))


def load_labels(path=None) -> LabelSet:
    path = Path(path) if path is not None else default_labels_path()
    if not path.is_file():
        raise TextConfigError(f"labels file not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    # tolerate one trailing blank line from editors
    while lines and not lines[-1].strip():
        lines.pop()
    return LabelSet(tuple(line.strip() for line in lines))


class StubEncoder:
    """Maps each label to a standard-normal vector seeded by its SHA-256 digest."""

    def __init__(self, dim=64, salt=""):
        self.dim = dim
        self.salt = salt
        self.encoder_id = f"stub-sha256-normal/{dim}" + (f"/{salt}" if salt else "")

    def encode(self, label: str) -> np.ndarray:
        digest = hashlib.sha256((self.salt + label).encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        return rng.standard_normal(self.dim)


class FileEncoder:
    """Looks labels up in a precomputed embeddings interchange file."""

    def __init__(self, path):
        self.path = Path(path)
        if not self.path.is_file():
            raise TextConfigError(f"embeddings file not found: {self.path}")
        self.matrix, header = read_embeddings(self.path)
        self.dim = self.matrix.shape[1]
        self.encoder_id = header["encoder_id"]
        self._labels = header.get("labels")

    def encode_all(self, labels: LabelSet) -> np.ndarray:
        if self._labels is not None and list(self._labels) != list(labels):
            raise TextConfigError(f"labels in {self.path} do not match the configured label set")
        return self.matrix


def encode_labels(labels: LabelSet, encoder) -> np.ndarray:
    """Return the (16, N) float64 embedding matrix, row i for label i."""
    if hasattr(encoder, "encode_all"):
        raw = np.asarray(encoder.encode_all(labels), dtype=np.float64)
    else:
        raw = np.stack([np.asarray(encoder.encode(label), dtype=np.float64) for label in labels])
    if raw.ndim != 2 or raw.shape[0] != N_LABELS or raw.shape[1] < 1:
        raise TextConfigError(f"encoder produced shape {raw.shape}, expected ({N_LABELS}, N)")
    if not np.isfinite(raw).all():
        raise TextConfigError("encoder produced non-finite values")
    return raw


def write_embeddings(path, matrix: np.ndarray, encoder_id: str, labels=None):
    matrix = np.ascontiguousarray(matrix, dtype="<f8")
    if matrix.ndim != 2:
        raise TextConfigError(f"embedding matrix must be 2-D, got {matrix.shape}")
    doc = {
        "format": FORMAT_NAME,
        "version": 1,
        "label_count": int(matrix.shape[0]),
        "dim": int(matrix.shape[1]),
        "encoder_id": encoder_id,
        "dtype": "<f8",
        "data": base64.b64encode(matrix.tobytes(order="C")).decode("ascii"),
    }
    if labels is not None:
        doc["labels"] = list(labels)
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def read_embeddings(path):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != FORMAT_NAME:
        raise TextConfigError(f"{path}: not a {FORMAT_NAME} file")
    rows, dim = int(doc["label_count"]), int(doc["dim"])
    data = np.frombuffer(base64.b64decode(doc["data"]), dtype=np.dtype(doc.get("dtype", "<f8")))
    if data.size != rows * dim:
        raise TextConfigError(f"{path}: body has {data.size} values, header says {rows}x{dim}")
    header = {k: v for k, v in doc.items() if k != "data"}
    return data.reshape(rows, dim).astype(np.float64), header


class TextProjection(nn.Module):
    """Single dense layer flattening the (16, N) embeddings to a 32x32 map."""

    def __init__(self, text_dim, n_labels=N_LABELS, side=PROJECTED_SIDE):
        super().__init__()
        self.side = side
        self.dense = nn.Linear(n_labels * text_dim, side * side)

    def forward(self, raw):
        return self.dense(raw.reshape(-1)).reshape(self.side, self.side)


def build_text(labels_path=None, embeddings_path=None, stub_dim=64) -> tuple[torch.Tensor, str]:
    """Load labels, encode them once and return ``(raw (16, N) tensor, encoder_id)``."""
    labels = load_labels(labels_path)
    encoder = FileEncoder(embeddings_path) if embeddings_path else StubEncoder(stub_dim)
    raw = encode_labels(labels, encoder)
    return torch.from_numpy(raw), encoder.encoder_id
