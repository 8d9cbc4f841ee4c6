"""Binary vector stores.

Layout: 8-byte magic, uint64 row count, uint32 dim, then ``count * dim``
little-endian float32 values.  Row ids live in a sidecar text file
(``<path>.ids``), one id per line in row order.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import DataIntegrityError

EMBEDDING_MAGIC = b"PTJEMB01"
REPRESENTATION_MAGIC = b"PTJREP01"
_HEADER = struct.Struct("<8sQI")
TEXT_DIM = 768


def ids_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".ids")


def write_vectors(path, ids: Iterable, vectors: np.ndarray, magic: bytes = EMBEDDING_MAGIC) -> None:
    ids = [str(i) for i in ids]
    vectors = np.ascontiguousarray(vectors, dtype="<f4")
    if vectors.ndim != 2 or vectors.shape[0] != len(ids):
        raise ValueError(f"expected {len(ids)} rows, got array of shape {vectors.shape}")
    if len(set(ids)) != len(ids):
        raise DataIntegrityError("duplicate ids in vector store")
    for i in ids:
        if "\n" in i or not i:
            raise ValueError(f"invalid id {i!r}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(magic, vectors.shape[0], vectors.shape[1]))
        fh.write(vectors.tobytes())
    with open(ids_path(path), "w", encoding="utf-8") as fh:
        fh.writelines(i + "\n" for i in ids)


def read_vectors(path, magic: bytes = EMBEDDING_MAGIC) -> tuple[list[str], np.ndarray]:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise DataIntegrityError(f"{path}: truncated header")
        got_magic, count, dim = _HEADER.unpack(head)
        if got_magic != magic:
            raise DataIntegrityError(f"{path}: bad magic {got_magic!r}, expected {magic!r}")
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != count * dim:
        raise DataIntegrityError(f"{path}: expected {count * dim} values, found {data.size}")
    with open(ids_path(path), encoding="utf-8") as fh:
        ids = [line.rstrip("\n") for line in fh]
    if len(ids) != count:
        raise DataIntegrityError(f"{path}: {count} rows but {len(ids)} ids")
    return ids, data.reshape(count, dim).astype(np.float32)


class VectorStore:
    """Read-only id -> vector lookup with a fixed dimension."""

    magic = EMBEDDING_MAGIC

    def __init__(self, ids, vectors, dim=None):
        vectors = np.asarray(vectors, dtype=np.float32)
        if vectors.ndim != 2:
            raise ValueError("vectors must be 2-D")
        if dim is not None and vectors.shape[1] != dim:
            raise DataIntegrityError(f"vectors have dim {vectors.shape[1]}, expected {dim}")
        ids = [str(i) for i in ids]
        if len(ids) != vectors.shape[0]:
            raise ValueError("id count does not match row count")
        self._row = {i: n for n, i in enumerate(ids)}
        if len(self._row) != len(ids):
            raise DataIntegrityError("duplicate ids in vector store")
        self.ids = ids
        self.vectors = vectors
        self.vectors.setflags(write=False)
        self.dim = vectors.shape[1]

    def __len__(self):
        return len(self.ids)

    def __contains__(self, key):
        return str(key) in self._row

    def __getitem__(self, key) -> np.ndarray:
        try:
            return self.vectors[self._row[str(key)]]
        except KeyError:
            raise KeyError(key) from None

    def get_many(self, keys) -> np.ndarray:
        return self.vectors[[self._row[str(k)] for k in keys]]

    def save(self, path) -> None:
        write_vectors(path, self.ids, self.vectors, self.magic)

    @classmethod
    def load(cls, path, dim=None):
        ids, vectors = read_vectors(path, cls.magic)
        return cls(ids, vectors, dim=dim)

    @classmethod
    def from_mapping(cls, mapping: Mapping, dim=None):
        keys = list(mapping)
        if not keys:
            return cls([], np.zeros((0, dim or 0), np.float32), dim=dim)
        return cls(keys, np.stack([np.asarray(mapping[k]) for k in keys]), dim=dim)


class ChunkEmbeddingStore(VectorStore):
    """Precomputed note-chunk vectors (always 768-d)."""

    def __init__(self, ids, vectors, dim=TEXT_DIM):
        if dim not in (None, TEXT_DIM):
            raise DataIntegrityError(f"chunk embeddings must be {TEXT_DIM}-d")
        super().__init__(ids, vectors, dim=TEXT_DIM)

    @classmethod
    def load(cls, path, dim=TEXT_DIM):
        return super().load(path, dim=dim)


class RepresentationStore(VectorStore):
    """Admission id -> exported admission representation."""

    magic = REPRESENTATION_MAGIC
