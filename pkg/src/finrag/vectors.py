"""Exact cosine-similarity vector store with binary persistence.

Vectors are L2-normalized and quantized to float32 once, at build time; all
scoring runs in float64 over those float32 rows.  The on-disk format stores
the rows verbatim, so a save/load round trip reproduces scores bit for bit.

File layout (little-endian): ``magic "FRGV" | u32 version | u32 dim |
u32 count | count*dim float32 rows | u32 id_blob_len | id_blob`` where
``id_blob`` is a UTF-8 JSON array of ref ids.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FinragError

MAGIC = b"FRGV"
VERSION = 1


class DuplicateId(FinragError):
    pass


class ZeroVector(FinragError):
    pass


class RaggedDimensions(FinragError):
    pass


class DimensionMismatch(FinragError):
    pass


class UnknownId(FinragError):
    pass


@dataclass(frozen=True, slots=True)
class SimilarityHit:
    ref_id: str
    score: float


class VectorIndex:
    """Immutable-after-build index; ``remove`` returns a filtered copy."""

    def __init__(self, ids: list[str], matrix: np.ndarray):
        self._ids = ids
        self._pos = {ref_id: i for i, ref_id in enumerate(ids)}
        self._matrix = matrix  # (n, d) float32, rows unit-norm

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, ref_id: str) -> bool:
        return ref_id in self._pos

    @property
    def dimension(self) -> int:
        return self._matrix.shape[1]

    @property
    def ids(self) -> list[str]:
        return list(self._ids)

    @classmethod
    def build(cls, records: Iterable[tuple[str, Sequence[float]]]) -> "VectorIndex":
        ids: list[str] = []
        rows: list[np.ndarray] = []
        dim: int | None = None
        seen: set[str] = set()
        for ref_id, vector in records:
            if ref_id in seen:
                raise DuplicateId(ref_id)
            seen.add(ref_id)
            vec = np.asarray(vector, dtype=np.float64)
            if vec.ndim != 1:
                raise RaggedDimensions(f"{ref_id}: vector must be one-dimensional")
            if dim is None:
                dim = vec.shape[0]
            elif vec.shape[0] != dim:
                raise RaggedDimensions(f"{ref_id}: dimension {vec.shape[0]} != {dim}")
            norm = float(np.linalg.norm(vec))
            if norm == 0.0:
                raise ZeroVector(ref_id)
            ids.append(ref_id)
            rows.append((vec / norm).astype(np.float32))
        matrix = np.vstack(rows) if rows else np.zeros((0, dim or 0), dtype=np.float32)
        return cls(ids, matrix)

    def top_k(
        self,
        query: Sequence[float],
        k: int,
        exclude: Iterable[str] = (),
    ) -> list[SimilarityHit]:
        """The k best cosine matches outside ``exclude``, exact, ties by ref_id."""
        if k < 1:
            raise ValueError("k must be >= 1")
        q = np.asarray(query, dtype=np.float64)
        if q.ndim != 1 or q.shape[0] != self.dimension:
            raise DimensionMismatch(f"query dimension {q.shape} != {self.dimension}")
        norm = float(np.linalg.norm(q))
        if norm == 0.0:
            raise ZeroVector("query")
        scores = self._matrix.astype(np.float64) @ (q / norm)
        excluded = set(exclude)
        ranked = sorted(
            (
                (-float(score), ref_id)
                for ref_id, score in zip(self._ids, scores)
                if ref_id not in excluded
            ),
        )
        return [
            SimilarityHit(ref_id=ref_id, score=min(1.0, max(-1.0, -neg)))
            for neg, ref_id in ranked[:k]
        ]

    def remove(self, ids: Iterable[str]) -> "VectorIndex":
        """A new index without ``ids``; the original is untouched."""
        to_drop = set(ids)
        unknown = to_drop - set(self._pos)
        if unknown:
            raise UnknownId(", ".join(sorted(unknown)))
        keep = [i for i, ref_id in enumerate(self._ids) if ref_id not in to_drop]
        return VectorIndex([self._ids[i] for i in keep], self._matrix[keep])

    def vector(self, ref_id: str) -> np.ndarray:
        try:
            return self._matrix[self._pos[ref_id]]
        except KeyError:
            raise UnknownId(ref_id) from None

    def save(self, path: str | Path) -> None:
        path = Path(path)
        id_blob = json.dumps(self._ids, ensure_ascii=False).encode("utf-8")
        with path.open("wb") as fh:
            fh.write(struct.pack("<4sIII", MAGIC, VERSION, self.dimension, len(self._ids)))
            fh.write(np.ascontiguousarray(self._matrix, dtype="<f4").tobytes())
            fh.write(struct.pack("<I", len(id_blob)))
            fh.write(id_blob)

    @classmethod
    def load(cls, path: str | Path) -> "VectorIndex":
        raw = Path(path).read_bytes()
        magic, version, dim, count = struct.unpack_from("<4sIII", raw, 0)
        if magic != MAGIC:
            raise FinragError(f"{path}: not a vector index file")
        if version != VERSION:
            raise FinragError(f"{path}: unsupported version {version}")
        offset = struct.calcsize("<4sIII")
        matrix = np.frombuffer(raw, dtype="<f4", count=count * dim, offset=offset).reshape(count, dim)
        offset += count * dim * 4
        (id_len,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        ids = json.loads(raw[offset : offset + id_len].decode("utf-8"))
        if len(ids) != count:
            raise FinragError(f"{path}: id table has {len(ids)} entries for {count} rows")
        return cls(list(ids), matrix.copy())


def build_index(records: Iterable[tuple[str, Sequence[float]]]) -> VectorIndex:
    return VectorIndex.build(records)
