"""Immutable document-embedding store with exact top-k inner-product search.

Vectors are quantized to float32 at build time (the on-disk precision) and
scored in float64.  Search is an exhaustive scan; ties break by doc_id
ascending.  A 64-bit digest over the canonical byte layout guards both the
file format and the shared-between-rounds immutability contract.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

INDEX_MAGIC = b"PRFIDX1"


@dataclass(frozen=True)
class SearchResult:
    doc_id: str
    score: float
    rank: int


class VectorIndex:
    def __init__(self, doc_ids: Sequence[str], vectors32: np.ndarray):
        if vectors32.ndim != 2 or len(doc_ids) != vectors32.shape[0]:
            raise ValueError("ids and vectors disagree")
        self._ids = list(doc_ids)
        self._ids_arr = np.asarray(self._ids)
        self._vec32 = np.ascontiguousarray(vectors32, dtype="<f4")
        self._vec64 = self._vec32.astype(np.float64)
        self._row_of = {d: i for i, d in enumerate(self._ids)}
        self._checksum = self._digest()

    @classmethod
    def build(cls, pairs: Iterable[tuple[str, np.ndarray]]) -> "VectorIndex":
        ids: list[str] = []
        vecs: list[np.ndarray] = []
        seen: set[str] = set()
        dim = None
        for doc_id, vec in pairs:
            vec = np.asarray(vec, dtype=np.float64)
            if vec.ndim != 1:
                raise ValueError("vectors must be 1-D")
            if dim is None:
                dim = vec.shape[0]
            elif vec.shape[0] != dim:
                raise ValueError(f"dimension mismatch for doc_id {doc_id}")
            if doc_id in seen:
                raise ValueError(f"duplicate doc_id {doc_id}")
            seen.add(doc_id)
            ids.append(doc_id)
            vecs.append(vec.astype("<f4"))
        if not ids:
            raise ValueError("empty index")
        return cls(ids, np.stack(vecs))

    def __len__(self) -> int:
        return len(self._ids)

    def __eq__(self, other) -> bool:
        if not isinstance(other, VectorIndex):
            return NotImplemented
        return self._ids == other._ids and np.array_equal(
            self._vec32, other._vec32
        )

    def __hash__(self):
        return hash(self._checksum)

    @property
    def dim(self) -> int:
        return self._vec32.shape[1]

    @property
    def checksum(self) -> int:
        return self._checksum

    def doc_ids(self) -> list[str]:
        return list(self._ids)

    def vector(self, doc_id: str) -> np.ndarray:
        """Float64 view of one stored embedding (KeyError if absent)."""
        return self._vec64[self._row_of[doc_id]]

    def entries(self) -> list[tuple[str, np.ndarray]]:
        return [(d, self._vec64[i]) for i, d in enumerate(self._ids)]

    def search(self, q: np.ndarray, k: int) -> list[SearchResult]:
        """Exact top-k by inner product, ties by doc_id ascending."""
        q = np.asarray(q, dtype=np.float64)
        if q.shape != (self.dim,):
            raise ValueError("dimension mismatch")
        if k < 1:
            raise ValueError("k must be >= 1")
        scores = self._vec64 @ q
        order = np.lexsort((self._ids_arr, -scores))[: min(k, len(self._ids))]
        return [
            SearchResult(doc_id=self._ids[i], score=float(scores[i]), rank=r)
            for r, i in enumerate(order, start=1)
        ]

    # -- persistence --------------------------------------------------------

    def _payload(self) -> bytes:
        parts = [struct.pack("<ii", self.dim, len(self._ids))]
        for i, doc_id in enumerate(self._ids):
            raw = doc_id.encode("utf-8")
            parts.append(struct.pack("<i", len(raw)))
            parts.append(raw)
            parts.append(self._vec32[i].tobytes())
        return b"".join(parts)

    def _digest(self) -> int:
        h = hashlib.blake2b(self._payload(), digest_size=8)
        return int.from_bytes(h.digest(), "little")

    def save(self, path) -> None:
        payload = self._payload()
        with open(path, "wb") as fh:
            fh.write(INDEX_MAGIC)
            fh.write(payload)
            fh.write(struct.pack("<Q", self._checksum))

    @classmethod
    def load(cls, path) -> "VectorIndex":
        with open(path, "rb") as fh:
            data = fh.read()
        if data[: len(INDEX_MAGIC)] != INDEX_MAGIC:
            raise ValueError("not an index file")
        body = data[len(INDEX_MAGIC):]
        if len(body) < 16:
            raise ValueError("corrupt index")
        payload, (stored,) = body[:-8], struct.unpack("<Q", body[-8:])
        digest = int.from_bytes(
            hashlib.blake2b(payload, digest_size=8).digest(), "little"
        )
        if digest != stored:
            raise ValueError("corrupt index")
        try:
            dim, count = struct.unpack_from("<ii", payload, 0)
            off = 8
            ids = []
            rows = []
            for _ in range(count):
                (id_len,) = struct.unpack_from("<i", payload, off)
                off += 4
                ids.append(payload[off:off + id_len].decode("utf-8"))
                off += id_len
                rows.append(np.frombuffer(payload, dtype="<f4", count=dim, offset=off))
                off += 4 * dim
            if off != len(payload):
                raise ValueError("corrupt index")
        except (struct.error, UnicodeDecodeError) as exc:
            raise ValueError("corrupt index") from exc
        return cls(ids, np.stack(rows))
