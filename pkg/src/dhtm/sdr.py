"""Sparse distributed representations and k-winners-take-all selection."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable

import numpy as np


@dataclass(frozen=True, eq=False)
class Sdr:
    """Sparse binary vector stored as a sorted array of active indices.

    Attributes:
        dimension: Size of the space the indices live in.
        active: Strictly increasing int array of active bit indices.
    """

    dimension: int
    active: np.ndarray

    def __init__(self, dimension: int, active: Iterable[int] = ()):
        if dimension <= 0:
            raise ValueError(f"dimension must be positive, got {dimension}")
        idx = np.unique(np.asarray(list(active) if not isinstance(active, np.ndarray) else active,
                                   dtype=np.int64))
        if idx.size and (idx[0] < 0 or idx[-1] >= dimension):
            raise ValueError(f"active indices out of range [0, {dimension})")
        idx.setflags(write=False)
        object.__setattr__(self, "dimension", int(dimension))
        object.__setattr__(self, "active", idx)

    def __len__(self) -> int:
        return int(self.active.size)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Sdr):
            return NotImplemented
        return self.dimension == other.dimension and np.array_equal(self.active, other.active)

    def __hash__(self) -> int:
        return hash((self.dimension, self.active.tobytes()))

    def __repr__(self) -> str:
        return f"Sdr(dimension={self.dimension}, active={self.active.tolist()})"

    @property
    def sparsity(self) -> float:
        return len(self) / self.dimension

    def dense(self, dtype=np.int8) -> np.ndarray:
        out = np.zeros(self.dimension, dtype=dtype)
        out[self.active] = 1
        return out

    @classmethod
    def from_dense(cls, arr) -> "Sdr":
        arr = np.asarray(arr)
        return cls(arr.shape[0], np.flatnonzero(arr))

    def to_bytes(self) -> bytes:
        """Serialize as ``dimension``, count, then the index list (little-endian uint32)."""
        head = struct.pack("<II", self.dimension, len(self))
        return head + self.active.astype("<u4").tobytes()

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Sdr":
        dim, n = struct.unpack_from("<II", buf, 0)
        if len(buf) != 8 + 4 * n:
            raise ValueError("truncated Sdr payload")
        idx = np.frombuffer(buf, dtype="<u4", count=n, offset=8)
        return cls(dim, idx.astype(np.int64))


def kwta(scores, k: int) -> Sdr:
    """Indices of the ``k`` highest scores; ties go to the lowest index."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if scores.size == 0:
        raise ValueError("kwta needs a nonempty score vector")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    k = min(k, scores.size)
    # stable sort on negated scores keeps lower indices first among equals
    order = np.argsort(-scores, kind="stable")
    return Sdr(scores.size, order[:k])


def block_kwta(scores, k_per_block: int, n_blocks: int) -> Sdr:
    """Run :func:`kwta` independently inside ``n_blocks`` equal contiguous blocks."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if n_blocks < 1 or scores.size % n_blocks:
        raise ValueError(f"{scores.size} scores cannot be split into {n_blocks} blocks")
    size = scores.size // n_blocks
    blocks = scores.reshape(n_blocks, size)
    k = min(k_per_block, size)
    order = np.argsort(-blocks, axis=1, kind="stable")[:, :k]
    active = (order + size * np.arange(n_blocks)[:, None]).ravel()
    return Sdr(scores.size, active)


def overlap(a: Sdr, b: Sdr) -> int:
    """Number of shared active bits."""
    if a.dimension != b.dimension:
        raise ValueError(f"dimension mismatch: {a.dimension} vs {b.dimension}")
    return int(np.intersect1d(a.active, b.active, assume_unique=True).size)
