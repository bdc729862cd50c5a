"""Perceptual-hash digest database: exact cosine k-NN over unit vectors.

Digests are stored at 32-bit precision (the on-disk accounting unit) while
queries and similarity math run in float64. Search is exact brute force,
which stays easily affordable at the entry counts this package targets; ties
resolve by insertion order. New classes append to the label table without
touching existing entries, so the embedding model never needs retraining.

Concurrency: many readers or one writer. Writers (add/prune/load) need
exclusive access.
"""
from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .errors import (
    DimensionMismatchError,
    DuplicateLabelError,
    EmptyClassError,
    EmptyStoreError,
    FormatError,
    ZeroVectorError,
)
from .numeric import ZERO_NORM_TOL

STORE_MAGIC = b"PHS1"
STORE_VERSION = 1
DIGEST_BITS_PER_VALUE = 32


class StoreConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    k: int = Field(default=5, ge=1)
    dim: int | None = Field(default=None, gt=0)


@dataclass
class QueryResult:
    neighbors: list[tuple[int, float]]  # (label_id, similarity), best first
    predicted_label: str
    confidence: float


@dataclass
class HashStore:
    dim: int
    k: int = 5
    labels: list[str] = field(default_factory=list)
    digests: np.ndarray = None  # (n, dim) float32 unit rows
    label_ids: np.ndarray = None  # (n,) uint32

    def __post_init__(self):
        if self.digests is None:
            self.digests = np.empty((0, self.dim), dtype=np.float32)
        if self.label_ids is None:
            self.label_ids = np.empty(0, dtype=np.uint32)
        if len({name for name in self.labels}) != len(self.labels):
            raise DuplicateLabelError("label table contains duplicates")

    @property
    def entry_count(self) -> int:
        return len(self.label_ids)

    def label_id(self, name: str) -> int:
        return self.labels.index(name)


def _as_unit_f32(digest: np.ndarray, dim: int) -> np.ndarray:
    v = np.asarray(digest, dtype=np.float64)
    if v.shape != (dim,):
        raise DimensionMismatchError(f"digest has shape {v.shape}, store dim is {dim}")
    norm = float(np.linalg.norm(v))
    if norm <= ZERO_NORM_TOL:
        raise ZeroVectorError("cannot store a zero digest")
    return (v / norm).astype(np.float32)


def add_entry(store: HashStore, label_name: str, digest: np.ndarray) -> HashStore:
    """Append one digest (re-normalized), creating the label if it is new."""
    row = _as_unit_f32(digest, store.dim)
    if label_name not in store.labels:
        store.labels.append(label_name)
    label_id = store.labels.index(label_name)
    store.digests = np.vstack([store.digests, row[None, :]])
    store.label_ids = np.append(store.label_ids, np.uint32(label_id))
    return store


def add_entries(store: HashStore, label_name: str, digests: np.ndarray) -> HashStore:
    """Bulk append under one (possibly new) label; order preserved."""
    if label_name not in store.labels:
        store.labels.append(label_name)
    label_id = store.labels.index(label_name)
    rows = np.stack([_as_unit_f32(d, store.dim) for d in digests])
    store.digests = np.vstack([store.digests, rows])
    store.label_ids = np.append(
        store.label_ids, np.full(len(rows), label_id, dtype=np.uint32)
    )
    return store


def add_class(store: HashStore, label_name: str, digests: np.ndarray) -> HashStore:
    """Register a brand-new class from representative digests.

    The new label takes the next free id; nothing else in the store changes,
    and no model retraining is involved.
    """
    if label_name in store.labels:
        raise DuplicateLabelError(f"label {label_name!r} already exists")
    if len(digests) == 0:
        raise EmptyClassError("a new class needs at least one digest")
    return add_entries(store, label_name, digests)


def _similarities(store: HashStore, v: np.ndarray) -> np.ndarray:
    q = np.asarray(v, dtype=np.float64)
    if q.shape != (store.dim,):
        raise DimensionMismatchError(f"query has shape {q.shape}, store dim {store.dim}")
    norm = float(np.linalg.norm(q))
    if norm <= ZERO_NORM_TOL:
        raise ZeroVectorError("cannot query with a zero vector")
    sims = store.digests.astype(np.float64) @ (q / norm)
    return np.clip(sims, -1.0, 1.0)


def query(store: HashStore, v: np.ndarray, k: int | None = None) -> list[tuple[int, float]]:
    """Exact top-k entries by cosine similarity, ties by insertion order."""
    if store.entry_count == 0:
        raise EmptyStoreError("store has no entries")
    k = store.k if k is None else k
    sims = _similarities(store, v)
    order = np.argsort(-sims, kind="stable")[: min(k, store.entry_count)]
    return [(int(store.label_ids[i]), float(sims[i])) for i in order]


def classify(store: HashStore, v: np.ndarray) -> tuple[str, float]:
    """Label vote over the k nearest entries.

    Each label scores the sum of its neighbors' positive similarities; ties
    prefer the higher best single similarity, then the lower label id. When
    every neighbor similarity is non-positive the nearest entry wins with
    uniform confidence.
    """
    neighbors = query(store, v, store.k)
    scores: dict[int, float] = {}
    best_single: dict[int, float] = {}
    for label_id, sim in neighbors:
        scores[label_id] = scores.get(label_id, 0.0) + max(sim, 0.0)
        best_single[label_id] = max(best_single.get(label_id, -2.0), sim)
    total = sum(scores.values())
    if total <= 0.0:
        label_id = neighbors[0][0]
        return store.labels[label_id], 1.0 / len(store.labels)
    winner = min(scores, key=lambda lid: (-scores[lid], -best_single[lid], lid))
    return store.labels[winner], scores[winner] / total


def classify_result(store: HashStore, v: np.ndarray) -> QueryResult:
    neighbors = query(store, v, store.k)
    label, confidence = classify(store, v)
    return QueryResult(neighbors=neighbors, predicted_label=label, confidence=confidence)


def prune(store: HashStore, retention: float) -> HashStore:
    """Keep ceil(retention * n_c) digests per class by farthest-point coverage.

    Selection starts at the class medoid (the entry with maximal mean
    similarity to its classmates) and repeatedly adds the entry farthest, in
    cosine distance, from everything already kept. Kept entries stay in their
    original insertion order; the label table is untouched.
    """
    if not 0.0 < retention <= 1.0:
        raise ValueError("retention must lie in (0, 1]")
    if retention == 1.0:
        return store
    keep = np.zeros(store.entry_count, dtype=bool)
    D = store.digests.astype(np.float64)
    for label_id in range(len(store.labels)):
        idx = np.where(store.label_ids == label_id)[0]
        if len(idx) == 0:
            continue
        target = int(np.ceil(retention * len(idx) - 1e-9))
        target = max(1, min(target, len(idx)))
        rows = D[idx]
        sims = rows @ rows.T
        medoid = int(np.argmax(sims.mean(axis=1)))
        selected = [medoid]
        # max similarity to the selected set == min cosine distance
        closest = sims[medoid].copy()
        while len(selected) < target:
            pick = int(np.argmin(closest))
            selected.append(pick)
            closest = np.maximum(closest, sims[pick])
        keep[idx[np.asarray(selected)]] = True
    return HashStore(
        dim=store.dim,
        k=store.k,
        labels=list(store.labels),
        digests=store.digests[keep],
        label_ids=store.label_ids[keep],
    )


def size_bits(store: HashStore) -> int:
    """Digest payload size: entries x dim x 32 bits (metadata excluded)."""
    return store.entry_count * store.dim * DIGEST_BITS_PER_VALUE


# --- on-disk format ----------------------------------------------------------
#
# Little-endian, no padding: magic "PHS1", u32 version = 1, u32 dim,
# u32 label_count, u64 entry_count, label_count x {u16 byte-length, UTF-8
# name}, entry_count x {u32 label_id, dim x f32 digest}. Unknown versions and
# truncated or trailing bytes are rejected.


def serialize_store(store: HashStore) -> bytes:
    blob = [
        STORE_MAGIC,
        struct.pack(
            "<IIIQ", STORE_VERSION, store.dim, len(store.labels), store.entry_count
        ),
    ]
    for name in store.labels:
        raw = name.encode("utf-8")
        blob.append(struct.pack("<H", len(raw)))
        blob.append(raw)
    ids = store.label_ids
    rows = store.digests
    for i in range(store.entry_count):
        blob.append(struct.pack("<I", int(ids[i])))
        blob.append(rows[i].astype("<f4").tobytes())
    return b"".join(blob)


def deserialize_store(data: bytes, k: int = 5) -> HashStore:
    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise FormatError("truncated store file")
        chunk = data[pos : pos + n]
        pos = pos + n
        return chunk

    pos = 0
    if take(4) != STORE_MAGIC:
        raise FormatError("bad store magic")
    version, dim, label_count, entry_count = struct.unpack("<IIIQ", take(20))
    if version != STORE_VERSION:
        raise FormatError(f"unsupported store version {version}")
    if dim == 0:
        raise FormatError("store dim must be positive")
    labels = []
    for _ in range(label_count):
        (length,) = struct.unpack("<H", take(2))
        try:
            labels.append(take(length).decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise FormatError("label is not valid UTF-8") from exc
    ids = np.empty(entry_count, dtype=np.uint32)
    digests = np.empty((entry_count, dim), dtype=np.float32)
    for i in range(entry_count):
        (label_id,) = struct.unpack("<I", take(4))
        if label_id >= label_count:
            raise FormatError("entry references an unknown label id")
        ids[i] = label_id
        digests[i] = np.frombuffer(take(4 * dim), dtype="<f4")
    if pos != len(data):
        raise FormatError("trailing bytes after store payload")
    return HashStore(dim=dim, k=k, labels=labels, digests=digests, label_ids=ids)


def atomic_write(path: str, data: bytes) -> None:
    """Write via a temp file plus rename so interrupted runs never corrupt files."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(store: HashStore, path: str) -> None:
    atomic_write(path, serialize_store(store))


def load(path: str, k: int = 5) -> HashStore:
    with open(path, "rb") as fh:
        return deserialize_store(fh.read(), k=k)
