"""Embedding records, exact top-k cosine retrieval, and the index file format.

Search is exhaustive by design: at up to ~10^5 records a brute-force scan is
fast, and exactness lets an independent scan verify every ranking. Vectors
are stored in float32; similarity accumulates in float64.
"""

from __future__ import annotations

import os
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .binio import Reader, pack_str
from .errors import FormatError, ParameterError, StructuralError
from .network import DualNetConfig, ModelParams, _branch_forward, _check_batch

INDEX_MAGIC = b"FGSIDX1\n"
INDEX_VERSION = 1
METRIC_COSINE = "cosine"


@dataclass(frozen=True)
class EmbeddingRecord:
    id: str
    vector: np.ndarray
    class_label: int | None = None
    type_label: int | None = None
    tags: tuple[str, ...] = ()

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.float32).ravel()
        if vec.size == 0 or not np.all(np.isfinite(vec)):
            raise ParameterError(f"record {self.id!r} has an empty or non-finite vector")
        object.__setattr__(self, "vector", vec)
        object.__setattr__(self, "tags", tuple(self.tags))


class EmbeddingIndex:
    """Immutable id-keyed collection of equal-dimension vectors."""

    def __init__(self, records: list[EmbeddingRecord], snapshot_version: int = 1):
        if snapshot_version < 0:
            raise ParameterError("snapshot_version must be >= 0")
        ordered = sorted(records, key=lambda r: r.id)
        ids = [r.id for r in ordered]
        if len(set(ids)) != len(ids):
            raise ParameterError("duplicate record ids")
        dims = {r.vector.shape[0] for r in ordered}
        if len(dims) > 1:
            raise StructuralError(f"mixed vector dimensions {sorted(dims)}")
        self.records: tuple[EmbeddingRecord, ...] = tuple(ordered)
        self.ids: tuple[str, ...] = tuple(ids)
        self.dim: int = dims.pop() if dims else 0
        self.metric = METRIC_COSINE
        self.snapshot_version = snapshot_version
        if ordered:
            self._matrix = np.stack([r.vector for r in ordered]).astype(np.float64)
            self._norms = np.linalg.norm(self._matrix, axis=1)
        else:
            self._matrix = np.zeros((0, 0), dtype=np.float64)
            self._norms = np.zeros(0, dtype=np.float64)
        self._by_id = {r.id: r for r in ordered}

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, rec_id: str) -> bool:
        return rec_id in self._by_id

    def get(self, rec_id: str) -> EmbeddingRecord:
        if rec_id not in self._by_id:
            raise ParameterError(f"unknown record id {rec_id!r}")
        return self._by_id[rec_id]


def embed(params: ModelParams, cfg: DualNetConfig, image: np.ndarray) -> np.ndarray:
    """Feature vector for one image per cfg.embed_source (D or 2D wide)."""
    image = np.asarray(image)
    if image.ndim == 2:
        image = image[..., None]
    batch = _check_batch(cfg, image[None, ...], params.dtype)
    lower_feat, _ = _branch_forward(params.groups["lower"], cfg.lower, batch)
    if cfg.embed_source == "upper_branch":
        upper_feat, _ = _branch_forward(params.groups["upper"], cfg.upper, batch)
        return upper_feat[0].astype(np.float32)
    upper_feat, _ = _branch_forward(params.groups["upper"], cfg.upper, batch)
    return np.concatenate([lower_feat[0], upper_feat[0]]).astype(np.float32)


def cosine_similarity(u, v) -> float:
    """u . v / (|u| |v|); a zero vector compares as 0 with a warning."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise StructuralError(f"dimension mismatch {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        warnings.warn("cosine similarity of a zero vector is defined as 0",
                      RuntimeWarning, stacklevel=2)
        return 0.0
    return float(u @ v / (nu * nv))


def _query_sims(index: EmbeddingIndex, query: np.ndarray) -> np.ndarray:
    q = np.asarray(query, dtype=np.float64).ravel()
    if q.shape[0] != index.dim:
        raise StructuralError(
            f"query dimension {q.shape[0]} != index dimension {index.dim}")
    qn = np.linalg.norm(q)
    if qn == 0.0:
        warnings.warn("zero query vector: all similarities are 0",
                      RuntimeWarning, stacklevel=3)
        return np.zeros(len(index))
    denom = index._norms * qn
    sims = np.zeros(len(index))
    ok = denom > 0.0
    sims[ok] = (index._matrix[ok] @ q) / denom[ok]
    return sims


def _ranked(index: EmbeddingIndex, sims: np.ndarray, k: int,
            exclude_ids) -> list[tuple[str, float]]:
    excluded = set(exclude_ids or ())
    # records are stored in ascending-id order, so position breaks ties
    order = np.lexsort((np.arange(len(sims)), -sims))
    out = []
    for i in order:
        rec_id = index.ids[i]
        if rec_id in excluded:
            continue
        out.append((rec_id, float(sims[i])))
        if len(out) == k:
            break
    return out


def topk(index: EmbeddingIndex, query_vector, k: int,
         exclude_ids=()) -> list[tuple[str, float]]:
    """Exact top-k by descending cosine similarity, ties by ascending id."""
    if k < 1:
        raise ParameterError("k must be >= 1")
    if len(index) == 0:
        return []
    return _ranked(index, _query_sims(index, query_vector), k, exclude_ids)


def multi_query(index: EmbeddingIndex, query_vectors, k_total: int,
                exclude_ids=()) -> list[tuple[str, float]]:
    """Score each record by its best similarity over the query set."""
    if k_total < 1:
        raise ParameterError("k_total must be >= 1")
    queries = list(query_vectors)
    if not queries:
        raise ParameterError("need at least one query vector")
    if len(index) == 0:
        return []
    sims = np.max([_query_sims(index, q) for q in queries], axis=0)
    return _ranked(index, sims, k_total, exclude_ids)


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------

def save_index(index: EmbeddingIndex, path) -> None:
    """Canonical binary serialization (records in ascending id order)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(INDEX_MAGIC)
        fh.write(struct.pack("<IIQ", INDEX_VERSION, index.dim, len(index)))
        fh.write(pack_str(index.metric))
        fh.write(struct.pack("<I", index.snapshot_version))
        for rec in index.records:
            fh.write(pack_str(rec.id))
            fh.write(struct.pack("<ii",
                                 -1 if rec.class_label is None else rec.class_label,
                                 -1 if rec.type_label is None else rec.type_label))
            fh.write(struct.pack("<H", len(rec.tags)))
            for tag in rec.tags:
                fh.write(pack_str(tag))
            fh.write(rec.vector.astype("<f4").tobytes())
    os.replace(tmp, path)


def load_index(path) -> EmbeddingIndex:
    rd = Reader(Path(path).read_bytes())
    if rd.take(len(INDEX_MAGIC)) != INDEX_MAGIC:
        raise FormatError("bad index magic")
    version, dim, count = rd.unpack("<IIQ")
    if version != INDEX_VERSION:
        raise FormatError(f"unsupported index version {version}")
    metric = rd.read_str()
    if metric != METRIC_COSINE:
        raise FormatError(f"unsupported metric {metric!r}")
    (snapshot_version,) = rd.unpack("<I")
    records = []
    for _ in range(count):
        rec_id = rd.read_str()
        class_label, type_label = rd.unpack("<ii")
        (ntags,) = rd.unpack("<H")
        tags = tuple(rd.read_str() for _ in range(ntags))
        vec = np.frombuffer(rd.take(4 * dim), dtype="<f4").astype(np.float32)
        records.append(EmbeddingRecord(
            id=rec_id,
            vector=vec,
            class_label=None if class_label < 0 else class_label,
            type_label=None if type_label < 0 else type_label,
            tags=tags,
        ))
    rd.expect_eof("index")
    return EmbeddingIndex(records, snapshot_version=snapshot_version)


def export_text(index: EmbeddingIndex, path) -> None:
    """One record per line for cross-implementation diffing: id, labels,
    comma-joined tags, then the vector with 9 significant digits."""
    lines = []
    for rec in index.records:
        vec = " ".join(f"{float(v):.9g}" for v in rec.vector)
        cls = "" if rec.class_label is None else str(rec.class_label)
        typ = "" if rec.type_label is None else str(rec.type_label)
        lines.append(f"{rec.id}\t{cls}\t{typ}\t{','.join(rec.tags)}\t{vec}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""),
                          encoding="utf-8")
