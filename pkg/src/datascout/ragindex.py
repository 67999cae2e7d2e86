"""Vector index over generated and original descriptions.

Long descriptions overflow typical sequence-encoder limits, so each text is
split into overlapping token chunks, every chunk is embedded, and the entry
vector is the re-normalized arithmetic mean of the chunk vectors. Queries are
embedded the same way and scored by exhaustive cosine scan: corpora here are
thousands of entries, so correctness wins over ANN structures.

The index is immutable after build; concurrent readers need no coordination.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .modelgw import ModelGateway
from .textproc import tokenize

DESCRIPTION_SEPARATOR = "\n\n---\n\n"

LEVEL_RECORD = "record"
LEVEL_FILE = "file"
_LEVEL_BYTES = {LEVEL_RECORD: 0, LEVEL_FILE: 1}
_BYTE_LEVELS = {v: k for k, v in _LEVEL_BYTES.items()}

INDEX_MAGIC = b"DSIX"
INDEX_VERSION = 1


class IndexError_(Exception):
    """Base class for index errors (trailing underscore avoids the builtin)."""


class InvalidParamsError(IndexError_):
    pass


class AllEmptyDescriptionsError(IndexError_):
    pass


class ZeroVectorError(IndexError_):
    pass


class DimMismatchError(IndexError_):
    pass


class EmptyIndexError(IndexError_):
    pass


class VersionMismatchError(IndexError_):
    pass


class IndexIOError(IndexError_):
    pass


def chunk_text(text: str, chunk_tokens: int = 256, overlap_tokens: int = 32) -> list[str]:
    """Greedy token windows with overlap; the final partial chunk is kept.

    Texts at or below one window are returned verbatim; empty text yields a
    single empty chunk.
    """
    if overlap_tokens < 0 or chunk_tokens <= overlap_tokens:
        raise InvalidParamsError(
            f"require chunk_tokens > overlap_tokens >= 0, got {chunk_tokens}/{overlap_tokens}"
        )
    tokens = tokenize(text)
    if not tokens:
        return [""]
    if len(tokens) <= chunk_tokens:
        return [text]
    step = chunk_tokens - overlap_tokens
    chunks = []
    for start in range(0, len(tokens), step):
        chunks.append(" ".join(tokens[start:start + chunk_tokens]))
        if start + chunk_tokens >= len(tokens):
            break
    return chunks


def cosine(u, v) -> float:
    """Cosine similarity dot(u, v) / (|u| |v|); both vectors must be non-zero."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise DimMismatchError(f"{u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ZeroVectorError("cosine undefined for zero vectors")
    return float(np.dot(u, v) / (nu * nv))


def embed_chunked(
    text: str,
    gateway: ModelGateway,
    chunk_tokens: int = 256,
    overlap_tokens: int = 32,
) -> np.ndarray:
    """Chunk, embed each chunk, mean-pool, and re-normalize to unit length."""
    chunks = chunk_text(text, chunk_tokens, overlap_tokens)
    vectors = np.stack([gateway.embed(c).values for c in chunks])
    mean = vectors.mean(axis=0)
    norm = float(np.linalg.norm(mean))
    if norm == 0.0:
        raise ZeroVectorError("chunk vectors cancelled to zero")
    return mean / norm


@dataclass
class IndexEntry:
    """Unit-norm averaged embedding keyed by record or file id."""

    entry_id: str
    level: str
    vector: np.ndarray
    chunk_count: int
    source_text_hash: str

    def __post_init__(self) -> None:
        if self.level not in _LEVEL_BYTES:
            raise ValueError(f"unknown level {self.level!r}")
        if self.chunk_count < 1:
            raise ValueError("chunk_count must be >= 1")
        self.vector = np.asarray(self.vector, dtype=float)


def build_entry(
    entry_id: str,
    generated_description: str,
    user_description: str,
    gateway: ModelGateway,
    *,
    level: str = LEVEL_RECORD,
    chunk_tokens: int = 256,
    overlap_tokens: int = 32,
) -> IndexEntry:
    """Index one record/file from its generated plus original description.

    The two descriptions are concatenated (generated first) with a fixed
    separator; empty sides are omitted. At least one must be non-empty.
    """
    parts = [d for d in (generated_description, user_description) if d]
    if not parts:
        raise AllEmptyDescriptionsError(entry_id)
    text = DESCRIPTION_SEPARATOR.join(parts)
    chunks = chunk_text(text, chunk_tokens, overlap_tokens)
    vector = embed_chunked(text, gateway, chunk_tokens, overlap_tokens)
    return IndexEntry(
        entry_id=entry_id,
        level=level,
        vector=vector,
        chunk_count=len(chunks),
        source_text_hash=hashlib.sha256(text.encode("utf-8")).hexdigest(),
    )


@dataclass
class VectorIndex:
    """Immutable list of entries sharing one embedding dimensionality."""

    entries: list[IndexEntry]
    dims: int
    metadata: dict = field(default_factory=dict)

    @classmethod
    def build(
        cls,
        entries: Sequence[IndexEntry],
        *,
        embedder_id: str = "stub-3gram-hash",
        built_at: Optional[str] = None,
    ) -> "VectorIndex":
        entries = list(entries)
        if not entries:
            raise EmptyIndexError("cannot build an empty index")
        dims = entries[0].vector.shape[0]
        seen: set[str] = set()
        for e in entries:
            if e.vector.shape[0] != dims:
                raise DimMismatchError(
                    f"{e.entry_id}: {e.vector.shape[0]} dims, index has {dims}"
                )
            if e.entry_id in seen:
                raise InvalidParamsError(f"duplicate entry_id {e.entry_id}")
            seen.add(e.entry_id)
        metadata = {
            "embedder": embedder_id,
            "built_at": built_at or datetime.now(timezone.utc).isoformat(),
        }
        return cls(entries=entries, dims=dims, metadata=metadata)

    def query(
        self,
        text: str,
        k: int,
        gateway: ModelGateway,
        *,
        level: Optional[str] = LEVEL_RECORD,
        chunk_tokens: int = 256,
        overlap_tokens: int = 32,
    ) -> list[tuple[str, float]]:
        """Exhaustive cosine scan, descending score, ties by entry_id.

        The query text is chunked, embedded, and averaged exactly like index
        entries. ``k`` is capped at the candidate count.
        """
        if k < 1:
            raise InvalidParamsError(f"k must be >= 1, got {k}")
        candidates = (
            self.entries if level is None else [e for e in self.entries if e.level == level]
        )
        if not candidates:
            raise EmptyIndexError(f"no entries at level {level!r}")
        qv = embed_chunked(text, gateway, chunk_tokens, overlap_tokens)
        scored = [(e.entry_id, cosine(qv, e.vector)) for e in candidates]
        scored.sort(key=lambda pair: (-pair[1], pair[0]))
        return scored[: min(k, len(scored))]


# ---------------------------------------------------------------------------
# Binary persistence
#
# Layout: magic "DSIX", version u32, dims u32, entry count u64, then per entry
# (u16 id length + UTF-8 id, level byte, little-endian float32 vector). A JSON
# trailer (u32 length + blob) carries the index metadata and per-entry chunk
# provenance; readers of the bare prefix format can ignore it.
# ---------------------------------------------------------------------------


def save_index(index: VectorIndex, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".index-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(INDEX_MAGIC)
            fh.write(struct.pack("<IIQ", INDEX_VERSION, index.dims, len(index.entries)))
            for e in index.entries:
                encoded = e.entry_id.encode("utf-8")
                fh.write(struct.pack("<H", len(encoded)))
                fh.write(encoded)
                fh.write(struct.pack("<B", _LEVEL_BYTES[e.level]))
                fh.write(np.asarray(e.vector, dtype="<f4").tobytes())
            trailer = json.dumps(
                {
                    "metadata": index.metadata,
                    "aux": [[e.chunk_count, e.source_text_hash] for e in index.entries],
                },
                sort_keys=True,
            ).encode("utf-8")
            fh.write(struct.pack("<I", len(trailer)))
            fh.write(trailer)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    return path


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise IndexIOError(f"truncated index file: wanted {n} bytes, got {len(data)}")
    return data


def load_index(path: str | Path) -> VectorIndex:
    path = Path(path)
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise IndexIOError(str(exc)) from exc
    with fh:
        magic = _read_exact(fh, 4)
        if magic != INDEX_MAGIC:
            raise VersionMismatchError(f"bad magic {magic!r}, expected {INDEX_MAGIC!r}")
        version, dims, count = struct.unpack("<IIQ", _read_exact(fh, 16))
        if version != INDEX_VERSION:
            raise VersionMismatchError(f"unsupported index version {version}")
        raw_entries = []
        for _ in range(count):
            (id_len,) = struct.unpack("<H", _read_exact(fh, 2))
            entry_id = _read_exact(fh, id_len).decode("utf-8")
            (level_byte,) = struct.unpack("<B", _read_exact(fh, 1))
            if level_byte not in _BYTE_LEVELS:
                raise IndexIOError(f"unknown level byte {level_byte}")
            vector = np.frombuffer(_read_exact(fh, 4 * dims), dtype="<f4").astype(float)
            raw_entries.append((entry_id, _BYTE_LEVELS[level_byte], vector))
        metadata: dict = {}
        aux = [[1, ""]] * len(raw_entries)
        length_bytes = fh.read(4)
        if len(length_bytes) == 4:
            (trailer_len,) = struct.unpack("<I", length_bytes)
            trailer = json.loads(_read_exact(fh, trailer_len).decode("utf-8"))
            metadata = trailer.get("metadata", {})
            aux = trailer.get("aux", aux)
    entries = [
        IndexEntry(
            entry_id=eid,
            level=level,
            vector=vec,
            chunk_count=int(aux[i][0]),
            source_text_hash=str(aux[i][1]),
        )
        for i, (eid, level, vec) in enumerate(raw_entries)
    ]
    return VectorIndex(entries=entries, dims=dims, metadata=metadata)
