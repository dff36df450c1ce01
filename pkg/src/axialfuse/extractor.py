"""Frozen per-slice feature extraction.

Two interchangeable backends produce a (n_slices, E) sequence per plane:

* ``stub``: non-overlapping patches, a fixed seeded projection with
  N(0, 1/fan_in) entries, mean pooled over patches.
* ``cache``: rows read verbatim from an AXE1 file, so embeddings from an
  external foundation model can be injected.

AXE1 layout, little-endian::

    magic "AXE1" | version u8 = 1 | E u32 | entry count u32
    per entry: id length u16 | id utf-8 | plane code u8 | rows u32 | f32 * rows * E
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CacheLookupError, FormatError
from .nn import Module
from .planar import PLANES, PlaneStack
from .tensor import Parameter, Tensor, matmul

CACHE_MAGIC = b"AXE1"
CACHE_VERSION = 1
PLANE_CODES = {p: i for i, p in enumerate(PLANES)}


@dataclass
class ExtractorSpec:
    kind: str = "stub"
    embed_dim: int = 32
    patch: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("stub", "cache"):
            raise ValueError(f"unknown extractor kind {self.kind!r}")
        if self.embed_dim < 8:
            raise ValueError("embed_dim must be >= 8")
        if self.patch < 1:
            raise ValueError("patch must be >= 1")


@dataclass
class PlaneSequence:
    plane: str
    features: np.ndarray
    source_id: str = ""


def stub_weights(seed: int, patch: int, embed_dim: int, size: int, channels: int = 3) -> np.ndarray:
    """Projection matrix, a pure function of (seed, patch, E, S)."""
    fan_in = channels * patch * patch
    rng = np.random.default_rng(np.random.SeedSequence([seed, patch, embed_dim, size]))
    return (rng.standard_normal((fan_in, embed_dim)) / np.sqrt(fan_in)).astype(np.float32)


def patchify(slices: np.ndarray, patch: int) -> np.ndarray:
    """(..., C, S, S) -> (..., n_patches, C * patch * patch)."""
    *lead, c, s, s2 = slices.shape
    if s % patch or s2 % patch:
        raise ValueError(f"slice size {s}x{s2} is not divisible by patch {patch}")
    g, g2 = s // patch, s2 // patch
    x = slices.reshape(*lead, c, g, patch, g2, patch)
    n = len(lead)
    x = x.transpose(*range(n), n + 1, n + 3, n, n + 2, n + 4)
    return x.reshape(*lead, g * g2, c * patch * patch)


class FeatureCache:
    """In-memory AXE1 store keyed by (source_id, plane)."""

    def __init__(self, embed_dim: int, entries: dict[tuple[str, str], np.ndarray] | None = None):
        self.embed_dim = embed_dim
        self.entries: dict[tuple[str, str], np.ndarray] = dict(entries or {})

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, key) -> bool:
        return key in self.entries

    def lookup(self, source_id: str, plane: str) -> np.ndarray:
        try:
            return self.entries[(source_id, plane)]
        except KeyError:
            raise CacheLookupError(source_id, plane) from None

    def add(self, seq: PlaneSequence) -> None:
        key = (seq.source_id, seq.plane)
        if key in self.entries:
            raise FormatError("id", f"duplicate cache key {key}")
        if seq.features.ndim != 2 or seq.features.shape[1] != self.embed_dim:
            raise FormatError("E", f"entry {key} has shape {seq.features.shape}, expected (*, {self.embed_dim})")
        self.entries[key] = np.asarray(seq.features, dtype=np.float32)


def write_cache(sequences: list[PlaneSequence], path) -> None:
    if not sequences:
        raise FormatError("entries", "cannot write an empty cache")
    store = FeatureCache(int(np.asarray(sequences[0].features).shape[-1]))
    for seq in sequences:
        store.add(seq)
    parts = [CACHE_MAGIC, struct.pack("<BII", CACHE_VERSION, store.embed_dim, len(store))]
    for (sid, plane), rows in store.entries.items():
        raw = sid.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<BI", PLANE_CODES[plane], rows.shape[0]))
        parts.append(np.ascontiguousarray(rows, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_cache(path) -> FeatureCache:
    buf = Path(path).read_bytes()
    if len(buf) < 13:
        raise FormatError("header", "truncated cache header")
    if buf[:4] != CACHE_MAGIC:
        raise FormatError("magic", f"expected {CACHE_MAGIC!r}, found {buf[:4]!r}")
    version, embed_dim, count = struct.unpack_from("<BII", buf, 4)
    if version != CACHE_VERSION:
        raise FormatError("version", f"unsupported version {version}")
    if embed_dim < 1:
        raise FormatError("E", "embedding dimension must be positive")
    store = FeatureCache(embed_dim)
    off = 13
    codes = {v: k for k, v in PLANE_CODES.items()}
    for i in range(count):
        if off + 2 > len(buf):
            raise FormatError("entry", f"truncated before entry {i}")
        (n,) = struct.unpack_from("<H", buf, off)
        off += 2
        if off + n + 5 > len(buf):
            raise FormatError("entry", f"truncated in entry {i} header")
        try:
            sid = buf[off : off + n].decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("id", f"entry {i} id is not UTF-8") from None
        off += n
        code, rows = struct.unpack_from("<BI", buf, off)
        off += 5
        if code not in codes:
            raise FormatError("plane", f"entry {i} has unknown plane code {code}")
        size = 4 * rows * embed_dim
        if off + size > len(buf):
            raise FormatError("payload", f"entry {i} payload truncated")
        arr = np.frombuffer(buf, dtype="<f4", count=rows * embed_dim, offset=off).reshape(rows, embed_dim)
        off += size
        if not np.all(np.isfinite(arr)):
            raise FormatError("payload", f"entry {i} contains non-finite values")
        store.add(PlaneSequence(codes[code], arr.astype(np.float32), sid))
    if off != len(buf):
        raise FormatError("payload", f"{len(buf) - off} trailing bytes after last entry")
    return store


class FrozenExtractor(Module):
    """One extractor instance shared by all three planes; its weights never train."""

    def __init__(self, spec: ExtractorSpec, slice_size: int, cache: FeatureCache | None = None):
        self.spec = spec
        self.slice_size = slice_size
        self.projection = None
        self.cache = cache
        if spec.kind == "stub":
            if slice_size % spec.patch:
                raise ValueError(f"slice size {slice_size} is not divisible by patch {spec.patch}")
            w = stub_weights(spec.seed, spec.patch, spec.embed_dim, slice_size)
            self.projection = Parameter(w, name="extractor.projection", frozen=True)

    def attach_cache(self, cache: FeatureCache) -> None:
        if cache.embed_dim != self.spec.embed_dim:
            raise FormatError("E", f"cache E={cache.embed_dim} but extractor expects {self.spec.embed_dim}")
        self.cache = cache

    def project_patches(self, patches: Tensor) -> Tensor:
        return matmul(patches, self.projection)

    def forward(self, slices: np.ndarray) -> Tensor:
        """(..., n, C, S, S) resized slices -> (..., n, E) embeddings."""
        if self.spec.kind != "stub":
            raise ValueError("pixel input requires the stub extractor; use lookup() for cache")
        patches = Tensor(patchify(np.asarray(slices), self.spec.patch).astype(self.projection.dtype))
        return self.project_patches(patches).mean(axis=-2)

    def lookup(self, source_ids, plane: str) -> Tensor:
        if self.cache is None:
            raise CacheLookupError(str(source_ids[0]) if len(source_ids) else "", plane)
        rows = [self.cache.lookup(sid, plane) for sid in source_ids]
        if len({r.shape for r in rows}) > 1:
            raise FormatError("rows", f"cached {plane} sequences differ in length")
        return Tensor(np.stack(rows))

    def extract(self, stack: PlaneStack) -> PlaneSequence:
        if self.spec.kind == "cache":
            if self.cache is None:
                raise CacheLookupError(stack.source_id, stack.plane)
            feats = self.cache.lookup(stack.source_id, stack.plane)
            if feats.shape[1] != self.spec.embed_dim:
                raise FormatError("E", f"cache rows have E={feats.shape[1]}, spec says {self.spec.embed_dim}")
        else:
            feats = self.forward(stack.slices).data
        return PlaneSequence(stack.plane, feats, stack.source_id)


def extract(stack: PlaneStack, spec: ExtractorSpec, cache: FeatureCache | None = None) -> PlaneSequence:
    return FrozenExtractor(spec, stack.slices.shape[-1], cache).extract(stack)
