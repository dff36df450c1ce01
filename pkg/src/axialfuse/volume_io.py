"""Volumes on disk (AXV1), dataset manifests and synthetic datasets.

AXV1 layout, little-endian::

    magic    4s   b"AXV1"
    version  u8   1
    dtype    u8   0 (float32)
    ndim     u8   3 for volumes, 4 for channel-first plane stacks
    extents  u32 * ndim
    vmin     f32
    vmax     f32
    payload  f32 * prod(extents), row-major (last axis fastest)

Stored voxels lie in [vmin, vmax]; reading maps them to [0, 1] with
(x - vmin) / (vmax - vmin), which is the identity for files written from
already-normalised volumes (vmin=0, vmax=1).
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ManifestError

MAGIC = b"AXV1"
VERSION = 1
DTYPE_F32 = 0
SPLITS = ("train", "validation", "test")
MANIFEST_HEADER = "axialfuse-manifest v1"

_PREFIX = struct.Struct("<4sBBB")
_RANGE = struct.Struct("<ff")


@dataclass
class Volume:
    """Single-channel (D, H, W) grid with voxels in [0, 1]."""

    voxels: np.ndarray
    id: str = ""

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels, dtype=np.float32)
        if self.voxels.ndim != 3 or min(self.voxels.shape) < 2:
            raise ValueError(f"volume must be 3-d with every extent >= 2, got {self.voxels.shape}")
        if not np.all(np.isfinite(self.voxels)):
            raise ValueError("volume contains non-finite voxels")
        if self.voxels.min() < 0 or self.voxels.max() > 1:
            raise ValueError("volume voxels must lie in [0, 1]")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.voxels.shape


def header_size(ndim: int) -> int:
    return _PREFIX.size + 4 * ndim + _RANGE.size


def encode_array(arr: np.ndarray, vmin: float = 0.0, vmax: float = 1.0) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    if arr.ndim not in (3, 4):
        raise FormatError("ndim", f"expected 3 or 4 dimensions, got {arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise FormatError("voxels", "non-finite values cannot be written")
    head = _PREFIX.pack(MAGIC, VERSION, DTYPE_F32, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    head += _RANGE.pack(vmin, vmax)
    return head + arr.tobytes()


def decode_array(buf: bytes, ndims=(3, 4)) -> tuple[np.ndarray, float, float]:
    """Parse an AXV1 buffer. Returns (raw stored array, vmin, vmax)."""
    if len(buf) < _PREFIX.size:
        raise FormatError("header", f"truncated header ({len(buf)} bytes)")
    magic, version, dtype, ndim = _PREFIX.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError("magic", f"expected {MAGIC!r}, found {magic!r}")
    if version != VERSION:
        raise FormatError("version", f"unsupported version {version}")
    if dtype != DTYPE_F32:
        raise FormatError("dtype", f"unsupported dtype code {dtype}")
    if ndim not in ndims:
        raise FormatError("ndim", f"expected one of {ndims}, found {ndim}")
    if len(buf) < header_size(ndim):
        raise FormatError("header", f"truncated header ({len(buf)} bytes)")
    extents = struct.unpack_from(f"<{ndim}I", buf, _PREFIX.size)
    if min(extents) < 1 or (ndim == 3 and min(extents) < 2):
        raise FormatError("extents", f"invalid extents {extents}")
    vmin, vmax = _RANGE.unpack_from(buf, _PREFIX.size + 4 * ndim)
    if not (math.isfinite(vmin) and math.isfinite(vmax)):
        raise FormatError("vmin" if not math.isfinite(vmin) else "vmax", "range bound is not finite")
    if not vmax > vmin:
        raise FormatError("vmax", f"vmax ({vmax}) must exceed vmin ({vmin})")
    start = header_size(ndim)
    expected = 4 * math.prod(extents)
    payload = len(buf) - start
    if payload != expected:
        raise FormatError("payload", f"expected {expected} payload bytes, found {payload}")
    arr = np.frombuffer(buf, dtype="<f4", offset=start).reshape(extents).astype(np.float32)
    if not np.all(np.isfinite(arr)):
        raise FormatError("voxels", "payload contains non-finite values")
    if arr.min() < np.float32(vmin) or arr.max() > np.float32(vmax):
        raise FormatError("voxels", "payload values fall outside the recorded [vmin, vmax]")
    return arr, float(np.float32(vmin)), float(np.float32(vmax))


def normalize(arr: np.ndarray, vmin: float, vmax: float) -> np.ndarray:
    lo, hi = np.float32(vmin), np.float32(vmax)
    out = (arr - lo) / (hi - lo)
    return np.clip(out, 0, 1).astype(np.float32)


def write_volume(v: Volume, path, vmin: float = 0.0, vmax: float = 1.0) -> None:
    Path(path).write_bytes(encode_array(v.voxels, vmin, vmax))


def write_raw_volume(arr: np.ndarray, path) -> None:
    """Store unnormalised intensities, recording their min/max in the header."""
    arr = np.asarray(arr, dtype=np.float32)
    lo, hi = float(arr.min()), float(arr.max())
    if hi <= lo:
        hi = lo + 1.0
    Path(path).write_bytes(encode_array(arr, lo, hi))


def read_volume(path, id: str | None = None) -> Volume:
    arr, vmin, vmax = decode_array(Path(path).read_bytes(), ndims=(3,))
    if not (vmin == 0.0 and vmax == 1.0):
        arr = normalize(arr, vmin, vmax)
    return Volume(arr, id=id if id is not None else Path(path).stem)


def write_stack_array(arr: np.ndarray, path) -> None:
    """Write a (C, D_plane, S, S) plane stack as a 4-d AXV1 file."""
    if arr.ndim != 4:
        raise FormatError("ndim", f"plane stacks are 4-d, got {arr.ndim}")
    lo, hi = float(arr.min()), float(arr.max())
    Path(path).write_bytes(encode_array(arr, min(lo, 0.0), max(hi, 1.0)))


def read_stack_array(path) -> np.ndarray:
    arr, _, _ = decode_array(Path(path).read_bytes(), ndims=(4,))
    return arr


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: int
    split: str


@dataclass
class RunManifest:
    entries: list[ManifestEntry]
    num_classes: int
    task: str
    root: Path = field(default_factory=Path)

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def counts(self) -> dict[str, int]:
        return {s: len(self.split(s)) for s in SPLITS}

    def resolve(self, entry: ManifestEntry) -> Path:
        return self.root / entry.path

    def require_splits(self) -> None:
        empty = [s for s, n in self.counts().items() if n == 0]
        if empty:
            raise ManifestError(0, f"splits {empty} are empty; training needs all three")


def _parse_header(line: str) -> tuple[int, str]:
    parts = line.split()
    if len(parts) != 4 or " ".join(parts[:2]) != MANIFEST_HEADER:
        raise ManifestError(1, f"missing header {MANIFEST_HEADER!r}")
    kv = {}
    for token in parts[2:]:
        key, sep, value = token.partition("=")
        if not sep:
            raise ManifestError(1, f"malformed header field {token!r}")
        kv[key] = value
    if set(kv) != {"classes", "task"}:
        raise ManifestError(1, "header must declare classes= and task=")
    try:
        k = int(kv["classes"])
    except ValueError:
        raise ManifestError(1, f"classes must be an integer, got {kv['classes']!r}") from None
    task = kv["task"]
    if task not in ("binary", "multiclass"):
        raise ManifestError(1, f"unknown task {task!r}")
    if k < 2:
        raise ManifestError(1, "classes must be >= 2")
    if (task == "binary") != (k == 2):
        raise ManifestError(1, f"task={task} is inconsistent with classes={k}")
    return k, task


def parse_manifest(text: str, root=".") -> RunManifest:
    lines = text.splitlines()
    if not lines:
        raise ManifestError(1, "empty manifest")
    k, task = _parse_header(lines[0])
    entries: list[ManifestEntry] = []
    seen: set[str] = set()
    for no, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise ManifestError(no, f"expected 3 tab-separated fields, found {len(fields)}")
        path, label_s, split = fields
        if not path:
            raise ManifestError(no, "empty path")
        try:
            label = int(label_s)
        except ValueError:
            raise ManifestError(no, f"label {label_s!r} is not an integer") from None
        if not 0 <= label < k:
            raise ManifestError(no, f"label {label} out of range [0, {k})")
        if split not in SPLITS:
            raise ManifestError(no, f"unknown split {split!r}")
        if path in seen:
            raise ManifestError(no, f"duplicate path {path!r}")
        seen.add(path)
        entries.append(ManifestEntry(path, label, split))
    return RunManifest(entries, k, task, Path(root))


def load_manifest(path) -> RunManifest:
    path = Path(path)
    try:
        text = path.read_bytes().decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ManifestError(1, f"manifest is not UTF-8: {exc}") from None
    return parse_manifest(text, root=path.parent)


def format_manifest(m: RunManifest) -> str:
    out = [f"{MANIFEST_HEADER} classes={m.num_classes} task={m.task}"]
    out += [f"{e.path}\t{e.label}\t{e.split}" for e in m.entries]
    return "\n".join(out) + "\n"


def write_manifest(m: RunManifest, path) -> None:
    Path(path).write_text(format_manifest(m), encoding="utf-8")


# ---------------------------------------------------------------------------
# synthetic datasets
# ---------------------------------------------------------------------------


@dataclass
class SynthSpec:
    """``n_per_split`` counts volumes per class for train, validation, test."""

    n_per_split: tuple[int, int, int] = (20, 5, 5)
    num_classes: int = 2
    side: int = 16
    seed: int = 0


def _class_directions(k: int) -> np.ndarray:
    """k well-spread unit vectors (Fibonacci sphere), fixed per k."""
    i = np.arange(k) + 0.5
    z = 1 - 2 * i / k
    r = np.sqrt(1 - z * z)
    phi = np.pi * (1 + 5**0.5) * i
    return np.stack([z, r * np.cos(phi), r * np.sin(phi)], axis=1)


def _rotation_to(v: np.ndarray) -> np.ndarray:
    """A rotation matrix whose first column is the unit vector v."""
    a = v / np.linalg.norm(v)
    helper = np.array([1.0, 0, 0]) if abs(a[0]) < 0.9 else np.array([0, 1.0, 0])
    b = np.cross(a, helper)
    b /= np.linalg.norm(b)
    c = np.cross(a, b)
    return np.stack([a, b, c], axis=1)


def ellipsoid_volume(label: int, num_classes: int, side: int, rng: np.random.Generator) -> np.ndarray:
    """Bright ellipsoid whose centre and long axis follow class-specific distributions."""
    dirs = _class_directions(num_classes)
    axes_dirs = _class_directions(num_classes)[::-1]
    center = (side - 1) / 2 + 0.2 * side * dirs[label] + rng.normal(0, 0.03 * side, 3)
    long_axis = axes_dirs[label] + rng.normal(0, 0.15, 3)
    rot = _rotation_to(long_axis)
    semi = np.array([0.30, 0.14, 0.14]) * side * rng.uniform(0.9, 1.1, 3)
    grid = np.stack(np.meshgrid(*(np.arange(side),) * 3, indexing="ij"), axis=-1) - center
    local = grid @ rot / semi
    r = np.sqrt((local**2).sum(-1))
    blob = 0.85 / (1 + np.exp((r - 1) * 8))
    noisy = blob + rng.normal(0, 0.03, blob.shape)
    return np.clip(noisy, 0, 1).astype(np.float32)


def synth_dataset(spec: SynthSpec, out_dir) -> RunManifest:
    """Write a class-separable synthetic dataset plus ``manifest.tsv``.

    Output is a pure function of ``spec``: volumes are generated in a fixed
    order from a single seeded stream.
    """
    if spec.side < 8:
        raise ValueError("side must be >= 8")
    if spec.num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    out = Path(out_dir)
    (out / "volumes").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    entries = []
    for split, n in zip(SPLITS, spec.n_per_split):
        # n volumes per class, classes interleaved
        for i in range(n * spec.num_classes):
            label = i % spec.num_classes
            arr = ellipsoid_volume(label, spec.num_classes, spec.side, rng)
            rel = f"volumes/{split}_{i:04d}.axv"
            write_volume(Volume(arr), out / rel)
            entries.append(ManifestEntry(rel, label, split))
    task = "binary" if spec.num_classes == 2 else "multiclass"
    manifest = RunManifest(entries, spec.num_classes, task, out)
    write_manifest(manifest, out / "manifest.tsv")
    return manifest


def tree_digest(root) -> str:
    """sha256 over (relative path, bytes) of every file below ``root``."""
    import hashlib

    h = hashlib.sha256()
    root = Path(root)
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def load_split(manifest: RunManifest, split: str) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Read every volume of one split: (N, D, H, W) voxels, labels, ids."""
    entries = manifest.split(split)
    vols = [read_volume(manifest.resolve(e), id=e.path) for e in entries]
    shapes = {v.shape for v in vols}
    if len(shapes) > 1:
        raise FormatError("extents", f"split {split!r} mixes volume shapes {sorted(shapes)}")
    arr = np.stack([v.voxels for v in vols]) if vols else np.zeros((0, 2, 2, 2), np.float32)
    labels = np.array([e.label for e in entries], dtype=np.int64)
    return arr, labels, [e.path for e in entries]


__all__ = [
    "Volume", "RunManifest", "ManifestEntry", "SynthSpec", "read_volume", "write_volume",
    "write_raw_volume", "load_manifest", "parse_manifest", "write_manifest", "synth_dataset",
    "tree_digest", "load_split", "header_size", "SPLITS",
]
