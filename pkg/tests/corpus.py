"""Corrupt-file fixtures shared by the format tests and the acceptance run.

Each fixture is (name, reader, bytes, expected exception type, expected
field or line). Readers take a path.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable

import numpy as np

from axialfuse.errors import FormatError, ManifestError
from axialfuse.extractor import PlaneSequence, read_cache, write_cache
from axialfuse.model import AxialFuseModel, ModelConfig, read_checkpoint, save_checkpoint
from axialfuse.extractor import ExtractorSpec
from axialfuse.volume_io import encode_array, load_manifest, read_volume


@dataclass
class Fixture:
    name: str
    reader: Callable
    data: bytes
    error: type
    where: str | int

    def check(self, path) -> tuple[bool, str]:
        """Run the reader; True iff it raised the documented error."""
        path.write_bytes(self.data)
        try:
            self.reader(path)
        except self.error as exc:
            got = getattr(exc, "field", getattr(exc, "line", None))
            return got == self.where, f"{type(exc).__name__}({got!r})"
        except Exception as exc:  # any other exception is a crash
            return False, f"crash {type(exc).__name__}: {exc}"
        return False, "accepted"


def _volume_bytes() -> bytes:
    return encode_array(np.random.default_rng(0).uniform(0, 1, (4, 4, 4)))


def _cache_bytes(tmp) -> bytes:
    p = tmp / "_good.axe"
    write_cache([PlaneSequence("axial", np.ones((3, 8), np.float32), "a")], p)
    return p.read_bytes()


def _ckpt_bytes(tmp) -> bytes:
    cfg = ModelConfig(embed_dim=8, layers=1, heads=2, slice_size=8, volume_shape=(4, 4, 4),
                      extractor=ExtractorSpec("stub", 8, 4, 0))
    p = tmp / "_good.axc"
    save_checkpoint(AxialFuseModel(cfg), p)
    return p.read_bytes()


def _patch(buf: bytes, offset: int, raw: bytes) -> bytes:
    return buf[:offset] + raw + buf[offset + len(raw):]


HEADER = "axialfuse-manifest v1 classes=2 task=binary\n"


def corrupt_fixtures(tmp) -> list[Fixture]:
    vol = _volume_bytes()
    cache = _cache_bytes(tmp)
    ckpt = _ckpt_bytes(tmp)
    nan = struct.pack("<f", float("nan"))
    m = lambda body: (HEADER + body).encode()  # noqa: E731
    return [
        Fixture("axv_bad_magic", read_volume, b"AXV2" + vol[4:], FormatError, "magic"),
        Fixture("axv_bad_version", read_volume, _patch(vol, 4, b"\x07"), FormatError, "version"),
        Fixture("axv_bad_dtype", read_volume, _patch(vol, 5, b"\x01"), FormatError, "dtype"),
        Fixture("axv_bad_ndim", read_volume, _patch(vol, 6, b"\x02"), FormatError, "ndim"),
        Fixture("axv_truncated_header", read_volume, vol[:10], FormatError, "header"),
        Fixture("axv_truncated_payload", read_volume, vol[:-4], FormatError, "payload"),
        Fixture("axv_trailing_bytes", read_volume, vol + b"\0\0\0\0", FormatError, "payload"),
        Fixture("axv_nan_voxel", read_volume, vol[:-4] + nan, FormatError, "voxels"),
        Fixture("axv_inverted_range", read_volume, _patch(vol, 19, struct.pack("<ff", 1, 0)), FormatError, "vmax"),
        Fixture("axv_zero_extent", read_volume, _patch(vol, 7, struct.pack("<I", 0)), FormatError, "extents"),
        Fixture("axe_bad_magic", read_cache, b"AXE0" + cache[4:], FormatError, "magic"),
        Fixture("axe_truncated_payload", read_cache, cache[:-1], FormatError, "payload"),
        Fixture("axe_bad_plane", read_cache, _patch(cache, 13 + 2 + 1, b"\x09"), FormatError, "plane"),
        Fixture("axe_empty", read_cache, b"", FormatError, "header"),
        Fixture("axc_bad_magic", read_checkpoint, b"XXC1" + ckpt[4:], FormatError, "magic"),
        Fixture("axc_truncated", read_checkpoint, ckpt[:-2], FormatError, "payload"),
        Fixture("axc_nan_param", read_checkpoint, ckpt[:-4] + nan, FormatError, "payload"),
        Fixture("manifest_no_header", load_manifest, b"a.axv\t0\ttrain\n", ManifestError, 1),
        Fixture("manifest_bad_split", load_manifest, m("a.axv\t0\ttrain\nb.axv\t1\tholdout\n"), ManifestError, 3),
        Fixture("manifest_label_overflow", load_manifest, m("a.axv\t2\ttrain\n"), ManifestError, 2),
        Fixture("manifest_duplicate_path", load_manifest, m("a.axv\t0\ttrain\na.axv\t1\ttest\n"), ManifestError, 3),
        Fixture("manifest_truncated_line", load_manifest, m("a.axv\t0\n"), ManifestError, 2),
        Fixture("manifest_task_mismatch", load_manifest,
                b"axialfuse-manifest v1 classes=3 task=binary\n", ManifestError, 1),
        Fixture("manifest_not_utf8", load_manifest, HEADER.encode() + b"\xff\xfe\t0\ttrain\n", ManifestError, 1),
    ]
