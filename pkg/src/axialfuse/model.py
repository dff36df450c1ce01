"""Full three-plane model: frozen extraction, per-plane RICA + self-attention
encoders, two cross-plane encoders, two MLP heads and logit averaging.

Fusion topologies:

``dual_axial``    cross(q=axial, kv=coronal) and cross(q=axial, kv=sagittal)
``sequential``    cross(q=axial, kv=coronal) feeds the query of cross(., kv=sagittal);
                  its CLS goes through both heads
``reversed_qkv``  cross(q=coronal, kv=axial) and cross(q=sagittal, kv=axial)

Checkpoint (AXC1) layout, little-endian::

    magic "AXC1" | version u8 = 1 | config block (see _CONFIG_FORMAT)
    | parameter count u32 | per parameter: name length u16, name utf-8,
    ndim u8, extents u32 * ndim, f32 data

Only trainable parameters are stored; the frozen extractor is rebuilt from
its seed in the config block.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .blocks import Encoder, EncoderConfig, RicaBlock, TokenPrep
from .errors import CheckpointError, DimensionError, FormatError
from .extractor import ExtractorSpec, FeatureCache, FrozenExtractor
from .nn import LayerNorm, Linear, Module
from .planar import PLANES, PlaneStack, resize_slices, slice_plane
from .tensor import Tensor

FUSIONS = ("dual_axial", "sequential", "reversed_qkv")
EXTRACTOR_KINDS = ("stub", "cache")


@dataclass
class ModelConfig:
    embed_dim: int = 32
    layers: int = 2
    heads: int = 2
    num_classes: int = 2
    fusion: str = "dual_axial"
    slice_size: int = 32
    volume_shape: tuple[int, int, int] = (16, 16, 16)
    ffn_multiplier: int = 4
    rica_ratio: int = 4
    dropout: float = 0.0
    extractor: ExtractorSpec = field(default_factory=ExtractorSpec)

    def __post_init__(self):
        self.volume_shape = tuple(int(n) for n in self.volume_shape)
        if isinstance(self.extractor, dict):
            self.extractor = ExtractorSpec(**self.extractor)
        if self.fusion not in FUSIONS:
            raise ValueError(f"unknown fusion {self.fusion!r}; expected one of {FUSIONS}")
        if self.heads < 1 or self.embed_dim % self.heads:
            raise ValueError(f"embed_dim {self.embed_dim} is not divisible by heads {self.heads}")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if len(self.volume_shape) != 3 or min(self.volume_shape) < 2:
            raise ValueError(f"volume_shape must be three extents >= 2, got {self.volume_shape}")
        if self.extractor.embed_dim != self.embed_dim:
            raise ValueError(
                f"extractor embed_dim {self.extractor.embed_dim} != model embed_dim {self.embed_dim}"
            )

    def plane_length(self, plane: str) -> int:
        return self.volume_shape[PLANES.index(plane)]

    def encoder_config(self, mode: str, layers: int | None = None) -> EncoderConfig:
        return EncoderConfig(
            self.embed_dim,
            self.layers if layers is None else layers,
            self.heads,
            self.ffn_multiplier,
            self.dropout,
            mode,
        )


@dataclass
class Logits:
    heads: tuple[Tensor, Tensor]
    fused: Tensor


class MLPHead(Module):
    """LayerNorm -> Linear(E, E) -> tanh -> Linear(E, classes)."""

    def __init__(self, embed_dim: int, num_classes: int, rng: np.random.Generator):
        self.norm = LayerNorm(embed_dim)
        self.fc1 = Linear(embed_dim, embed_dim, rng)
        self.fc2 = Linear(embed_dim, num_classes, rng)

    def forward(self, cls: Tensor) -> Tensor:
        return self.fc2(self.fc1(self.norm(cls)).tanh())


class AxialFuseModel(Module):
    def __init__(self, config: ModelConfig, seed: int = 0, cache: FeatureCache | None = None, layers: int | None = None):
        """``layers`` overrides config.layers for every encoder (0 gives an
        encoder-free harness used in composition tests)."""
        self.config = config
        rng = np.random.default_rng(seed)
        e = config.embed_dim
        self.extractor = FrozenExtractor(config.extractor, config.slice_size)
        if cache is not None:
            self.extractor.attach_cache(cache)
        self.rica = {p: RicaBlock(e, rng, config.rica_ratio) for p in PLANES}
        self.tokens = {p: TokenPrep(e, config.plane_length(p), rng) for p in PLANES}
        self.intra = {p: Encoder(config.encoder_config("self", layers), rng) for p in PLANES}
        self.cross = [Encoder(config.encoder_config("cross", layers), rng) for _ in range(2)]
        self.heads = [MLPHead(e, config.num_classes, rng) for _ in range(2)]
        for name, p in self.named_parameters():
            p.name = name

    # -- input stages --------------------------------------------------------
    def _check_volumes(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float32)
        if x.ndim == 5:
            if x.shape[1] != 1:
                raise DimensionError(f"expected a single channel, got {x.shape[1]}")
            x = x[:, 0]
        if x.ndim != 4 or tuple(x.shape[1:]) != self.config.volume_shape:
            raise DimensionError(
                f"expected volumes (B, 1, {', '.join(map(str, self.config.volume_shape))}), got {x.shape}"
            )
        return x

    def plane_inputs(self, volumes: np.ndarray) -> dict[str, np.ndarray]:
        """(B, [1,] D, H, W) -> per-plane (B, n, 3, S, S) resized, channel-tripled slices."""
        x = self._check_volumes(volumes)
        out = {}
        for p in PLANES:
            resized = resize_slices(slice_plane(x, p), self.config.slice_size)
            out[p] = np.repeat(resized[:, :, None], 3, axis=2)
        return out

    def extract_planes(self, volumes=None, ids: Sequence[str] | None = None) -> dict[str, Tensor]:
        if self.config.extractor.kind == "cache":
            if ids is None:
                raise DimensionError("cache extractor needs source ids")
            seqs = {p: self.extractor.lookup(list(ids), p) for p in PLANES}
            for p, s in seqs.items():
                if s.shape[-1] != self.config.embed_dim:
                    raise FormatError("E", f"cache rows have E={s.shape[-1]}, model expects {self.config.embed_dim}")
            return {p: Tensor(s.data.astype(self._dtype())) for p, s in seqs.items()}
        return self.extract_stacks(self.plane_inputs(volumes))

    def extract_stacks(self, stacks: dict[str, np.ndarray | PlaneStack]) -> dict[str, Tensor]:
        out = {}
        for p in PLANES:
            s = stacks[p]
            arr = s.slices if isinstance(s, PlaneStack) else np.asarray(s)
            if arr.ndim == 4:
                arr = arr[None]
            out[p] = self.extractor(arr)
        return out

    def _dtype(self):
        return self.heads[0].fc1.weight.dtype

    # -- trainable stages -----------------------------------------------------
    def encode_plane(self, plane: str, seq: Tensor) -> Tensor:
        return self.intra[plane](self.tokens[plane](self.rica[plane](seq)))

    def forward_sequences(self, seqs: dict[str, Tensor]) -> Logits:
        enc = {p: self.encode_plane(p, seqs[p]) for p in PLANES}
        fusion = self.config.fusion
        if fusion == "dual_axial":
            fused = [self.cross[0](enc["axial"], enc["coronal"]), self.cross[1](enc["axial"], enc["sagittal"])]
        elif fusion == "reversed_qkv":
            fused = [self.cross[0](enc["coronal"], enc["axial"]), self.cross[1](enc["sagittal"], enc["axial"])]
        else:
            stage = self.cross[1](self.cross[0](enc["axial"], enc["coronal"]), enc["sagittal"])
            fused = [stage, stage]
        l0 = self.heads[0](fused[0][:, 0])
        l1 = self.heads[1](fused[1][:, 0])
        return Logits((l0, l1), (l0 + l1) * 0.5)

    def forward_stacks(self, stacks: dict[str, np.ndarray | PlaneStack]) -> Logits:
        return self.forward_sequences(self.extract_stacks(stacks))

    def forward(self, volumes=None, ids: Sequence[str] | None = None) -> Logits:
        return self.forward_sequences(self.extract_planes(volumes, ids))

    # -- checkpoints -----------------------------------------------------------
    def save_params(self, path) -> None:
        save_checkpoint(self, path)

    def load_params(self, path, strict: bool = True) -> None:
        cfg, params = read_checkpoint(path)
        diff = config_diff(self.config, cfg)
        if diff and strict:
            raise CheckpointError(f"checkpoint config differs in: {', '.join(diff)}", diff)
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(n for n, p in own.items() if not p.frozen) ^ set(params))
            if missing:
                raise CheckpointError(f"parameter sets differ: {missing[:5]}")
        for name, arr in params.items():
            p = own.get(name)
            if p is None or p.frozen or p.shape != arr.shape:
                if strict:
                    raise CheckpointError(f"cannot load parameter {name!r} with shape {arr.shape}")
                continue
            p.data = arr.astype(p.dtype)


# ---------------------------------------------------------------------------
# checkpoint I/O
# ---------------------------------------------------------------------------

CKPT_MAGIC = b"AXC1"
CKPT_VERSION = 1
# E, layers, heads, classes, fusion, S, D, H, W, ffn mult, rica ratio,
# dropout, extractor kind, patch, extractor seed
_CONFIG_FORMAT = struct.Struct("<IIIIBIIIIIIfBII")


def _pack_config(c: ModelConfig) -> bytes:
    return _CONFIG_FORMAT.pack(
        c.embed_dim, c.layers, c.heads, c.num_classes, FUSIONS.index(c.fusion), c.slice_size,
        *c.volume_shape, c.ffn_multiplier, c.rica_ratio, c.dropout,
        EXTRACTOR_KINDS.index(c.extractor.kind), c.extractor.patch, c.extractor.seed,
    )


def _unpack_config(buf: bytes, off: int) -> ModelConfig:
    v = _CONFIG_FORMAT.unpack_from(buf, off)
    e, n, h, k, fusion, s, d, hh, w, ffn, ratio, drop, kind, patch, seed = v
    if fusion >= len(FUSIONS):
        raise FormatError("fusion", f"unknown fusion code {fusion}")
    if kind >= len(EXTRACTOR_KINDS):
        raise FormatError("extractor", f"unknown extractor kind code {kind}")
    try:
        return ModelConfig(
            e, n, h, k, FUSIONS[fusion], s, (d, hh, w), ffn, ratio, float(drop),
            ExtractorSpec(EXTRACTOR_KINDS[kind], e, patch, seed),
        )
    except ValueError as exc:
        raise FormatError("config", str(exc)) from None


def config_diff(a: ModelConfig, b: ModelConfig) -> list[str]:
    out = []
    for f in fields(ModelConfig):
        va, vb = getattr(a, f.name), getattr(b, f.name)
        if f.name == "dropout":
            va, vb = np.float32(va), np.float32(vb)
        if va != vb:
            out.append(f.name)
    return out


def save_checkpoint(model: AxialFuseModel, path) -> None:
    params = [(n, p) for n, p in model.named_parameters() if not p.frozen]
    parts = [CKPT_MAGIC, struct.pack("<B", CKPT_VERSION), _pack_config(model.config), struct.pack("<I", len(params))]
    for name, p in params:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<B{p.ndim}I", p.ndim, *p.shape))
        parts.append(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_checkpoint(path) -> tuple[ModelConfig, dict[str, np.ndarray]]:
    buf = Path(path).read_bytes()
    head = 5 + _CONFIG_FORMAT.size + 4
    if len(buf) < head:
        raise FormatError("header", "truncated checkpoint header")
    if buf[:4] != CKPT_MAGIC:
        raise FormatError("magic", f"expected {CKPT_MAGIC!r}, found {buf[:4]!r}")
    if buf[4] != CKPT_VERSION:
        raise FormatError("version", f"unsupported version {buf[4]}")
    config = _unpack_config(buf, 5)
    off = 5 + _CONFIG_FORMAT.size
    (count,) = struct.unpack_from("<I", buf, off)
    off += 4
    params: dict[str, np.ndarray] = {}
    for i in range(count):
        try:
            (n,) = struct.unpack_from("<H", buf, off)
            name = buf[off + 2 : off + 2 + n].decode("utf-8")
            off += 2 + n
            (ndim,) = struct.unpack_from("<B", buf, off)
            shape = struct.unpack_from(f"<{ndim}I", buf, off + 1)
            off += 1 + 4 * ndim
        except (struct.error, UnicodeDecodeError):
            raise FormatError("parameter", f"truncated or corrupt record {i}") from None
        size = int(np.prod(shape, dtype=np.int64))
        if off + 4 * size > len(buf):
            raise FormatError("payload", f"parameter {name!r} truncated")
        arr = np.frombuffer(buf, dtype="<f4", count=size, offset=off).reshape(shape).astype(np.float32)
        off += 4 * size
        if not np.all(np.isfinite(arr)):
            raise FormatError("payload", f"parameter {name!r} contains non-finite values")
        if name in params:
            raise FormatError("parameter", f"duplicate parameter {name!r}")
        params[name] = arr
    if off != len(buf):
        raise FormatError("payload", f"{len(buf) - off} trailing bytes")
    return config, params


def load_model(path, cache: FeatureCache | None = None) -> AxialFuseModel:
    config, _ = read_checkpoint(path)
    model = AxialFuseModel(config, cache=cache)
    model.load_params(path)
    return model


def parameter_count(config: ModelConfig) -> int:
    """Closed-form trainable parameter count (see README)."""
    e, n, k = config.embed_dim, config.layers, config.num_classes
    m, hidden = config.ffn_multiplier, max(1, config.embed_dim // config.rica_ratio)
    rica = 4 + (e * hidden + hidden) + (hidden * e + e) + 2
    tokens = sum((config.plane_length(p) + 2) * e for p in PLANES)
    self_layer = 4 * e + 4 * (e * e + e) + (e * m * e + m * e) + (m * e * e + e)
    cross_layer = self_layer + 2 * e
    head = 2 * e + (e * e + e) + (e * k + k)
    return 3 * rica + tokens + 3 * n * self_layer + 2 * n * cross_layer + 2 * head
