"""Central-difference gradient checks and the registered-op/block suite.

Error metric, per checked tensor: max |analytic - numeric| divided by that
tensor's gradient scale max(max |analytic|, max |numeric|). The scale is
floored at 1e-3 of the largest scale over all checked tensors (and at an
absolute ``floor``), so tensors whose true gradient is structurally zero,
such as key-projection biases under softmax, are not judged on pure
finite-difference noise. The reported error is the worst over all tensors.
Everything here runs in float64.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .blocks import CrossAttentionLayer, EncoderConfig, RicaBlock, SelfAttentionLayer
from .errors import NumericError
from .model import AxialFuseModel, MLPHead, ModelConfig
from .extractor import ExtractorSpec
from .nn import Module
from .tensor import Tensor

F64 = np.float64


@dataclass
class GradReport:
    max_rel_err: float
    tol: float
    checked: int

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def gradcheck(
    f: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-6,
    tol: float = 1e-4,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-7,
) -> GradReport:
    """Compare backward() against central differences of ``f`` w.r.t. ``inputs``.

    ``f`` takes no arguments and must read the inputs' current ``.data``.
    With ``max_coords`` only that many randomly chosen coordinates per input
    are perturbed.
    """
    for t in inputs:
        if t.dtype != F64:
            raise TypeError("gradcheck runs in float64; cast inputs and parameters first")
        t.grad = None
    out = f()
    if out.size != 1:
        raise ValueError("gradcheck needs a scalar-valued function")
    grads = T.backward(out)
    checked = 0
    rng = rng or np.random.default_rng(0)
    pairs = []
    for t in inputs:
        analytic = grads.get(t, np.zeros_like(t.data)).reshape(-1)
        flat_idx = np.arange(t.size)
        if max_coords is not None and t.size > max_coords:
            flat_idx = np.sort(rng.choice(t.size, max_coords, replace=False))
        numeric = np.empty(flat_idx.size)
        base = t.data
        for j, i in enumerate(flat_idx):
            for sign in (1, -1):
                pert = base.copy().reshape(-1)
                pert[i] += sign * eps
                t.data = pert.reshape(base.shape)
                with T.no_grad():
                    val = float(f().data)
                numeric[j] = val if sign == 1 else (numeric[j] - val) / (2 * eps)
            t.data = base
        pairs.append((analytic[flat_idx], numeric))
        checked += flat_idx.size
    scales = [max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0)) for a, n in pairs]
    global_floor = max(floor, 1e-3 * max(scales, default=0.0))
    worst = 0.0
    for (a, n), scale in zip(pairs, scales):
        worst = max(worst, float(np.abs(a - n).max(initial=0.0)) / max(scale, global_floor))
    return GradReport(worst, tol, checked)


def check_module(module: Module, loss: Callable[[], Tensor], inputs: Sequence[Tensor] = (), tol: float = 1e-4, max_coords: int | None = 12, seed: int = 0) -> GradReport:
    params = [p for p in module.parameters() if not p.frozen]
    return gradcheck(loss, list(inputs) + params, tol=tol, max_coords=max_coords, rng=np.random.default_rng(seed))


def randomize(module: Module, rng: np.random.Generator, std: float = 0.3) -> Module:
    """Move every trainable parameter off its structured init so gradients are generic."""
    for p in module.parameters():
        if not p.frozen:
            p.data = p.data + rng.normal(0, std, p.shape).astype(p.dtype)
    return module


# ---------------------------------------------------------------------------
# suite
# ---------------------------------------------------------------------------


def _t(rng, *shape, positive=False):
    x = rng.standard_normal(shape)
    if positive:
        x = np.abs(x) + 0.5
    return Tensor(x.astype(F64), requires_grad=True)




def _op_cases(rng: np.random.Generator) -> dict[str, tuple[Callable[[], Tensor], list[Tensor]]]:
    a, b = _t(rng, 3, 4), _t(rng, 3, 4)
    bc = _t(rng, 4)
    m1, m2 = _t(rng, 2, 3, 4), _t(rng, 4, 5)
    x = _t(rng, 3, 5)
    gamma, beta = _t(rng, 5), _t(rng, 5)
    r = _t(rng, 3, 4, 5)
    c1, c2 = _t(rng, 1, 4), _t(rng, 3, 4)
    logits = _t(rng, 5, 4)
    labels = rng.integers(0, 4, 5)
    z = _t(rng, 6)
    targets = rng.integers(0, 2, 6)
    # well-separated values so max has a unique winner within +-eps
    mx = Tensor(rng.permutation(12).reshape(3, 4).astype(F64) + rng.uniform(0, 0.1, (3, 4)), requires_grad=True)
    wts = {k: Tensor(rng.standard_normal((64,))) for k in range(4)}

    def w(y, k=0):
        return (y.reshape(-1) * Tensor(wts[k].data[: y.size])).sum()

    return {
        "add": (lambda: w(a + bc), [a, bc]),
        "sub": (lambda: w(a - bc), [a, bc]),
        "mul": (lambda: w(a * b), [a, b]),
        "scale": (lambda: w(T.scale(a, -1.7)), [a]),
        "tanh": (lambda: w(a.tanh()), [a]),
        "sigmoid": (lambda: w(a.sigmoid()), [a]),
        "relu": (lambda: w(T.relu(a + 0.05 * np.sign(a.data))), [a]),
        "gelu": (lambda: w(a.gelu()), [a]),
        "matmul": (lambda: w(m1 @ m2), [m1, m2]),
        "softmax": (lambda: w(T.softmax(x, axis=-1)), [x]),
        "layernorm": (lambda: w(T.layernorm(x, gamma, beta)), [x, gamma, beta]),
        "reduce": (lambda: w(r.sum(axis=0)) + w(r.mean(axis=(1, 2)), 1) + w(mx.max(axis=1), 2), [r, mx]),
        "reshape": (lambda: w(r.reshape(4, 15)), [r]),
        "permute": (lambda: w(r.permute(2, 0, 1)), [r]),
        "concat": (lambda: w(T.concat([c1, c2], axis=0)), [c1, c2]),
        "getitem": (lambda: w(r[1, 1:3]), [r]),
        "cross_entropy": (lambda: T.cross_entropy(logits, labels), [logits]),
        "bce_with_logits": (lambda: T.bce_with_logits(z, targets), [z]),
    }


def _block_cases(rng: np.random.Generator):
    e, h = 16, 4
    cfg = EncoderConfig(e, 1, h)

    rica = randomize(RicaBlock(e, rng), rng).astype(F64)
    x_rica = _t(rng, 2, 6, e)
    yw = rng.standard_normal((2, 6, e))
    yield "rica", rica, (lambda: (rica(x_rica) * Tensor(yw)).sum()), [x_rica]

    sa = randomize(SelfAttentionLayer(cfg, rng), rng, 0.1).astype(F64)
    t_sa = _t(rng, 1, 5, e)
    sw = rng.standard_normal((1, 5, e))
    yield "self_attention", sa, (lambda: (sa(t_sa) * Tensor(sw)).sum()), [t_sa]

    ca = randomize(CrossAttentionLayer(cfg, rng), rng, 0.1).astype(F64)
    q, kv = _t(rng, 1, 4, e), _t(rng, 1, 6, e)
    cw = rng.standard_normal((1, 4, e))
    yield "cross_attention", ca, (lambda: (ca(q, kv) * Tensor(cw)).sum()), [q, kv]

    head = randomize(MLPHead(e, 3, rng), rng).astype(F64)
    cls = _t(rng, 2, e)
    hw = rng.standard_normal((2, 3))
    yield "mlp_head", head, (lambda: (head(cls) * Tensor(hw)).sum()), [cls]


def end_to_end_case(rng: np.random.Generator, fusion: str = "dual_axial"):
    cfg = ModelConfig(
        embed_dim=16, layers=1, heads=2, num_classes=3, fusion=fusion, slice_size=8,
        volume_shape=(8, 8, 8), extractor=ExtractorSpec("stub", 16, 4, 0),
    )
    model = randomize(AxialFuseModel(cfg, seed=int(rng.integers(1 << 30))), rng, 0.1).astype(F64)
    vols = rng.uniform(0, 1, (2, 1, 8, 8, 8))
    labels = rng.integers(0, 3, 2)

    def loss():
        return T.cross_entropy(model(vols).fused, labels)

    return model, loss


@dataclass
class SuiteRow:
    name: str
    kind: str
    report: GradReport | None
    error: str = ""

    @property
    def passed(self) -> bool:
        return self.report is not None and self.report.passed


def run_suite(seed: int = 0, ops: bool = True, blocks: bool = True, end_to_end: bool = True, max_coords: int = 8) -> list[SuiteRow]:
    rows: list[SuiteRow] = []
    rng = np.random.default_rng(seed)

    def guarded(name, kind, fn, tol):
        try:
            rows.append(SuiteRow(name, kind, fn()))
        except NumericError as exc:
            rows.append(SuiteRow(name, kind, None, f"numeric error in op {exc.op!r}"))
        if rows[-1].report is not None:
            rows[-1].report.tol = tol

    if ops:
        for name, (f, inputs) in _op_cases(rng).items():
            guarded(name, "op", lambda f=f, inputs=inputs: gradcheck(f, inputs, eps=1e-6, tol=1e-4), 1e-4)
        missing = set(T.OPS) - {r.name for r in rows}
        for name in sorted(missing):
            rows.append(SuiteRow(name, "op", None, "no gradient-check case registered"))
    if blocks:
        for name, module, loss, inputs in _block_cases(rng):
            guarded(name, "block", lambda m=module, l=loss, i=inputs: check_module(m, l, i, 1e-4, None), 1e-4)
    if end_to_end:
        model, loss = end_to_end_case(rng)
        guarded("model_end_to_end", "model", lambda: check_module(model, loss, (), 1e-3, max_coords, seed), 1e-3)
    return rows


def format_table(rows: list[SuiteRow]) -> str:
    out = [f"{'check':<20} {'kind':<6} {'max_rel_err':>12} {'tol':>8}  status"]
    for r in rows:
        err = f"{r.report.max_rel_err:12.3e}" if r.report else f"{'-':>12}"
        tol = f"{r.report.tol:8.0e}" if r.report else f"{'-':>8}"
        status = "ok" if r.passed else f"FAIL {r.error}".rstrip()
        out.append(f"{r.name:<20} {r.kind:<6} {err} {tol}  {status}")
    return "\n".join(out)


def timed_suite(seed: int = 0) -> tuple[list[SuiteRow], float]:
    t0 = time.perf_counter()
    rows = run_suite(seed)
    return rows, time.perf_counter() - t0
