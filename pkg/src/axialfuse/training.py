"""Losses, Adam, the warm-restart schedule, evaluation and the training loop."""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AxialFuseError, ContractError, TrainingError
from .metrics import accuracy, auc
from .model import AxialFuseModel, ModelConfig, save_checkpoint
from .planar import AugmentPolicy, augment, sample_stream
from .tensor import Parameter, Tensor, backward, bce_with_logits, cross_entropy, no_grad
from .volume_io import RunManifest, load_split

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


def loss_fn(logits: Tensor, labels, task: str) -> Tensor:
    """Mean softmax cross-entropy (multiclass) or BCE-with-logits on
    logit[1] - logit[0] (binary)."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise ContractError(f"logits {logits.shape} do not match {labels.shape[0]} labels")
    k = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ContractError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    if task == "binary":
        if k != 2:
            raise ContractError(f"binary task needs 2 logits per row, got {k}")
        return bce_with_logits(logits[:, 1] - logits[:, 0], labels)
    if task != "multiclass":
        raise ContractError(f"unknown task {task!r}")
    return cross_entropy(logits, labels)


# ---------------------------------------------------------------------------
# optimiser
# ---------------------------------------------------------------------------


@dataclass
class OptimState:
    m: dict[int, np.ndarray] = field(default_factory=dict)
    v: dict[int, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class Adam:
    """Bias-corrected Adam. Frozen parameters are skipped entirely."""

    def __init__(self, params: list[Parameter], beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = [p for p in params if not p.frozen]
        self.state = OptimState(beta1=beta1, beta2=beta2, eps=eps)
        # moments are keyed by position; names need not be unique
        for i, p in enumerate(self.params):
            self.state.m[i] = np.zeros_like(p.data)
            self.state.v[i] = np.zeros_like(p.data)

    def step(self, lr: float) -> None:
        for p in self.params:
            if p.grad is None:
                raise ContractError(f"parameter {p.name!r} has no gradient")
        st = self.state
        st.step += 1
        b1, b2 = st.beta1, st.beta2
        c1 = 1.0 - b1**st.step
        c2 = 1.0 - b2**st.step
        for i, p in enumerate(self.params):
            g = p.grad
            m = st.m[i] = b1 * st.m[i] + (1.0 - b1) * g
            v = st.v[i] = b2 * st.v[i] + (1.0 - b2) * (g * g)
            update = (m / c1) / (np.sqrt(v / c2) + st.eps)
            p.data = (p.data - float(lr) * update).astype(p.dtype)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


# ---------------------------------------------------------------------------
# schedule
# ---------------------------------------------------------------------------


@dataclass
class ScheduleSpec:
    lr_init: float = 1e-12
    lr_max: float = 1e-5
    warmup_epochs: int = 5
    t0: int = 10
    tmult: int = 2
    epochs: int = 100
    steps_per_epoch: int = 1

    def __post_init__(self):
        if self.t0 < 1 or self.tmult < 1 or self.steps_per_epoch < 1:
            raise ValueError("t0, tmult and steps_per_epoch must be >= 1")
        if not 0 <= self.lr_init <= self.lr_max:
            raise ValueError("need 0 <= lr_init <= lr_max")


def cycle_position(step: int, spec: ScheduleSpec) -> tuple[int, int]:
    """(steps into current cycle, cycle length) for a post-warmup step."""
    tau = step - spec.warmup_epochs * spec.steps_per_epoch
    length = spec.t0 * spec.steps_per_epoch
    while tau >= length:
        tau -= length
        length *= spec.tmult
    return tau, length


def lr_at(step: int, spec: ScheduleSpec) -> float:
    """Linear warmup lr_init -> lr_max, then cosine annealing with warm restarts
    (cycle lengths t0, t0*tmult, ... epochs) between lr_max and lr_init."""
    if step < 0:
        raise ValueError("step must be >= 0")
    warm = spec.warmup_epochs * spec.steps_per_epoch
    if step < warm:
        f = step / warm
        return spec.lr_init * (1.0 - f) + spec.lr_max * f
    tau, length = cycle_position(step, spec)
    w = 0.5 * (1.0 + math.cos(math.pi * tau / length))
    return spec.lr_max * w + spec.lr_init * (1.0 - w)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    split: str
    loss: float
    accuracy: float
    auc: float | None
    class_counts: dict[int, int]
    n: int
    skipped_classes: list[int] = field(default_factory=list)


@dataclass
class Dataset:
    voxels: np.ndarray
    labels: np.ndarray
    ids: list[str]

    @classmethod
    def from_manifest(cls, manifest: RunManifest, split: str) -> "Dataset":
        return cls(*load_split(manifest, split))

    def __len__(self) -> int:
        return len(self.labels)


def probabilities(logits: np.ndarray) -> np.ndarray:
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def summarize(split: str, losses: list[tuple[float, int]], logits: np.ndarray, labels: np.ndarray, task: str, num_classes: int) -> EvalReport:
    n = int(labels.size)
    mean_loss = sum(l * b for l, b in losses) / max(n, 1)
    a = auc(probabilities(logits), labels, task, num_classes) if n else None
    counts = {c: int((labels == c).sum()) for c in range(num_classes)}
    return EvalReport(
        split, float(mean_loss), accuracy(logits.argmax(axis=1), labels),
        a.value if a else None, counts, n, a.skipped if a else [],
    )


def predict(model: AxialFuseModel, data: Dataset, batch_size: int = 4) -> np.ndarray:
    model.eval()
    out = []
    with no_grad():
        for i in range(0, len(data), batch_size):
            sl = slice(i, i + batch_size)
            out.append(model(data.voxels[sl], data.ids[sl]).fused.data)
    model.train()
    return np.concatenate(out) if out else np.zeros((0, model.config.num_classes), np.float32)


def evaluate(model: AxialFuseModel, data: Dataset, task: str, split: str, batch_size: int = 4) -> EvalReport:
    """Batched, augmentation-free evaluation of one split."""
    model.eval()
    losses, logits = [], []
    with no_grad():
        for i in range(0, len(data), batch_size):
            sl = slice(i, i + batch_size)
            out = model(data.voxels[sl], data.ids[sl]).fused
            losses.append((float(loss_fn(out, data.labels[sl], task).data), len(data.labels[sl])))
            logits.append(out.data)
    model.train()
    logits_arr = np.concatenate(logits) if logits else np.zeros((0, model.config.num_classes), np.float32)
    return summarize(split, losses, logits_arr, data.labels, task, model.config.num_classes)


def format_metric(x: float | None) -> str:
    return "na" if x is None else f"{x:.6f}"


def log_line(epoch: int, r: EvalReport, lr: float) -> str:
    return (
        f"epoch {epoch} split {r.split} loss {r.loss:.6f} acc {r.accuracy:.6f} "
        f"auc {format_metric(r.auc)} lr {lr:.6e}"
    )


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 4
    seed: int = 0
    max_steps: int | None = None


@dataclass
class TrainResult:
    model: AxialFuseModel
    best_epoch: int
    best_state: dict[str, np.ndarray]
    final_state: dict[str, np.ndarray]
    history: list[EvalReport]
    test_report: EvalReport
    log_lines: list[str]
    losses: list[float]
    steps: int


def steps_per_epoch(n_train: int, batch_size: int) -> int:
    return math.ceil(n_train / batch_size)


def _augment_batch(voxels: np.ndarray, ids: list[str], policy: AugmentPolicy, seed: int, epoch: int) -> np.ndarray:
    if not policy.active:
        return voxels
    return np.stack([augment(v, policy, sample_stream(seed, sid, epoch)) for v, sid in zip(voxels, ids)])


def train_loop(
    manifest: RunManifest,
    model_config: ModelConfig,
    schedule: ScheduleSpec,
    policy: AugmentPolicy,
    train: TrainConfig,
    out_dir=None,
    cache=None,
) -> TrainResult:
    """Seeded shuffled minibatches, per-epoch validation, best-validation-accuracy
    checkpoint (ties keep the earlier epoch), final test on that checkpoint.

    ``schedule.steps_per_epoch`` is overwritten with ceil(n_train / batch).
    The last partial batch is kept. With ``out_dir`` set, ``metrics.log``,
    ``best.axc`` and ``final.axc`` are written there.
    """
    manifest.require_splits()
    task = manifest.task
    if model_config.num_classes != manifest.num_classes:
        raise ContractError(
            f"model has {model_config.num_classes} classes but manifest declares {manifest.num_classes}"
        )
    data = {s: Dataset.from_manifest(manifest, s) for s in ("train", "validation", "test")}
    spe = steps_per_epoch(len(data["train"]), train.batch_size)
    schedule = dataclasses.replace(schedule, steps_per_epoch=spe)
    if cache is not None and policy.active:
        log.warning("cached features ignore volume augmentation")
        policy = AugmentPolicy.disabled()

    model = AxialFuseModel(model_config, seed=train.seed, cache=cache)
    opt = Adam(model.parameters())
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    lines: list[str] = []
    history: list[EvalReport] = []
    losses: list[float] = []
    best_acc, best_epoch, best_state, best_lr = -1.0, 0, model.state_dict(), 0.0
    step = 0
    tr = data["train"]
    for epoch in range(1, train.epochs + 1):
        if train.max_steps is not None and step >= train.max_steps:
            break
        order = np.random.default_rng(np.random.SeedSequence([train.seed, 7, epoch])).permutation(len(tr))
        batch_losses, batch_logits, batch_labels = [], [], []
        lr = lr_at(step, schedule)
        for start in range(0, len(tr), train.batch_size):
            if train.max_steps is not None and step >= train.max_steps:
                break
            idx = order[start : start + train.batch_size]
            ids = [tr.ids[i] for i in idx]
            x = _augment_batch(tr.voxels[idx], ids, policy, train.seed, epoch)
            lr = lr_at(step, schedule)
            try:
                opt.zero_grad()
                logits = model(x, ids).fused
                loss = loss_fn(logits, tr.labels[idx], task)
                backward(loss)
                opt.step(lr)
            except AxialFuseError as exc:
                raise TrainingError(f"epoch {epoch} step {step}: {exc}") from exc
            step += 1
            losses.append(float(loss.data))
            batch_losses.append((float(loss.data), len(idx)))
            batch_logits.append(logits.data)
            batch_labels.append(tr.labels[idx])
        if not batch_losses:
            break
        train_report = summarize(
            "train", batch_losses, np.concatenate(batch_logits), np.concatenate(batch_labels),
            task, model_config.num_classes,
        )
        val_report = evaluate(model, data["validation"], task, "validation", train.batch_size)
        history += [train_report, val_report]
        lines += [log_line(epoch, train_report, lr), log_line(epoch, val_report, lr)]
        log.info(lines[-1])
        if val_report.accuracy > best_acc:
            best_acc, best_epoch, best_state = val_report.accuracy, epoch, model.state_dict()
            best_lr = lr

    final_state = model.state_dict()
    if out is not None:
        save_checkpoint(model, out / "final.axc")
    model.load_state_dict(best_state)
    test_report = evaluate(model, data["test"], task, "test", train.batch_size)
    lines.append(log_line(best_epoch, test_report, best_lr))
    if out is not None:
        save_checkpoint(model, out / "best.axc")
        (out / "metrics.log").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return TrainResult(model, best_epoch, best_state, final_state, history, test_report, lines, losses, step)

