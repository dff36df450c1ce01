"""Acceptance criteria, one test each, every one printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` (the lines go to the
terminal even under capture) or ``python3 tests/test_acceptance.py``.
"""
from __future__ import annotations

import time
from fractions import Fraction

import numpy as np
import pytest

from axialfuse.blocks import CrossAttentionLayer, Encoder, EncoderConfig
from axialfuse.cli import main
from axialfuse.extractor import ExtractorSpec, PlaneSequence, read_cache, write_cache
from axialfuse.gradcheck import randomize, timed_suite
from axialfuse.metrics import macro_ovr_auc
from axialfuse.model import AxialFuseModel, ModelConfig, read_checkpoint, save_checkpoint
from axialfuse.planar import PLANES, AugmentPolicy, assemble_plane, slice_plane
from axialfuse.tensor import Tensor
from axialfuse.training import Dataset, ScheduleSpec, TrainConfig, evaluate, lr_at, train_loop
from axialfuse.volume_io import SynthSpec, Volume, read_volume, synth_dataset, write_volume

from corpus import corrupt_fixtures

RESULTS: dict[str, bool] = {}


@pytest.fixture
def report(capsys):
    def emit(name: str, ok: bool, detail: str) -> None:
        RESULTS[name] = ok
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        assert ok, detail

    return emit


def _small_model_config(fusion="dual_axial", **kw):
    base = dict(embed_dim=16, layers=1, heads=2, num_classes=3, fusion=fusion, slice_size=8,
                volume_shape=(8, 8, 8), extractor=ExtractorSpec("stub", 16, 4, 0))
    base.update(kw)
    return ModelConfig(**base)


def _tie(dst, src):
    own = dict(src.named_parameters())
    for name, p in dst.named_parameters():
        p.data = own[name].data.copy()


# 1 -------------------------------------------------------------------------------


def test_gradient_suite(report):
    rows, seconds = timed_suite(0)
    failed = [r.name for r in rows if not r.passed]
    worst_block = max(r.report.max_rel_err for r in rows if r.kind in ("op", "block") and r.report)
    e2e = next(r for r in rows if r.kind == "model")
    ok = not failed and seconds < 120 and e2e.report.tol == 1e-3
    report("gradient suite", ok,
           f"{len(rows)} checks, worst op/block {worst_block:.2e} (<1e-4), end-to-end "
           f"{e2e.report.max_rel_err:.2e} (<1e-3), {seconds:.1f}s (<120s), failed={failed}")


# 2 -------------------------------------------------------------------------------


def test_attention_normalization(report):
    rng = np.random.default_rng(2024)
    worst, configs = 0.0, 0
    for _ in range(120):
        heads = int(rng.choice([1, 2, 4]))
        e = heads * int(rng.integers(2, 6))
        layers = int(rng.integers(1, 3))
        mode = str(rng.choice(["self", "cross"]))
        enc = randomize(Encoder(EncoderConfig(e, layers, heads, mode=mode), rng), rng, float(rng.uniform(0.05, 1.0)))
        scale = float(rng.uniform(0.1, 10))
        q = Tensor((rng.standard_normal((int(rng.integers(1, 3)), int(rng.integers(1, 9)), e)) * scale).astype(np.float32))
        kv = Tensor((rng.standard_normal((q.shape[0], int(rng.integers(1, 9)), e)) * scale).astype(np.float32))
        enc(q) if mode == "self" else enc(q, kv)
        for p in enc.attention_probs():
            worst = max(worst, float(np.abs(p.astype(np.float64).sum(axis=-1) - 1).max()))
        configs += 1
    report("attention normalization", configs >= 100 and worst <= 1e-6,
           f"{configs} configurations, max |row sum - 1| = {worst:.2e} (<=1e-6)")


# 3 -------------------------------------------------------------------------------


def test_residual_omission_witness(report):
    invariant_ok, differs_ok = 0, 0
    for seed in range(20):
        cfg = EncoderConfig(16, 1, 4, mode="cross")
        plain = randomize(CrossAttentionLayer(cfg, np.random.default_rng(seed)), np.random.default_rng(seed + 99), 0.2)
        resid = randomize(CrossAttentionLayer(cfg, np.random.default_rng(seed), residual=True),
                          np.random.default_rng(seed + 99), 0.2)
        rng = np.random.default_rng(1000 + seed)
        kv = Tensor(rng.standard_normal((1, 1, 16)).astype(np.float32))
        q1 = Tensor(rng.standard_normal((1, 6, 16)).astype(np.float32))
        q2 = Tensor(rng.standard_normal((1, 6, 16)).astype(np.float32))
        t1, t2 = plain.attend(q1, kv).data, plain.attend(q2, kv).data
        invariant_ok += t1.tobytes() == t2.tobytes()
        r1 = resid.attend(q1, kv).data
        rows_differ = all(not np.array_equal(r1[0, i], t1[0, i])
                          for i in range(6) if not np.array_equal(q1.data[0, i], t1[0, i]))
        differs_ok += rows_differ and not np.array_equal(r1, t1)
    report("residual-omission witness", invariant_ok == 20 and differs_ok == 20,
           f"query-invariant on {invariant_ok}/20 seeds, residual variant differs on {differs_ok}/20")


# 4 -------------------------------------------------------------------------------


def test_directionality(report):
    diffs = []
    for seed in range(20):
        dual = randomize(AxialFuseModel(_small_model_config(), seed=seed), np.random.default_rng(seed), 0.1)
        rev = AxialFuseModel(_small_model_config("reversed_qkv"), seed=seed)
        _tie(rev, dual)
        v = np.random.default_rng(500 + seed).uniform(0, 1, (2, 1, 8, 8, 8)).astype(np.float32)
        diffs.append(float(np.abs(dual(v).fused.data - rev(v).fused.data).max()))
    report("directionality", min(diffs) > 1e-3,
           f"min over 20 seeds of max |dual - reversed| = {min(diffs):.3e} (>1e-3)")


# 5 -------------------------------------------------------------------------------


def test_graph_isolation(report):
    identical, changed = 0, 0
    for seed in range(10):
        m = randomize(AxialFuseModel(_small_model_config(), seed=seed), np.random.default_rng(seed), 0.1)
        rng = np.random.default_rng(seed + 7)
        stacks = m.plane_inputs(rng.uniform(0, 1, (2, 1, 8, 8, 8)).astype(np.float32))
        base = m.forward_stacks(stacks)
        bumped = dict(stacks, sagittal=stacks["sagittal"] + rng.uniform(-0.5, 0.5, stacks["sagittal"].shape).astype(np.float32))
        out = m.forward_stacks(bumped)
        identical += out.heads[0].data.tobytes() == base.heads[0].data.tobytes()
        changed += not np.array_equal(out.heads[1].data, base.heads[1].data)
    report("graph isolation", identical == 10 and changed == 10,
           f"axial-coronal head bit-identical {identical}/10, axial-sagittal head changed {changed}/10")


# 6 -------------------------------------------------------------------------------


def test_overfit_surrogate(report, tmp_path):
    t0 = time.perf_counter()
    manifest = synth_dataset(SynthSpec((10, 5, 5), 2, 16, 0), tmp_path)
    cfg = ModelConfig(embed_dim=32, layers=2, heads=2, num_classes=2, volume_shape=(16, 16, 16))
    result = train_loop(manifest, cfg, ScheduleSpec(lr_max=1e-3), AugmentPolicy.disabled(),
                        TrainConfig(epochs=1000, batch_size=4, seed=0, max_steps=200))
    model = result.model
    model.load_state_dict(result.final_state)
    train = evaluate(model, Dataset.from_manifest(manifest, "train"), "binary", "train")
    val = evaluate(model, Dataset.from_manifest(manifest, "validation"), "binary", "validation")
    seconds = time.perf_counter() - t0
    ok = (result.steps == 200 and train.n == 20 and train.accuracy == 1.0 and train.loss < 0.05
          and val.accuracy >= 0.8 and seconds < 300)
    report("overfit surrogate", ok,
           f"{result.steps} steps on {train.n} volumes: train acc {train.accuracy:.3f} (=1), "
           f"train loss {train.loss:.4f} (<0.05), val acc {val.accuracy:.3f} (>=0.8), {seconds:.1f}s (<300s)")


# 7 -------------------------------------------------------------------------------


def _pairwise_macro(scores, labels, k):
    vals = []
    for c in range(k):
        pos = scores[labels == c, c]
        neg = scores[labels != c, c]
        if len(pos) and len(neg):
            w = sum(Fraction(1) if a > b else Fraction(1, 2) if a == b else Fraction(0) for a in pos for b in neg)
            vals.append(w / (len(pos) * len(neg)))
    return sum(vals, Fraction(0)) / len(vals) if vals else None


def test_metric_oracle(report):
    rng = np.random.default_rng(7)
    matches, cases, max_k, ties = 0, 0, 0, 0
    for _ in range(120):
        n, k = int(rng.integers(2, 51)), int(rng.integers(2, 12))
        levels = int(rng.integers(1, 10))
        scores = rng.integers(0, levels, (n, k)) / levels
        labels = rng.integers(0, k, n)
        got = macro_ovr_auc(scores, labels, k).exact
        matches += got == _pairwise_macro(scores, labels, k)
        cases += 1
        max_k = max(max_k, k)
        ties += len(np.unique(scores)) < scores.size
    report("metric oracle", matches == cases >= 100,
           f"{matches}/{cases} exact matches (n<=50, up to {max_k} classes, {ties} instances with ties)")


# 8 -------------------------------------------------------------------------------


def test_determinism(report, tmp_path):
    assert main(["synth", "--per-split", "3,1,1", "--side", "8", "--seed", "4", "--out", str(tmp_path / "d")]) == 0
    args = ["train", "--manifest", str(tmp_path / "d" / "manifest.tsv"), "--embed-dim", "16", "--layers", "1",
            "--slice-size", "8", "--patch", "4", "--epochs", "3", "--warmup", "1", "--t0", "1",
            "--lr-max", "1e-3", "--augment", "all", "--seed", "9"]
    codes = [main(args + ["--out", str(tmp_path / r)]) for r in ("a", "b")]
    same = {name: (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
            for name in ("metrics.log", "best.axc", "final.axc")}
    report("determinism", codes == [0, 0] and all(same.values()),
           f"exit codes {codes}, bit-identical: {same}")


# 9 -------------------------------------------------------------------------------


def test_formats(report, tmp_path):
    rng = np.random.default_rng(0)
    v = Volume(rng.uniform(0, 1, (5, 6, 7)), id="v")
    write_volume(v, tmp_path / "v.axv")
    axv = read_volume(tmp_path / "v.axv").voxels.tobytes() == v.voxels.tobytes()

    seqs = [PlaneSequence(p, rng.standard_normal((4, 16)).astype(np.float32), "v") for p in PLANES]
    write_cache(seqs, tmp_path / "c.axe")
    store = read_cache(tmp_path / "c.axe")
    axe = all(store.lookup("v", s.plane).tobytes() == s.features.tobytes() for s in seqs)

    m = randomize(AxialFuseModel(_small_model_config()), rng, 0.1)
    save_checkpoint(m, tmp_path / "m.axc")
    _, params = read_checkpoint(tmp_path / "m.axc")
    own = {n: p for n, p in m.named_parameters() if not p.frozen}
    axc = set(params) == set(own) and all(params[n].tobytes() == own[n].data.tobytes() for n in own)

    outcomes = [(fx.name, *fx.check(tmp_path / fx.name)) for fx in corrupt_fixtures(tmp_path)]
    bad = [(name, got) for name, ok, got in outcomes if not ok]
    report("formats", axv and axe and axc and len(outcomes) >= 10 and not bad,
           f"round-trips AXV1={axv} AXE1={axe} AXC1={axc}; {len(outcomes) - len(bad)}/{len(outcomes)} "
           f"corrupt fixtures raised the documented error; mismatches={bad}")


# 10 ------------------------------------------------------------------------------


def test_schedule(report):
    spe = 7
    s = ScheduleSpec(1e-12, 1e-5, warmup_epochs=5, t0=10, tmult=2, epochs=100, steps_per_epoch=spe)
    warm = 5 * spe
    mid = (s.lr_max + s.lr_init) / 2
    checks = [(0, s.lr_init), (warm, s.lr_max)]
    start, length = warm, 10 * spe
    while start < 100 * spe:
        checks += [(start, s.lr_max), (start + length // 2, mid)]
        start, length = start + length, length * 2
    worst = max(abs(lr_at(step, s) - want) / want for step, want in checks)
    report("schedule", worst <= 1e-12,
           f"{len(checks)} anchor steps (start, warmup end, restarts, half-cycles), worst relative error {worst:.1e}")


# 11 ------------------------------------------------------------------------------


def test_slicing(report):
    rng = np.random.default_rng(11)
    exact = 0
    for _ in range(100):
        v = rng.uniform(0, 1, tuple(int(n) for n in rng.integers(2, 17, 3))).astype(np.float32)
        exact += all(assemble_plane(slice_plane(v, p), p).tobytes() == v.tobytes() for p in PLANES)
    located = 0
    for _ in range(10):
        shape = tuple(int(n) for n in rng.integers(2, 17, 3))
        d, h, w = (int(rng.integers(n)) for n in shape)
        v = np.zeros(shape, np.float32)
        v[d, h, w] = 1
        hits = {p: [i for i, s in enumerate(slice_plane(v, p)) if s.any()] for p in PLANES}
        located += hits == {"axial": [d], "coronal": [h], "sagittal": [w]}
    report("slicing", exact == 100 and located == 10,
           f"bit-exact reassembly {exact}/100 volumes x 3 planes, delta-voxel located {located}/10")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
