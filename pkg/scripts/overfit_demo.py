"""Train the desk-sized model on a small synthetic set and report final-parameter fit.

    python3 scripts/overfit_demo.py --out /tmp/overfit
"""
import argparse
import tempfile
import time
from pathlib import Path

from axialfuse.model import ModelConfig
from axialfuse.planar import AugmentPolicy
from axialfuse.training import Dataset, ScheduleSpec, TrainConfig, evaluate, train_loop
from axialfuse.volume_io import SynthSpec, synth_dataset


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default=None, help="run directory (default: a temp dir)")
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--lr-max", type=float, default=1e-3)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()

    root = Path(a.out or tempfile.mkdtemp(prefix="overfit_"))
    t0 = time.perf_counter()
    manifest = synth_dataset(SynthSpec((10, 5, 5), 2, 16, a.seed), root / "data")
    cfg = ModelConfig(embed_dim=32, layers=2, heads=2, num_classes=2, volume_shape=(16, 16, 16))
    result = train_loop(manifest, cfg, ScheduleSpec(lr_max=a.lr_max), AugmentPolicy.disabled(),
                        TrainConfig(epochs=10_000, batch_size=4, seed=a.seed, max_steps=a.steps),
                        out_dir=root / "run")
    model = result.model
    model.load_state_dict(result.final_state)
    for split in ("train", "validation"):
        r = evaluate(model, Dataset.from_manifest(manifest, split), "binary", split)
        print(f"{split:<10} loss {r.loss:.4f} acc {r.accuracy:.3f}")
    print(f"{result.steps} steps, best epoch {result.best_epoch}, {time.perf_counter() - t0:.1f}s -> {root}")


if __name__ == "__main__":
    main()
