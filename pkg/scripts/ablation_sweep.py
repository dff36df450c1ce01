"""Run the four-row ablation over several seeds and print mean test accuracy/AUC per row.

    python3 scripts/ablation_sweep.py --seeds 0 1 2 --epochs 5
"""
import argparse
import statistics
import tempfile
from pathlib import Path

from axialfuse.cli import main as cli


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--out", default=None)
    a = ap.parse_args()

    root = Path(a.out or tempfile.mkdtemp(prefix="ablate_"))
    data = root / "data"
    if cli(["synth", "--per-split", "10,5,5", "--side", "16", "--out", str(data)]) != 0:
        raise SystemExit(1)
    table: dict[str, list[tuple[str, str]]] = {}
    for seed in a.seeds:
        run = root / f"seed{seed}"
        code = cli(["ablate", "--manifest", str(data / "manifest.tsv"), "--out", str(run), "--seed", str(seed),
                    "--epochs", str(a.epochs), "--lr-max", "1e-3", "--warmup", "1", "--t0", "2",
                    "--reduced-layers", "1", "--reduced-heads", "1"])
        if code != 0:
            raise SystemExit(code)
        for row in (run / "ablation.tsv").read_text().splitlines()[1:]:
            name, acc, auc = row.split("\t")
            table.setdefault(name, []).append((acc, auc))

    print("method\tmean_acc\tmean_auc")
    for name, vals in table.items():
        accs = [float(x) for x, _ in vals]
        aucs = [float(y) for _, y in vals if y != "na"]
        mean_auc = f"{statistics.mean(aucs):.1f}" if aucs else "na"
        print(f"{name}\t{statistics.mean(accs):.1f}\t{mean_auc}")


if __name__ == "__main__":
    main()
