"""Train on digits, convert, and sweep firing delays; prints one table.

Drives both command line tools as subprocesses, the same way the
acceptance gate does: the trainer only ever talks to the engine through
exported files.

Usage: python3 scripts/qat_digits_pipeline.py [--epochs 20] [--workdir DIR]
"""

import argparse
import json
import subprocess
import sys
import tempfile
from pathlib import Path


def run(tool: str, *args: str) -> list[dict]:
    proc = subprocess.run([sys.executable, "-m", tool, *args],
                          capture_output=True, text=True)
    if proc.returncode != 0:
        sys.exit(f"{tool} {' '.join(args)} failed:\n{proc.stderr}")
    return [json.loads(l) for l in proc.stdout.splitlines() if l.strip()]


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workdir", default=None, help="keep artifacts here")
    args = ap.parse_args()

    base = Path(args.workdir) if args.workdir else Path(tempfile.mkdtemp(prefix="qat-"))
    ann, snn, val = base / "ann", base / "snn", base / "val"

    rec = run("toytrainer", "train", "--out", str(ann), "--epochs", str(args.epochs),
              "--seed", str(args.seed), "--val-images", str(val))[0]
    print(f"trained {rec['epochs']} epochs: train acc {rec['train_accuracy']:.4f}, "
          f"val acc {rec['val_accuracy']:.4f} ({rec['seconds']}s)")

    run("spikedrive", "convert", str(ann), "--out", str(snn))
    labels = json.loads((val / "labels.json").read_text())
    names = sorted(labels)
    y = [labels[n] for n in names]

    ann_recs = run("spikedrive", "run-ann", str(ann), "--inputs", str(val),
                   "--mode", "quant")
    ann_acc = sum(r["prediction"] == t for r, t in zip(ann_recs, y)) / len(y)
    print(f"engine quant accuracy on {len(y)} val images: {ann_acc:.4f}")

    print(f"{'delay':>5} {'accuracy':>9} {'agree':>9} {'spikes/img':>11}")
    for delay in range(5):
        recs = run("spikedrive", "run-snn", str(snn), "--inputs", str(val),
                   "--delay", str(delay))
        acc = sum(r["prediction"] == t for r, t in zip(recs, y)) / len(y)
        agree = sum(r["prediction"] == a["prediction"]
                    for r, a in zip(recs, ann_recs)) / len(y)
        spikes = sum(r["total_spikes"] for r in recs) / len(y)
        print(f"{delay:>5} {acc:>9.4f} {agree:>9.4f} {spikes:>11.0f}")
    print(f"artifacts in {base}")


if __name__ == "__main__":
    main()
