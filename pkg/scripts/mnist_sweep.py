"""LeNet on MNIST: float baseline, then warm-started QAT at every reference precision.

Thin wrapper over ``qnnlab train`` + ``qnnlab simulate`` + ``qnnlab report``.
Needs the MNIST IDX files under --dataset-dir (or $QNNLAB_DATA).
Usage: python scripts/mnist_sweep.py --dataset-dir data --out runs/mnist
"""
import argparse
import sys

from qnnlab.cli import main as qnnlab


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dataset-dir", default=None)
    ap.add_argument("--out", default="runs/mnist")
    ap.add_argument("--epochs", default="10")
    ap.add_argument("--qat-epochs", default="2")
    ap.add_argument("--seed", default="0")
    args = ap.parse_args()
    data = ["--dataset-dir", args.dataset_dir] if args.dataset_dir else []
    steps = [
        ["-v", "train", "--net", "lenet", "--out", args.out, "--seed", args.seed,
         "--epochs", args.epochs, "--qat-epochs", args.qat_epochs, *data],
        ["report", args.out, "--out", args.out],
    ]
    for argv in steps:
        code = qnnlab(argv)
        if code:
            return code
    print(open(f"{args.out}/report.csv").read())
    return 0


if __name__ == "__main__":
    sys.exit(main())
