"""ALEX Fixed(8,8) trained from scratch on a CIFAR-10 subset (default 5000 images, 2 epochs).

Full CIFAR-10 training of ALEX/ALEX+/ALEX++ takes hours to days in numpy;
this is the desk-scale check that the quantized path converges.
Usage: python scripts/cifar_subset.py --dataset-dir data [--images 5000 --epochs 2]
"""
import argparse
import time

import numpy as np

from qnnlab.quantcore import PrecisionConfig
from qnnlab.quantdata import load_benchmark
from qnnlab.quantnet import BUILTINS, build_network
from qnnlab.quanttrain import TrainConfig, evaluate, fit, warm_start


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dataset-dir", default=None)
    ap.add_argument("--images", type=int, default=5000)
    ap.add_argument("--epochs", type=int, default=2)
    ap.add_argument("--net", default="alex", choices=("alex", "alex+", "alex++"))
    ap.add_argument("--precision", default="8,8,fixed")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    train, test = load_benchmark("cifar10", args.dataset_dir)
    train = train.subset(np.arange(min(args.images, len(train))))
    p = PrecisionConfig.parse(args.precision)
    state = warm_start(build_network(BUILTINS[args.net], args.seed), p, train.images[:500])
    t0 = time.time()
    for rec in fit(state, train, TrainConfig(epochs=args.epochs, seed=args.seed)):
        print(f"epoch {rec['epoch']} loss {rec['train_loss']:.4f} ({time.time() - t0:.0f}s)")
    print(f"{args.net} {p.name} test accuracy {100 * evaluate(state, test):.2f}%")


if __name__ == "__main__":
    main()
