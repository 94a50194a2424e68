"""Pareto front of the published CIFAR-10 accuracy/energy rows.

Needs no data. Writes a gnuplot-ready listing with --out.
Usage: python scripts/cifar_pareto.py [--out front.dat]
"""
import argparse
from pathlib import Path

from qnnlab.quanthw import front_file_text, pareto_front, cifar_reports


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=None)
    args = ap.parse_args()
    rows = cifar_reports()
    front = {id(r) for r in pareto_front(rows)}
    print(f"{'network':8s} {'precision':14s} {'acc_%':>6s} {'energy_uJ':>10s} front")
    for r in sorted(rows, key=lambda r: r.energy_uj):
        print(f"{r.network:8s} {r.precision:14s} {r.accuracy:6.2f} {r.energy_uj:10.2f} "
              f"{'*' if id(r) in front else ''}")
    if args.out:
        args.out.write_text(front_file_text(rows))
        print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
