"""Per-layer LeNet schedule, energy and memory for every reference precision.

Needs no data. Usage: python scripts/lenet_cycles.py [--tn 16 --ti 16]
"""
import argparse

from qnnlab.accelsim import AccelConfig, schedule_network
from qnnlab.quantcore import REFERENCE_PRECISIONS
from qnnlab.quanthw import (REFERENCE_RESULTS, energy_per_image, lookup_design_metrics, memory_footprint,
                            saving_pct)
from qnnlab.quantnet import BUILTINS


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--tn", type=int, default=16)
    ap.add_argument("--ti", type=int, default=16)
    args = ap.parse_args()
    spec = BUILTINS["lenet"]

    base = schedule_network(spec, AccelConfig(args.tn, args.ti), REFERENCE_PRECISIONS[0])
    print("layer kind          positions out_tiles in_tiles  mac_cycles")
    for l in base.layers:
        print(f"{l.index:5d} {l.kind:13s} {l.positions:9d} {l.out_tiles:9d} {l.in_tiles:8d} "
              f"{l.mac_cycles:11d}")
    print()

    ref = None
    print(f"{'precision':14s} {'cycles':>7s} {'energy_uJ':>10s} {'saving_%':>9s} "
          f"{'published_%':>12s} {'memory_KB':>10s}")
    for p in REFERENCE_PRECISIONS:
        cfg = AccelConfig.for_precision(p, args.tn, args.ti)
        cycles = schedule_network(spec, cfg, p).total_cycles
        e = energy_per_image(cycles, lookup_design_metrics(p), cfg.clock_hz)
        ref = ref or e
        print(f"{p.name:14s} {cycles:7d} {e:10.2f} {saving_pct(e, ref):9.2f} "
              f"{REFERENCE_RESULTS['mnist'][p.name][2]:12.2f} {memory_footprint(spec, p):10.1f}")


if __name__ == "__main__":
    main()
