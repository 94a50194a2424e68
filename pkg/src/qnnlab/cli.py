"""``qnnlab`` command line: train, eval, simulate, report.

Exit codes: 0 success, 2 configuration error, 3 dataset ingestion error,
4 training divergence, 5 I/O error, 6 missing checkpoint, 7 malformed
output of an earlier run.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import checkpoint, quanthw
from .accelsim import AccelConfig, parse_schedule_dump, schedule_network, simulate_network
from .errors import (CheckpointError, ConfigError, IngestionError, InputError,
                     MalformedOutputError, MissingCheckpointError, TrainingDiverged)
from .quantcore import REFERENCE_PRECISIONS, PrecisionConfig
from .quantdata import load_benchmark, validation_split
from .quantnet import build_network, get_network_spec
from .quantnet.specs import BUILTINS, DATASET_OF, NetworkSpec, parse_network_text
from .quanttrain import (TrainConfig, evaluate, fit, float_state, qat_config, warm_start)

log = logging.getLogger("qnnlab")

EXIT_OK, EXIT_CONFIG, EXIT_INGEST, EXIT_DIVERGED, EXIT_IO, EXIT_NO_CKPT, EXIT_MALFORMED = \
    0, 2, 3, 4, 5, 6, 7

METRICS_HEADER = ("network", "precision", "epoch", "lr", "train_loss", "val_acc", "test_acc",
                  "status")
SPEC_FILE = "network.net"
CALIB_SIZE = 500
VAL_FRACTION = 0.1


def format_accuracy(acc: float) -> str:
    """Accuracy (fraction) as the percent string used in logs, CSVs and ``eval``."""
    return f"{100.0 * acc:.2f}"


def _timestamp_line() -> str:
    return f"# generated {datetime.now(timezone.utc).isoformat(timespec='seconds')}\n"


def _precisions(args) -> list[PrecisionConfig]:
    if not args.precision:
        return list(REFERENCE_PRECISIONS)
    return [PrecisionConfig.parse(t) for t in args.precision]


def _spec(args) -> NetworkSpec:
    return get_network_spec(args.net)


def _dataset_name(spec: NetworkSpec, args) -> str:
    name = getattr(args, "dataset", None) or DATASET_OF.get(spec.name)
    if name is None:
        raise ConfigError(f"no default dataset for network {spec.name!r}; pass --dataset")
    if name not in ("mnist", "cifar10"):
        raise ConfigError(f"dataset {name!r} is not supported (mnist, cifar10)")
    return name


def _load_data(spec, args):
    train, test = load_benchmark(_dataset_name(spec, args), args.dataset_dir)
    if args.limit:
        train = train.subset(np.arange(min(args.limit, len(train))))
    _, val = validation_split(test, VAL_FRACTION, args.seed)
    return train, val, test


class _MetricsLog:
    def __init__(self, path: Path, network: str, precision: PrecisionConfig, timestamp: bool):
        self.path, self.network, self.precision = path, network, precision
        self.rows = []
        self.timestamp = timestamp

    def add(self, epoch, lr, loss, val, test, status="ok"):
        self.rows.append([self.network, self.precision.tag, epoch,
                          "" if lr is None else f"{lr:.6g}",
                          "" if loss is None else f"{loss:.6f}",
                          "" if val is None else format_accuracy(val),
                          "" if test is None else format_accuracy(test), status])
        self.write()

    def write(self):
        buf = io.StringIO()
        if self.timestamp:
            buf.write(_timestamp_line())
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        w.writerows(self.rows)
        self.path.write_text(buf.getvalue())


def _train_one(state, train, val, test, cfg, epochs, mlog: _MetricsLog):
    def on_epoch(rec, st):
        acc = evaluate(st, test)
        log.info("%s %s epoch %d loss %.4f val %s test %s", st.network.spec.name,
                 st.precision.name, rec["epoch"], rec["train_loss"],
                 format_accuracy(rec["val_acc"]), format_accuracy(acc))
        mlog.add(rec["epoch"], rec["lr"], rec["train_loss"], rec["val_acc"], acc)

    fit(state, train, cfg, val=val, epochs=epochs, on_epoch=on_epoch)


def cmd_train(args) -> int:
    spec = _spec(args)
    precisions = _precisions(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / SPEC_FILE).write_text(spec.to_text())
    train, val, test = _load_data(spec, args)
    ts = not args.no_timestamp
    base = TrainConfig(learning_rate=args.lr, batch_size=args.batch_size, epochs=args.epochs,
                       seed=args.seed)
    float_cfg = PrecisionConfig.float32()

    if args.checkpoint:
        fstate = checkpoint.load(args.checkpoint)
        if fstate.precision != float_cfg:
            raise ConfigError(f"{args.checkpoint} is not a float checkpoint")
        log.info("loaded float baseline from %s", args.checkpoint)
    else:
        fstate = float_state(build_network(spec, args.seed))
        mlog = _MetricsLog(out / f"{float_cfg.slug}.metrics.csv", spec.name, float_cfg, ts)
        mlog.add(0, None, None, evaluate(fstate, val), evaluate(fstate, test))
        _train_one(fstate, train, val, test, base, args.epochs, mlog)
        checkpoint.save(fstate, out / f"{float_cfg.slug}.ckpt")

    diverged = []
    for p in precisions:
        if p == float_cfg:
            if args.checkpoint:  # baseline was not trained here; still report it
                mlog = _MetricsLog(out / f"{p.slug}.metrics.csv", spec.name, p, ts)
                mlog.add(fstate.epoch, None, None, evaluate(fstate, val), evaluate(fstate, test))
                checkpoint.save(fstate, out / f"{p.slug}.ckpt")
            continue
        mlog = _MetricsLog(out / f"{p.slug}.metrics.csv", spec.name, p, ts)
        state = warm_start(fstate.network, p, train.images[:CALIB_SIZE])
        mlog.add(0, None, None, evaluate(state, val), evaluate(state, test))
        cfg = qat_config(p, base, args.qat_epochs, args.qat_lr)
        try:
            _train_one(state, train, val, test, cfg, args.qat_epochs, mlog)
        except TrainingDiverged as e:
            log.warning("%s diverged at step %s; recorded as NA", p.name, e.step)
            mlog.add(state.epoch, None, None, None, None, "diverged")
            diverged.append(p.name)
            continue
        checkpoint.save(state, out / f"{p.slug}.ckpt")
    if diverged:
        print(f"diverged: {', '.join(diverged)}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if not args.checkpoint:
        raise MissingCheckpointError("eval needs --checkpoint")
    state = checkpoint.load(args.checkpoint)
    spec = state.network.spec
    if args.net and _spec(args).layers != spec.layers:
        raise ConfigError(f"--net {args.net} does not match the checkpoint's network")
    _, test = load_benchmark(_dataset_name(spec, args), args.dataset_dir)
    if args.limit:
        test = test.subset(np.arange(min(args.limit, len(test))))
    acc = evaluate(state, test)
    print(f"network={spec.name} precision={state.precision.tag} accuracy_pct={format_accuracy(acc)}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    if args.checkpoint:
        state = checkpoint.load(args.checkpoint)
        runs = [(state.network, state.precision)]
    else:
        spec = _spec(args)
        net = build_network(spec, args.seed)
        calib = rng.random((16,) + tuple(spec.input_shape))
        runs = [(warm_start(net, p, calib).network, p) for p in _precisions(args)]
    for net, p in runs:
        acc = AccelConfig.for_precision(p)
        x = rng.random((args.limit or 1,) + tuple(net.spec.input_shape))
        _, sched = simulate_network(net, p, acc, x)
        path = out / f"{net.spec.name}.{p.slug}.schedule.txt"
        path.write_text(sched.dump())
        print(f"network={net.spec.name} precision={p.tag} cycles={sched.total_cycles} "
              f"nfu_stages={sched.nfu_stages} schedule={path}")
    return EXIT_OK


def _precision_order(name: str) -> int:
    names = [p.name for p in REFERENCE_PRECISIONS]
    return names.index(name) if name in names else len(names)


def _read_metrics(path: Path):
    lines = [l for l in path.read_text().splitlines() if l and not l.startswith("#")]
    rows = list(csv.DictReader(lines))
    if not rows or tuple(rows[0].keys()) != METRICS_HEADER:
        raise MalformedOutputError(f"{path}: not a metrics file")
    last = rows[-1]
    try:
        p = PrecisionConfig.parse(last["precision"])
        acc = None if last["status"] != "ok" else float(last["test_acc"])
    except (ConfigError, ValueError) as e:
        raise MalformedOutputError(f"{path}: {e}") from e
    return last["network"], p, acc


def _run_spec(run_dir: Path, network: str) -> NetworkSpec:
    f = run_dir / SPEC_FILE
    if f.exists():
        try:
            return parse_network_text(f.read_text(), network, str(f))
        except ConfigError as e:
            raise MalformedOutputError(str(e)) from e
    if network in BUILTINS:
        return BUILTINS[network]
    raise MalformedOutputError(f"{run_dir}: no {SPEC_FILE} for network {network!r}")


def _cycles(run_dir: Path, spec: NetworkSpec, p: PrecisionConfig) -> int:
    dump = run_dir / f"{spec.name}.{p.slug}.schedule.txt"
    if dump.exists():
        try:
            return int(parse_schedule_dump(dump.read_text())["cycles"])
        except (ConfigError, ValueError) as e:
            raise MalformedOutputError(f"{dump}: {e}") from e
    return schedule_network(spec, AccelConfig.for_precision(p), p).total_cycles


def _reference_energy(spec: NetworkSpec, run_dir: Path) -> float:
    """Float energy of the unexpanded network (ALEX for ALEX+/ALEX++)."""
    base = spec.name.rstrip("+")
    ref_spec = BUILTINS.get(base, spec) if base != spec.name else spec
    f = PrecisionConfig.float32()
    cycles = _cycles(run_dir, ref_spec, f)
    return quanthw.energy_per_image(cycles, quanthw.lookup_design_metrics(f))


def build_report(run_dirs) -> list[quanthw.EnergyReport]:
    rows = []
    for d in map(Path, run_dirs):
        files = sorted(d.glob("*.metrics.csv"))
        if not files:
            raise MalformedOutputError(f"{d}: no *.metrics.csv files")
        for f in files:
            network, p, acc = _read_metrics(f)
            spec = _run_spec(d, network)
            cycles = _cycles(d, spec, p)
            energy = quanthw.energy_per_image(cycles, quanthw.lookup_design_metrics(p))
            rows.append(quanthw.EnergyReport(
                network, p.name, acc, energy,
                quanthw.saving_pct(energy, _reference_energy(spec, d)),
                quanthw.memory_footprint(spec, p), cycles))
    rows.sort(key=lambda r: (r.network.count("+"), r.network, _precision_order(r.precision)))
    return rows


def cmd_report(args) -> int:
    dirs = args.runs or [args.out]
    rows = build_report(dirs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(quanthw.report_rows_csv(rows, timestamp=not args.no_timestamp))
    live = [r for r in rows if not r.is_na]
    (out / "front.dat").write_text(quanthw.front_file_text(live) if live else "")
    print(f"wrote {out / 'report.csv'} ({len(rows)} rows) and {out / 'front.dat'}")
    return EXIT_OK


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="qnnlab", description="Quantized CNN training, accelerator simulation and cost reports.",
        epilog="Exit codes: 0 ok, 2 config, 3 ingestion, 4 divergence, 5 I/O, "
               "6 missing checkpoint, 7 malformed prior output.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, net_required=False):
        p.add_argument("--net", required=net_required,
                       help="built-in network (lenet, convnet, alex, alex+, alex++) or a .net file")
        p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
        p.add_argument("--out", default="runs", help="output directory (default runs)")

    def data(p):
        p.add_argument("--dataset-dir", default=None,
                       help="dataset root (default: $QNNLAB_DATA, then ./data)")
        p.add_argument("--dataset", choices=("mnist", "cifar10"), default=None,
                       help="dataset (default: the network's benchmark)")
        p.add_argument("--limit", type=_positive_int, default=None,
                       help="use only the first N samples (train: training set; "
                            "eval: test set; simulate: number of random inputs)")

    def precision(p):
        p.add_argument("--precision", action="append", metavar="W,IN,SCHEME",
                       help="precision label, e.g. 16,16,fixed / 6,16,pow2 / 1,16,binary; "
                            "repeatable (default: all seven reference precisions)")

    t = sub.add_parser("train", help="train a float baseline, then warm-started QAT per precision")
    common(t, net_required=True)
    data(t)
    precision(t)
    t.add_argument("--epochs", type=int, default=10, help="float training epochs (default 10)")
    t.add_argument("--qat-epochs", type=int, default=3, help="QAT epochs per precision (default 3)")
    t.add_argument("--batch-size", type=_positive_int, default=64, help="mini-batch size (default 64)")
    t.add_argument("--lr", type=float, default=0.01, help="float learning rate (default 0.01)")
    t.add_argument("--qat-lr", type=float, default=None,
                   help="QAT learning rate (default 0.001; 0.03 for binary)")
    t.add_argument("--checkpoint", default=None,
                   help="reuse this float checkpoint instead of training a baseline")
    t.add_argument("--no-timestamp", action="store_true",
                   help="omit the '# generated' line from CSV outputs")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="print the test accuracy of a checkpoint")
    common(e)
    data(e)
    e.add_argument("--checkpoint", default=None, help="checkpoint to evaluate (required)")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("simulate", help="run the accelerator model and write schedule dumps")
    common(s)
    data(s)
    precision(s)
    s.add_argument("--checkpoint", default=None,
                   help="simulate this checkpoint (default: random weights for --net)")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("report", help="aggregate run directories into report.csv and front.dat")
    common(r)
    r.add_argument("runs", nargs="*", help="run directories to read (default: --out)")
    r.add_argument("--no-timestamp", action="store_true",
                   help="omit the '# generated' line from report.csv")
    r.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.command == "simulate" and not args.checkpoint and not args.net:
        print("error: simulate needs --net or --checkpoint", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except MissingCheckpointError as e:
        code, msg = EXIT_NO_CKPT, e
    except (CheckpointError, MalformedOutputError) as e:
        code, msg = EXIT_MALFORMED, e
    except TrainingDiverged as e:
        code, msg = EXIT_DIVERGED, e
    except IngestionError as e:
        code, msg = EXIT_INGEST, e
    except (ConfigError, InputError) as e:
        code, msg = EXIT_CONFIG, e
    except OSError as e:
        code, msg = EXIT_IO, e
    print(f"error: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
