"""Hardware cost model: design metrics, per-image energy, memory and Pareto fronts.

Area and power per precision come from a synthesized 65 nm design of the
accelerator (embedded below as ``DESIGN_TABLE``); energy is average power
times active time, so ``E[uJ] = P[mW] * cycles / clock_hz * 1e3``.
Reference accuracy/energy tables for the published experiments are
embedded too, for regression tests and the example scripts.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from .errors import ConfigError, InputError
from .quantcore import PrecisionConfig

DATA_VERSION = 1

# name: (area mm^2, power mW, area saving %, power saving %)
DESIGN_TABLE: dict[str, tuple[float, float, float, float]] = {
    "Float(32,32)": (16.74, 1379.60, 0.00, 0.00),
    "Fixed(32,32)": (14.13, 1213.40, 15.56, 12.05),
    "Fixed(16,16)": (6.88, 574.75, 58.92, 58.34),
    "Fixed(8,8)": (3.36, 219.87, 79.94, 84.06),
    "Fixed(4,4)": (1.66, 111.17, 90.07, 91.94),
    "Pow2(6,16)": (3.05, 209.91, 81.78, 84.78),
    "Binary(1,16)": (1.21, 95.36, 92.73, 93.08),
}
FLOAT_ROW = "Float(32,32)"

# Published per-image results: precision -> (accuracy %, energy uJ, saving %); None = NA.
REFERENCE_RESULTS = {
    "mnist": {
        "Float(32,32)": (99.20, 60.74, 0.00),
        "Fixed(32,32)": (99.22, 52.93, 12.86),
        "Fixed(16,16)": (99.21, 24.60, 59.50),
        "Fixed(8,8)": (99.22, 8.86, 85.41),
        "Fixed(4,4)": (95.76, 4.31, 92.90),
        "Pow2(6,16)": (99.14, 8.42, 86.13),
        "Binary(1,16)": (99.40, 3.56, 94.13),
    },
    "svhn": {
        "Float(32,32)": (86.77, 754.18, 0.00),
        "Fixed(32,32)": (86.78, 663.01, 12.09),
        "Fixed(16,16)": (86.77, 314.05, 58.36),
        "Fixed(8,8)": (84.03, 120.14, 84.07),
        "Fixed(4,4)": None,
        "Pow2(6,16)": (84.85, 114.70, 84.79),
        "Binary(1,16)": (19.57, 52.11, 93.09),
    },
}

# CIFAR-10: (network, precision, accuracy %, energy uJ, saving % vs ALEX float).
# ``None`` marks the rows published as an energy multiple instead of a saving.
CIFAR_RESULTS = (
    ("alex", "Float(32,32)", 81.22, 335.68, 0.00),
    ("alex", "Fixed(32,32)", 79.71, 293.90, 12.45),
    ("alex", "Fixed(16,16)", 79.77, 136.61, 59.30),
    ("alex+", "Fixed(16,16)", 81.86, 491.32, None),
    ("alex++", "Fixed(16,16)", 82.26, 628.17, None),
    ("alex", "Fixed(8,8)", 77.99, 49.22, 85.34),
    ("alex+", "Fixed(8,8)", 78.71, 177.02, 47.27),
    ("alex++", "Fixed(8,8)", 75.03, 226.32, 32.59),
    ("alex", "Pow2(6,16)", 77.03, 46.77, 86.07),
    ("alex+", "Pow2(6,16)", 77.34, 168.21, 49.89),
    ("alex++", "Pow2(6,16)", 81.26, 215.05, 35.93),
    ("alex", "Binary(1,16)", 74.84, 19.79, 94.10),
    ("alex+", "Binary(1,16)", 77.91, 71.18, 78.80),
    ("alex++", "Binary(1,16)", 80.52, 91.00, 72.89),
)
# The two rows without a percentage are reported as energy multiples of ALEX float.
CIFAR_MULTIPLES = {("alex+", "Fixed(16,16)"): 1.5, ("alex++", "Fixed(16,16)"): 1.9}

# Share of accelerator power/area spent in the on-chip buffers, (min %, max %)
# across precisions. Reference data only.
BUFFER_SHARE = {"power": (75, 93), "area": (76, 96)}

CSV_HEADER = ("network", "precision", "accuracy_pct", "energy_uj", "energy_saving_pct",
              "memory_kb", "cycles", "pareto")


@dataclass(frozen=True)
class DesignMetrics:
    precision: str
    area_mm2: float
    power_mw: float
    area_saving_pct: float
    power_saving_pct: float

    @property
    def precision_label(self) -> tuple[int, int]:
        inner = self.precision[self.precision.index("(") + 1: -1]
        w, d = inner.split(",")
        return int(w), int(d)


@dataclass(frozen=True)
class EnergyReport:
    network: str
    precision: str
    accuracy: float | None  # percent; None when the run did not converge
    energy_uj: float
    energy_saving_pct: float
    memory_kb: float
    cycles: int

    @property
    def is_na(self) -> bool:
        return self.accuracy is None


def saving_pct(x: float, reference: float) -> float:
    return 100.0 * (1.0 - x / reference)


def load_design_table(path) -> dict[str, tuple[float, float, float, float]]:
    """Read a JSON override: ``{"rows": {"Fixed(8,8)": {"area_mm2": .., "power_mw": ..}, ...}}``.

    It must contain a ``Float(32,32)`` row; savings are recomputed from it.
    """
    try:
        doc = json.loads(Path(path).read_text())
        rows = {k: (float(v["area_mm2"]), float(v["power_mw"])) for k, v in doc["rows"].items()}
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise ConfigError(f"bad design table {path}: {e}") from e
    if FLOAT_ROW not in rows:
        raise ConfigError(f"design table {path} needs a {FLOAT_ROW} row")
    fa, fp = rows[FLOAT_ROW]
    return {k: (a, p, round(saving_pct(a, fa), 2), round(saving_pct(p, fp), 2))
            for k, (a, p) in rows.items()}


def _name(cfg) -> str:
    return cfg.name if isinstance(cfg, PrecisionConfig) else str(cfg)


def lookup_design_metrics(cfg, table=None) -> DesignMetrics:
    """Area/power row for a precision (a :class:`PrecisionConfig` or its name)."""
    table = DESIGN_TABLE if table is None else table
    name = _name(cfg)
    if name not in table:
        raise ConfigError(f"no design metrics for {name}; supported: {', '.join(table)}")
    return DesignMetrics(name, *table[name])


def energy_per_image(cycles: int, metrics: DesignMetrics | float, clock_hz: float = 2.5e8) -> float:
    """Energy in microjoules for ``cycles`` at the row's average power."""
    if cycles <= 0:
        raise InputError("cycles must be > 0")
    power = metrics.power_mw if isinstance(metrics, DesignMetrics) else float(metrics)
    return power * cycles / clock_hz * 1e3


def memory_footprint(net, cfg: PrecisionConfig) -> float:
    """Parameter storage in KB (1 KB = 1024 bytes) at the weight width."""
    from .quantnet.network import Network, param_count
    count = net.param_count() if isinstance(net, Network) else (
        net if isinstance(net, int) else param_count(net))
    return count * cfg.weight_bits / 8 / 1024


def dominates(a, b) -> bool:
    return (a.accuracy >= b.accuracy and a.energy_uj <= b.energy_uj
            and (a.accuracy > b.accuracy or a.energy_uj < b.energy_uj))


def pareto_front(rows):
    """Rows not dominated in (higher accuracy, lower energy), by energy ascending.

    NA rows never enter the front. Ties in energy keep input order.
    """
    rows = list(rows)
    if not rows:
        raise InputError("pareto_front needs at least one row")
    live = [r for r in rows if r.accuracy is not None]
    front = [r for r in live if not any(dominates(o, r) for o in live if o is not r)]
    return sorted(front, key=lambda r: r.energy_uj)


def cifar_reports() -> list[EnergyReport]:
    """The embedded CIFAR-10 rows as :class:`EnergyReport` rows (memory and cycles unknown: 0)."""
    ref = CIFAR_RESULTS[0][3]
    return [EnergyReport(n, p, a, e, saving_pct(e, ref) if s is None else s, 0.0, 0)
            for n, p, a, e, s in CIFAR_RESULTS]


def report_rows_csv(rows, timestamp: bool = True) -> str:
    """CSV text for report rows; ``pareto`` marks front membership."""
    rows = list(rows)
    front = {id(r) for r in pareto_front(rows)} if rows else set()
    buf = io.StringIO()
    if timestamp:
        buf.write(f"# generated {datetime.now(timezone.utc).isoformat(timespec='seconds')}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([r.network, r.precision,
                     "NA" if r.accuracy is None else f"{r.accuracy:.2f}",
                     f"{r.energy_uj:.2f}", f"{r.energy_saving_pct:.2f}", f"{r.memory_kb:.2f}",
                     r.cycles, int(id(r) in front)])
    return buf.getvalue()


def read_report_csv(path) -> list[EnergyReport]:
    """Parse a file written by :func:`report_rows_csv` (the timestamp line is skipped)."""
    lines = [l for l in Path(path).read_text().splitlines() if not l.startswith("#")]
    reader = csv.DictReader(lines)
    if tuple(reader.fieldnames or ()) != CSV_HEADER:
        raise InputError(f"{path}: unexpected header {reader.fieldnames}")
    out = []
    for row in reader:
        try:
            acc = None if row["accuracy_pct"] == "NA" else float(row["accuracy_pct"])
            out.append(EnergyReport(row["network"], row["precision"], acc,
                                    float(row["energy_uj"]), float(row["energy_saving_pct"]),
                                    float(row["memory_kb"]), int(row["cycles"])))
        except (TypeError, ValueError) as e:
            raise InputError(f"{path}: malformed row {row}: {e}") from e
    return out


def front_file_text(rows) -> str:
    """Two-column ``energy_uj accuracy_pct`` listing of the front, for gnuplot."""
    lines = ["# energy_uj accuracy_pct network precision"]
    for r in pareto_front(rows):
        lines.append(f"{r.energy_uj:.2f} {r.accuracy:.2f} # {r.network} {r.precision}")
    return "\n".join(lines) + "\n"

