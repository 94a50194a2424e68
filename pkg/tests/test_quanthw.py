import csv
import json

import pytest

from oracles import brute_force_front
from qnnlab.accelsim import AccelConfig, schedule_network
from qnnlab.errors import ConfigError, InputError
from qnnlab.quantcore import REFERENCE_PRECISIONS, PrecisionConfig
from qnnlab.quanthw import (DESIGN_TABLE, FLOAT_ROW, REFERENCE_RESULTS, CIFAR_RESULTS, EnergyReport,
                            energy_per_image, front_file_text, load_design_table,
                            lookup_design_metrics, memory_footprint, pareto_front,
                            read_report_csv, report_rows_csv, saving_pct, cifar_reports)
from qnnlab.quantnet import BUILTINS, build_network


class TestDesignTable:
    @pytest.mark.parametrize("name", sorted(DESIGN_TABLE))
    def test_savings_consistent(self, name):
        fa, fp = DESIGN_TABLE[FLOAT_ROW][:2]
        a, p, sa, sp = DESIGN_TABLE[name]
        assert abs(saving_pct(a, fa) - sa) <= 0.05
        assert abs(saving_pct(p, fp) - sp) <= 0.05

    def test_lookup(self):
        m = lookup_design_metrics(PrecisionConfig.fixed(8))
        assert m.power_mw == 219.87 and m.precision_label == (8, 8)
        with pytest.raises(ConfigError):
            lookup_design_metrics(PrecisionConfig.fixed(32, 16))

    def test_override_file(self, tmp_path):
        f = tmp_path / "t.json"
        f.write_text(json.dumps({"rows": {FLOAT_ROW: {"area_mm2": 10, "power_mw": 100},
                                          "Fixed(8,8)": {"area_mm2": 5, "power_mw": 25}}}))
        t = load_design_table(f)
        assert lookup_design_metrics("Fixed(8,8)", t).power_saving_pct == 75.0
        f.write_text(json.dumps({"rows": {"Fixed(8,8)": {"area_mm2": 5, "power_mw": 25}}}))
        with pytest.raises(ConfigError):
            load_design_table(f)
        f.write_text("{")
        with pytest.raises(ConfigError):
            load_design_table(f)


class TestEnergy:
    def test_back_derived_cycles(self):
        assert round(energy_per_image(11007, lookup_design_metrics(FLOAT_ROW)), 2) == 60.74

    def test_formula(self):
        # 100 mW for 250 cycles at 250 MHz = 1 us -> 0.1 uJ
        assert energy_per_image(250, 100.0) == pytest.approx(0.1)

    @pytest.mark.parametrize("cycles", [0, -3])
    def test_bad_cycles(self, cycles):
        with pytest.raises(InputError):
            energy_per_image(cycles, 100.0)

    @pytest.mark.parametrize("p", REFERENCE_PRECISIONS[1:], ids=lambda p: p.slug)
    def test_mnist_savings_within_two_points(self, p):
        def energy(q):
            cyc = schedule_network(BUILTINS["lenet"], AccelConfig.for_precision(q), q).total_cycles
            return energy_per_image(cyc, lookup_design_metrics(q))
        got = saving_pct(energy(p), energy(REFERENCE_PRECISIONS[0]))
        assert abs(got - REFERENCE_RESULTS["mnist"][p.name][2]) <= 2.0


class TestMemory:
    def test_reference_footprints(self):
        f32 = PrecisionConfig.float32()
        assert abs(memory_footprint(BUILTINS["lenet"], f32) / 1650 - 1) <= 0.05
        assert abs(memory_footprint(BUILTINS["alex"], f32) / 350 - 1) <= 0.05

    def test_scaling_exact(self):
        net = build_network(BUILTINS["lenet"], 0)
        f = memory_footprint(net, PrecisionConfig.float32())
        assert memory_footprint(net, PrecisionConfig.binary()) * 32 == f
        assert memory_footprint(net, PrecisionConfig.fixed(8)) * 4 == f
        assert memory_footprint(431080, PrecisionConfig.fixed(16)) * 2 == f


def _row(acc, e, name="n"):
    return EnergyReport(name, "Fixed(8,8)", acc, e, 0.0, 0.0, 1)


class TestPareto:
    def test_cifar_front(self):
        rows = cifar_reports()
        got = pareto_front(rows)
        want = brute_force_front([(r.accuracy, r.energy_uj) for r in rows])
        assert {id(r) for r in got} == {id(rows[i]) for i in want}
        assert [(r.network, r.precision) for r in got] == [
            ("alex", "Binary(1,16)"), ("alex", "Pow2(6,16)"), ("alex", "Fixed(8,8)"),
            ("alex++", "Binary(1,16)"), ("alex++", "Pow2(6,16)"), ("alex+", "Fixed(16,16)"),
            ("alex++", "Fixed(16,16)")]

    def test_random_against_brute_force(self, rng):
        for _ in range(200):
            n = int(rng.integers(1, 12))
            pts = [(float(a), float(e)) for a, e in
                   zip(rng.integers(0, 5, n), rng.integers(0, 5, n))]
            rows = [_row(a, e) for a, e in pts]
            assert {id(r) for r in pareto_front(rows)} == \
                {id(rows[i]) for i in brute_force_front(pts)}

    def test_sorted_by_energy_and_na_excluded(self):
        rows = [_row(90, 5), _row(None, 1), _row(80, 2)]
        assert [r.energy_uj for r in pareto_front(rows)] == [2, 5]

    def test_empty(self):
        with pytest.raises(InputError):
            pareto_front([])

    def test_cifar_derived_savings(self):
        rows = {(r.network, r.precision): r for r in cifar_reports()}
        assert rows[("alex+", "Fixed(16,16)")].energy_saving_pct == pytest.approx(
            saving_pct(491.32, 335.68))
        assert len(rows) == len(CIFAR_RESULTS)


class TestCsv:
    def test_roundtrip(self, tmp_path):
        rows = [_row(99.2, 60.74, "lenet"), _row(None, 3.0, "lenet")]
        text = report_rows_csv(rows, timestamp=False)
        assert text == report_rows_csv(rows, timestamp=False)
        assert list(csv.reader(text.splitlines()))[2][2] == "NA"
        f = tmp_path / "r.csv"
        f.write_text(report_rows_csv(rows))
        back = read_report_csv(f)
        assert [r.accuracy for r in back] == [99.2, None]

    def test_bad_header(self, tmp_path):
        f = tmp_path / "r.csv"
        f.write_text("a,b\n1,2\n")
        with pytest.raises(InputError):
            read_report_csv(f)

    def test_front_text(self):
        text = front_file_text([_row(90, 5), _row(80, 2), _row(70, 9)])
        assert text.splitlines()[1:] == ["2.00 80.00 # n Fixed(8,8)", "5.00 90.00 # n Fixed(8,8)"]
