import math

import numpy as np
import pytest

from oracles import enumerate_loop_nest, logged_traffic, naive_mac
from qnnlab.accelsim import (AccelConfig, buffer_traffic, layer_geometry, nfu_apply,
                             parse_schedule_dump, schedule_network, simulate_network)
from qnnlab.errors import ConfigError
from qnnlab.quantcore import (REFERENCE_PRECISIONS, FixedPointFormat, PrecisionConfig,
                              quantize_binary, quantize_fixed, quantize_pow2, Pow2Format)
from qnnlab.quantnet import BUILTINS, NetworkSpec, build_network, forward
from qnnlab.quantnet.specs import conv, ip, maxpool, relu
from qnnlab.quanttrain import warm_start

LENET = BUILTINS["lenet"]
SMALL = NetworkSpec("small", (9, 9, 3), (conv(3, 20, pad=1), relu(), maxpool(2, 2), ip(37),
                                         relu(), ip(10)))
F32 = PrecisionConfig.float32()


def _weighted(spec):
    shapes = spec.shapes()
    for i, layer in enumerate(spec.layers):
        if layer.kind in ("conv", "innerproduct"):
            yield i, layer_geometry(layer, spec.input_shape_of(i), shapes[i])


class TestSchedule:
    @pytest.mark.parametrize("tn,ti", [(16, 16), (1, 1), (4, 8), (7, 3)])
    def test_matches_loop_enumeration(self, tn, ti):
        sched = schedule_network(SMALL, AccelConfig(tn, ti), F32)
        for row, (_, (p, co, k)) in zip(sched.layers, _weighted(SMALL)):
            assert row.mac_cycles == enumerate_loop_nest(p, co, k, tn, ti)

    def test_lenet_cycles(self):
        sched = schedule_network(LENET, AccelConfig(), F32)
        # conv1 576*2*2, conv2 64*4*32, ip1 32*50, ip2 1*32
        assert [l.mac_cycles for l in sched.layers] == [2304, 8192, 1600, 32]
        assert sched.total_cycles == 12128 + 4 * 2
        assert abs(sched.total_cycles / 11007 - 1) <= 0.25

    def test_binary_pipeline_shorter(self):
        p = PrecisionConfig.binary()
        sched = schedule_network(LENET, AccelConfig.for_precision(p), p)
        assert sched.total_cycles == 12128 + 4

    def test_unit_tiles_count_macs(self):
        sched = schedule_network(LENET, AccelConfig(1, 1), F32)
        assert sched.mac_cycles == sum(l.macs for l in sched.layers)

    def test_monotone_in_tile_size(self):
        prev = None
        for t in (1, 2, 4, 8, 16, 32):
            c = schedule_network(LENET, AccelConfig(t, t), F32).mac_cycles
            assert prev is None or c <= prev
            prev = c

    @pytest.mark.parametrize("p", REFERENCE_PRECISIONS, ids=lambda p: p.slug)
    def test_traffic_matches_logged_loads(self, p):
        cfg = AccelConfig.for_precision(p, tn=16, ti=16)
        sched = schedule_network(SMALL, cfg, p)
        want = dict.fromkeys(("sb", "nbin", "nbout"), 0)
        for _, (pos, co, k) in _weighted(SMALL):
            for key, v in logged_traffic(pos, co, k, 16, 16, p.weight_bits,
                                         p.data_bits).items():
                want[key] += v
        assert buffer_traffic(sched) == {k: v / 8 for k, v in want.items()}

    def test_halving_bits_halves_traffic(self):
        a = schedule_network(LENET, AccelConfig(), PrecisionConfig.fixed(16))
        b = schedule_network(LENET, AccelConfig(), PrecisionConfig.fixed(8))
        for k, v in a.buffer_loads.items():
            assert b.buffer_loads[k] == v / 2
        assert a.total_cycles == b.total_cycles

    def test_dump_roundtrip(self):
        p = PrecisionConfig.binary()
        sched = schedule_network(LENET, AccelConfig.for_precision(p), p)
        d = parse_schedule_dump(sched.dump())
        assert d["nfu_stages"] == "2" and int(d["cycles"]) == sched.total_cycles
        with pytest.raises(ConfigError):
            parse_schedule_dump("# empty\n")


class TestConfig:
    def test_invalid(self):
        for kw in (dict(tn=0), dict(nfu_stages=4), dict(clock_hz=0)):
            with pytest.raises(ConfigError):
                AccelConfig(**kw)

    def test_stage_count_checked(self):
        with pytest.raises(ConfigError):
            AccelConfig(nfu_stages=3).check(PrecisionConfig.binary())
        with pytest.raises(ConfigError):
            AccelConfig(nfu_stages=2).check(PrecisionConfig.fixed(8))

    def test_buffer_too_small(self):
        p = PrecisionConfig.fixed(16)
        small = AccelConfig(buffer_bytes={"nbin": 32, "sb": 511, "nbout": 32})
        with pytest.raises(ConfigError, match="sb"):
            small.check(p)
        AccelConfig(buffer_bytes={"nbin": 32, "sb": 512, "nbout": 32}).check(p)
        with pytest.raises(ConfigError):
            AccelConfig(buffer_bytes={"nbin": 32}).check(p)


class TestNfu:
    def _dyadic(self, rng, shape, frac=6):
        return quantize_fixed(rng.normal(size=shape), FixedPointFormat(16, frac))

    def test_fixed(self, rng):
        w, x = self._dyadic(rng, (16, 16)), self._dyadic(rng, 16, 10)
        np.testing.assert_array_equal(nfu_apply(w, x, "fixed"), naive_mac(w, x))

    def test_pow2_is_shift(self, rng):
        w = quantize_pow2(rng.normal(size=(16, 16)), Pow2Format())
        w[0, :3] = 0.0
        x = self._dyadic(rng, 16, 10)
        np.testing.assert_array_equal(nfu_apply(w, x, "pow2"), naive_mac(w, x))

    def test_binary_is_negate(self, rng):
        w = quantize_binary(rng.normal(size=(16, 16)))
        x = self._dyadic(rng, 16, 10)
        np.testing.assert_array_equal(nfu_apply(w, x, "binary"), naive_mac(w, x))

    def test_partial_tile_padded(self, rng):
        w, x = self._dyadic(rng, (5, 3)), self._dyadic(rng, 5)
        np.testing.assert_array_equal(nfu_apply(w, x, "fixed", 16), naive_mac(w, x))

    def test_mismatch(self):
        with pytest.raises(ConfigError):
            nfu_apply(np.ones((4, 2)), np.ones(3), "fixed")
        with pytest.raises(ConfigError):
            nfu_apply(np.ones((32, 2)), np.ones(32), "fixed", 16)


class TestSimulate:
    @pytest.mark.parametrize("p", REFERENCE_PRECISIONS, ids=lambda p: p.slug)
    @pytest.mark.parametrize("tile", [16, 4])
    def test_bit_exact_small(self, p, tile, rng):
        x = rng.random((5, 9, 9, 3))
        state = warm_start(build_network(SMALL, 2), p, x)
        cfg = AccelConfig.for_precision(p, tn=tile, ti=tile)
        got, _ = simulate_network(state.network, p, cfg, x)
        want = forward(state.network, x, p, accumulate="tree", width=tile)
        np.testing.assert_array_equal(got, want)

    def test_log_equals_schedule(self, rng):
        p = PrecisionConfig.fixed(8)
        x = rng.random((2, 9, 9, 3))
        state = warm_start(build_network(SMALL, 2), p, x)
        _, sched, log = simulate_network(state.network, p, None, x, return_log=True)
        assert log.bytes == sched.buffer_loads

    def test_single_image(self, rng):
        x = rng.random((9, 9, 3))
        net = build_network(SMALL, 0)
        logits, sched = simulate_network(net, F32, None, x)
        assert logits.shape == (10,) and sched.nfu_stages == 3

    def test_bad_input_shape(self):
        with pytest.raises(ConfigError):
            simulate_network(build_network(SMALL, 0), F32, None, np.zeros((8, 8, 3)))


def test_lenet_macs():
    sched = schedule_network(LENET, AccelConfig(), F32)
    assert sum(l.macs for l in sched.layers) == 288000 + 1600000 + 400000 + 5000
    assert sched.layers[1].in_tiles == math.ceil(500 / 16)
