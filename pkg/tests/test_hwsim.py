"""Dataflow simulator tests.

Anchor values are computed by hand in the assertions' comments; nothing is
compared against the implementation's own formulas.
"""

import json

import pytest

from qnnbench import hwsim, model, streamline
from qnnbench.errors import ShapeError


def mlp_shapes(a=3, w=3):
    return hwsim.network_shapes(model.build_mlp(a, w))


class TestLayerCycles:
    def test_fully_folded(self):
        assert hwsim.layer_cycles(64, 1024, 1, 1) == 65536

    def test_fully_parallel(self):
        assert hwsim.layer_cycles(64, 1024, 64, 1024) == 1

    def test_pe_simd_swap_is_symmetric_in_count(self):
        # ceil(64/2)*ceil(1024/16) == ceil(64/16)*ceil(1024/2) has no reason
        # to hold; check the two concrete values instead
        assert hwsim.layer_cycles(64, 1024, 2, 16) == 32 * 64
        assert hwsim.layer_cycles(64, 1024, 16, 2) == 4 * 512

    def test_ceiling_on_ragged_division(self):
        assert hwsim.layer_cycles(10, 32, 4, 32) == 3
        assert hwsim.layer_cycles(10, 33, 10, 32) == 2

    def test_guards(self):
        with pytest.raises(ValueError):
            hwsim.layer_cycles(64, 1024, 0, 1)
        with pytest.raises(ValueError):
            hwsim.layer_cycles(64, 1024, 65, 1)
        with pytest.raises(ValueError):
            hwsim.layer_cycles(64, 1024, 1, 1025)
        with pytest.raises(ValueError):
            hwsim.layer_cycles(0, 1024, 1, 1)


class TestInitiationInterval:
    def test_slowest_stage_wins(self):
        shapes = mlp_shapes()
        folding = hwsim.FoldingConfig(folds=[(2, 2), (2, 2), (2, 2)])
        # stage cycles: 32*512=16384, 32*32=1024, 5*32=160
        assert hwsim.initiation_interval(shapes, folding) == 16384

    def test_unfolded_pipeline_hits_one(self):
        shapes = mlp_shapes()
        folding = hwsim.FoldingConfig(folds=[(64, 1024), (64, 64), (10, 64)])
        assert hwsim.initiation_interval(shapes, folding) == 1

    def test_single_layer(self):
        s = [hwsim.LayerShape(12, 6, 16, 0)]
        assert hwsim.initiation_interval(s, hwsim.FoldingConfig(folds=[(3, 4)])) == 2 * 3

    def test_fold_count_mismatch(self):
        with pytest.raises(ShapeError):
            hwsim.initiation_interval(mlp_shapes(), hwsim.FoldingConfig(folds=[(2, 2)]))


class TestThroughputAndBandwidth:
    def test_base_clock(self):
        shapes = mlp_shapes()
        folding = hwsim.FoldingConfig(folds=[(2, 2), (2, 2), (2, 2)])
        assert hwsim.throughput(shapes, folding) == 100e6 / 16384  # 6103.515625

    def test_clock_scales_linearly(self):
        shapes = mlp_shapes()
        f100 = hwsim.FoldingConfig(folds=[(4, 4), (4, 4), (4, 4)])
        f200 = hwsim.FoldingConfig(folds=[(4, 4), (4, 4), (4, 4)], clock_mhz=200.0)
        assert hwsim.throughput(shapes, f200) == 2 * hwsim.throughput(shapes, f100)

    def test_efficiency_factor(self):
        shapes = mlp_shapes()
        f = hwsim.FoldingConfig(folds=[(2, 2), (2, 2), (2, 2)])
        assert hwsim.throughput(shapes, f, efficiency=0.5) == 0.5 * hwsim.throughput(shapes, f)

    def test_dram_is_1024_bytes_per_image(self):
        assert hwsim.dram_in_bandwidth(6103.515625) == 6103.515625 * 1024  # 6.25 MB/s
        assert hwsim.dram_in_bandwidth(0.0) == 0.0
        assert hwsim.dram_in_bandwidth(1.0, input_bytes_per_image=784) == 784.0


class TestMemoryModel:
    def test_threshold_memory_hand_value(self):
        # 64 channels x 7 thresholds x 11-bit words
        assert hwsim.threshold_memory_bits(64, 3, 11) == 64 * 7 * 11

    def test_threshold_memory_ratio_a8_over_a2_is_85(self):
        lo = hwsim.threshold_memory_bits(64, 2, 20)
        hi = hwsim.threshold_memory_bits(64, 8, 20)
        assert hi == 85 * lo  # (2^8-1)/(2^2-1) = 255/3

    def test_single_threshold_at_one_bit(self):
        assert hwsim.threshold_memory_bits(10, 1, 16) == 160

    def test_weight_memory(self):
        assert hwsim.weight_memory_bits(64, 1024, 2) == 131072
        assert hwsim.weight_memory_bits(64, 1024, 8) == 4 * hwsim.weight_memory_bits(64, 1024, 2)

    def test_memory_guards(self):
        with pytest.raises(ValueError):
            hwsim.threshold_memory_bits(0, 2, 16)
        with pytest.raises(ValueError):
            hwsim.weight_memory_bits(64, 1024, 0)

    def test_bram18_rounding(self):
        assert hwsim.bram18_count(0) == 0
        assert hwsim.bram18_count(1) == 1
        assert hwsim.bram18_count(18 * 1024) == 1
        assert hwsim.bram18_count(18 * 1024 + 1) == 2
        assert hwsim.bram18_count(400_000) == 22
        with pytest.raises(ValueError):
            hwsim.bram18_count(-1)


class TestLogicEstimate:
    def test_single_mac_hand_values(self):
        # lut = 10 + 6*w*a; ff = 4 + 2*(w + a + acc)
        luts, ffs = hwsim.logic_estimate(1, 1, 2, 2, 20)
        assert (luts, ffs) == (10 + 24, 4 + 2 * 24)
        luts, ffs = hwsim.logic_estimate(1, 1, 4, 4, 21)
        assert (luts, ffs) == (10 + 96, 4 + 2 * 29)

    def test_linear_in_grid_without_thresholds(self):
        base = hwsim.logic_estimate(2, 4, 3, 3, 16)
        assert hwsim.logic_estimate(4, 4, 3, 3, 16) == (2 * base[0], 2 * base[1])
        assert hwsim.logic_estimate(2, 8, 3, 3, 16) == (2 * base[0], 2 * base[1])

    def test_comparator_bank_scales_with_pe_only(self):
        plain = hwsim.logic_estimate(4, 8, 2, 2, 16, n_thresholds=0)[0]
        banked = hwsim.logic_estimate(4, 8, 2, 2, 16, n_thresholds=3)[0]
        assert banked - plain == 8 * 3 * 4
        wide = hwsim.logic_estimate(8, 8, 2, 2, 16, n_thresholds=3)[0]
        assert wide - 2 * plain == 8 * 3 * 8

    def test_custom_costs(self):
        costs = hwsim.LogicCosts(lut_base_per_mac=1, lut_per_mac_bit_product=0,
                                 lut_per_threshold=0, ff_base_per_mac=1, ff_per_state_bit=0)
        assert hwsim.logic_estimate(3, 5, 8, 8, 30, 7, costs) == (15, 15)


class TestConfigs:
    def test_packaged_board(self):
        b = hwsim.board_preset()
        assert b.name == "pynq-z1"
        assert (b.luts, b.flip_flops, b.bram18, b.bram_bytes) == (53200, 106400, 280, 645120)

    def test_unknown_board(self):
        with pytest.raises(KeyError) as ei:
            hwsim.board_preset("virtex-9000")
        assert "pynq-z1" in str(ei.value)

    def test_board_from_custom_file(self, tmp_path):
        path = tmp_path / "boards.json"
        path.write_text(json.dumps({"tiny": {"luts": 10, "flip_flops": 20, "bram18": 1, "bram_bytes": 2048}}))
        b = hwsim.board_preset("tiny", config_path=path)
        assert b.luts == 10

    def test_bad_budget_rejected(self):
        with pytest.raises(ValueError):
            hwsim.BoardBudget(name="x", luts=0, flip_flops=1, bram18=1, bram_bytes=1)

    def test_packaged_logic_costs(self):
        c = hwsim.logic_costs()
        assert (c.lut_base_per_mac, c.lut_per_mac_bit_product, c.lut_per_threshold) == (10, 6, 8)
        assert (c.ff_base_per_mac, c.ff_per_state_bit, c.efficiency) == (4, 2, 1.0)


class TestFoldingConfig:
    def test_uniform_clamps_narrow_layers(self):
        f = hwsim.FoldingConfig.uniform(mlp_shapes(), 16, 16)
        assert f.folds == [(16, 16), (16, 16), (10, 16)]

    def test_uniform_rejects_oversized_request(self):
        with pytest.raises(ValueError):
            hwsim.FoldingConfig.uniform(mlp_shapes(), 2048, 2)
        with pytest.raises(ValueError):
            hwsim.FoldingConfig.uniform(mlp_shapes(), 2, 2048)

    def test_guards(self):
        with pytest.raises(ValueError):
            hwsim.FoldingConfig(folds=[(0, 1)])
        with pytest.raises(ValueError):
            hwsim.FoldingConfig(folds=[(1, 1)], clock_mhz=0)
        with pytest.raises(ValueError):
            hwsim.FoldingConfig.uniform(mlp_shapes(), 0, 1)


class TestNetworkShapes:
    def test_from_float_network(self):
        shapes = mlp_shapes(a=3, w=3)
        assert [(s.in_features, s.out_features) for s in shapes] == [(1024, 64), (64, 64), (64, 10)]
        # ceil(log2(in)) + (w-1) + input_bits, input bits 8 then a
        assert [s.acc_bits for s in shapes] == [10 + 2 + 8, 6 + 2 + 3, 6 + 2 + 3]
        assert [s.n_thresholds for s in shapes] == [7, 7, 0]

    def test_from_integer_network(self):
        inet = streamline.streamline(model.build_mlp(2, 2, hidden=(5,), in_features=8, out_classes=3))
        shapes = hwsim.network_shapes(inet)
        assert [(s.in_features, s.out_features) for s in shapes] == [(8, 5), (5, 3)]
        assert shapes[0].n_thresholds == 3 and shapes[1].n_thresholds == 0
        assert shapes[0].acc_bits == inet.layers[0].acc_bits


class TestSimulate:
    def test_a3w3_fully_buffered_fits(self):
        report = hwsim.simulate(model.build_mlp(3, 3), 16, 16)
        # per layer luts: 256*(10+54)+8*7*16 = 17280 (x2), 160*64 = 10240
        assert report.luts == 44800
        assert report.fits is True
        assert report.ii_cycles == 256
        assert report.img_per_s == 390625.0

    def test_a4w4_at_16_16_exceeds_pynq_luts(self):
        report = hwsim.simulate(model.build_mlp(4, 4), 16, 16)
        # per layer luts: 256*(10+96)+8*15*16 = 29056 (x2), 160*106 = 16960
        assert report.luts == 75072
        assert report.ffs == 35008
        assert report.bram18 == 18
        assert report.fits is False

    def test_2_2_folding_anchor(self):
        report = hwsim.simulate(model.build_mlp(2, 2), 2, 2)
        assert report.ii_cycles == 16384
        assert report.img_per_s == 6103.515625
        assert report.dram_bytes_per_s == 6103.515625 * 1024
        assert report.to_dict()["dram_MB_s"] == 6.25

    def test_pe_simd_1_1_anchor(self):
        report = hwsim.simulate(model.build_mlp(2, 2), 1, 1)
        assert report.ii_cycles == 65536
        assert report.img_per_s == 100e6 / 65536

    def test_memory_is_fold_invariant_and_logic_monotone(self):
        net = model.build_mlp(3, 3)
        reports = [hwsim.simulate(net, p, p) for p in (2, 8, 16)]
        assert len({r.bram18 for r in reports}) == 1
        assert len({r.weight_bits_total for r in reports}) == 1
        luts = [r.luts for r in reports]
        ffs = [r.ffs for r in reports]
        iis = [r.ii_cycles for r in reports]
        assert luts == sorted(luts) and ffs == sorted(ffs)
        assert iis == sorted(iis, reverse=True)

    def test_resources_monotone_in_bit_widths(self):
        base = hwsim.simulate(model.build_mlp(3, 3), 16, 16)
        wider = hwsim.simulate(model.build_mlp(4, 4), 16, 16)
        assert wider.luts > base.luts
        assert wider.ffs > base.ffs
        assert wider.weight_bits_total > base.weight_bits_total
        assert wider.threshold_bits_total > base.threshold_bits_total

    def test_integer_network_path_matches_float_path(self):
        # streamlined seed-0 A3W3 lands on the same formula acc widths
        inet = streamline.streamline(model.build_mlp(3, 3, seed=0))
        via_int = hwsim.simulate(inet, 16, 16)
        via_float = hwsim.simulate(model.build_mlp(3, 3, seed=0), 16, 16)
        assert via_int.luts == via_float.luts
        assert via_int.ii_cycles == via_float.ii_cycles
        assert via_int.bram18 == via_float.bram18

    def test_explicit_folding_config(self):
        net = model.build_mlp(2, 2)
        folding = hwsim.FoldingConfig(folds=[(64, 1024), (64, 64), (10, 64)], clock_mhz=50.0)
        report = hwsim.simulate(net, folding)
        assert report.ii_cycles == 1
        assert report.img_per_s == 50e6

    def test_csv_row_matches_columns(self):
        report = hwsim.simulate(model.build_mlp(2, 2), 2, 2)
        row = report.csv_row()
        assert len(row) == len(hwsim.CSV_COLUMNS)
        assert row[0] == "A2W2" and row[-1] == "true"
        assert float(row[6]) == report.img_per_s

    def test_custom_budget_changes_fit(self):
        tight = hwsim.BoardBudget(name="tight", luts=100, flip_flops=100, bram18=1, bram_bytes=128)
        report = hwsim.simulate(model.build_mlp(2, 2), 2, 2, budget=tight)
        assert report.fits is False
        assert report.budget_name == "tight"
