import numpy as np
import pytest

from cimsim.archsim import (ArchError, ChipConfig, LayerMapping, Network,
                            NetworkLayer, PEConfig, SimReport,
                            collect_layer_streams, im2col, map_layers,
                            reference_layer, requantize, simulate_network)
from cimsim.bitplane import QuantizedTensor
from cimsim.crossbar import program_array, simulate_vmm_batch
from cimsim.device import DeviceParams
from cimsim.workloads import build_tiny_mlp, synthetic_cnn


def _fc_layer(name, n_out, n_in, seed, q=100.0):
    rng = np.random.default_rng(seed)
    w = QuantizedTensor(values=rng.integers(0, 100, size=(n_out, n_in)).astype(np.int8),
                        scale=1 / 127, signed=True, bits=8)
    return NetworkLayer(name=name, kind="fc", weights=w,
                        bias=np.zeros(n_out, dtype=np.int64), quant_divisor=q)


def _images(n, features, seed=0, bits=7):
    rng = np.random.default_rng(seed)
    return QuantizedTensor(values=rng.integers(0, 1 << bits, size=(n, features)).astype(np.uint8),
                           scale=1 / 127, signed=False, bits=bits)


def test_single_layer_fills_spares_with_duplicates():
    net = Network(layers=[_fc_layer("l0", 8, 64, 0)], input_shape=(64,))
    chip = ChipConfig(n_pes=1, pe=PEConfig(arrays_per_pe=4))
    mapping = map_layers(net, chip)
    assert mapping[0].arrays_per_copy == 1
    assert mapping[0].copies == 4


def test_exact_fill_gives_single_copies():
    net = Network(layers=[_fc_layer("l0", 8, 64, 0), _fc_layer("l1", 8, 64, 1)],
                  input_shape=(64,))
    chip = ChipConfig(n_pes=1, pe=PEConfig(arrays_per_pe=2))
    mapping = map_layers(net, chip)
    assert [m.copies for m in mapping] == [1, 1]


def test_spares_split_proportional_to_workload():
    # workload ratio 3:1 (96-row vs 32-row fc), 8 spare arrays -> 6:2
    net = Network(layers=[_fc_layer("big", 8, 96, 0), _fc_layer("small", 8, 32, 1)],
                  input_shape=(96,))
    chip = ChipConfig(n_pes=1, pe=PEConfig(arrays_per_pe=10))
    mapping = map_layers(net, chip)
    assert [m.copies for m in mapping] == [7, 3]


def test_insufficient_arrays_rejected():
    net = Network(layers=[_fc_layer("l0", 32, 256, 0)], input_shape=(256,))
    chip = ChipConfig(n_pes=1, pe=PEConfig(arrays_per_pe=1))
    with pytest.raises(ArchError):
        map_layers(net, chip)


def test_tiling_covers_large_layers():
    net = Network(layers=[_fc_layer("l0", 40, 300, 0)], input_shape=(300,))
    chip = ChipConfig(n_pes=1, pe=PEConfig(arrays_per_pe=9))
    mapping = map_layers(net, chip)
    assert len(mapping[0].row_tiles) == 3   # ceil(300/128)
    assert len(mapping[0].col_tiles) == 3   # ceil(40/16)
    assert mapping[0].arrays_per_copy == 9


def test_im2col_matches_direct_convolution():
    rng = np.random.default_rng(2)
    imgs = rng.integers(0, 128, size=(2, 3, 6, 6)).astype(np.uint8)
    kernel = rng.integers(-50, 50, size=(4, 3, 3, 3)).astype(np.int64)
    patches = im2col(imgs, 3, 3)
    flat_k = kernel.reshape(4, -1)
    got = patches.astype(np.int64) @ flat_k.T    # (n, patches, 4)
    for n in range(2):
        p = 0
        for i in range(4):
            for j in range(4):
                window = imgs[n, :, i:i + 3, j:j + 3].astype(np.int64)
                for c in range(4):
                    assert got[n, p, c] == (window * kernel[c]).sum()
                p += 1


def test_requantize_clamps_to_unsigned_grid():
    layer = _fc_layer("l", 4, 8, 0, q=10.0)
    y = np.array([[-25, 4, 6, 12700]])
    out = requantize(layer, y)
    assert out.dtype == np.uint8
    assert list(out[0]) == [0, 0, 1, 127]


def test_sigma_zero_network_is_bit_exact_with_zero_mae():
    net, images = synthetic_cnn(n_images=2)
    chip = ChipConfig(n_pes=1, pe=PEConfig(arrays_per_pe=8))
    mapping = map_layers(net, chip)
    dev = DeviceParams(sigma=0.0, group_rows_exact=True)
    rep = simulate_network(net, images, mapping, dev, "zero_skip",
                           np.random.default_rng(0))
    assert all(pl["mae"] == 0.0 for pl in rep.per_layer)
    assert rep.chip["final_mae"] == 0.0


def test_single_fc_report_equals_aggregated_crossbar_counters():
    layer = _fc_layer("only", 8, 64, 3)
    net = Network(layers=[layer], input_shape=(64,))
    images = _images(4, 64, seed=3)
    chip = ChipConfig(n_pes=1, pe=PEConfig(arrays_per_pe=1))
    mapping = map_layers(net, chip)
    dev = DeviceParams(sigma=0.1)

    rep = simulate_network(net, images, mapping, dev, "zero_skip",
                           np.random.default_rng(77))
    arr = program_array(layer.weights, dev,
                        np.random.default_rng(np.random.default_rng(77).integers(0, 2**63 - 1)))
    _, ctr = simulate_vmm_batch(arr, images, "zero_skip")
    assert rep.per_layer[0]["adc_reads"] == ctr.adc_reads
    assert rep.per_layer[0]["cycles"] == ctr.cycles
    assert rep.chip["adc_reads"] == ctr.adc_reads


def test_pipelining_bound_and_duplication_speedup():
    net = Network(layers=[_fc_layer("a", 8, 64, 5), _fc_layer("b", 4, 8, 6)],
                  input_shape=(64,))
    images = _images(6, 64, seed=5)
    dev = DeviceParams(sigma=0.05)
    chip1 = ChipConfig(n_pes=1, pe=PEConfig(arrays_per_pe=2))
    chip4 = ChipConfig(n_pes=1, pe=PEConfig(arrays_per_pe=8))
    rep1 = simulate_network(net, images, map_layers(net, chip1), dev,
                            "zero_skip", np.random.default_rng(1), chip=chip1)
    rep4 = simulate_network(net, images, map_layers(net, chip4), dev,
                            "zero_skip", np.random.default_rng(1), chip=chip4)
    for rep in (rep1, rep4):
        per_layer_max = max(pl["cycles_per_image"] for pl in rep.per_layer)
        assert rep.chip["cycles_per_image"] >= per_layer_max - 1e-9
    # 4x duplication cuts the bottleneck roughly fourfold
    assert rep4.chip["cycles_per_image"] < rep1.chip["cycles_per_image"] / 2


def test_report_json_round_trip():
    net, images = synthetic_cnn(n_images=1)
    chip = ChipConfig(n_pes=1, pe=PEConfig(arrays_per_pe=8))
    mapping = map_layers(net, chip)
    rep = simulate_network(net, images, mapping, DeviceParams(sigma=0.1),
                           "zero_skip", np.random.default_rng(5), chip=chip)
    back = SimReport.from_json(rep.to_json())
    assert back.per_layer == rep.per_layer
    assert back.chip == rep.chip


def test_mlp_accuracy_fields_present():
    net, x_q, labels = build_tiny_mlp()
    images = QuantizedTensor(values=x_q.values[:32].copy(), scale=x_q.scale,
                             signed=False, bits=x_q.bits)
    chip = ChipConfig(n_pes=1, pe=PEConfig(arrays_per_pe=4))
    mapping = map_layers(net, chip)
    dev = DeviceParams(sigma=0.0, group_rows_exact=True)
    rep = simulate_network(net, images, mapping, dev, "baseline",
                           np.random.default_rng(0), labels=labels[:32])
    assert rep.chip["accuracy"] == rep.chip["ref_accuracy"] == 1.0


def test_activation_dump_round_trips(tmp_path):
    from cimsim.bitplane import read_qtsr
    net, images = synthetic_cnn(n_images=1)
    chip = ChipConfig(n_pes=1, pe=PEConfig(arrays_per_pe=8))
    mapping = map_layers(net, chip)
    dev = DeviceParams(sigma=0.0, group_rows_exact=True)
    simulate_network(net, images, mapping, dev, "zero_skip",
                     np.random.default_rng(0), chip=chip, dump_dir=tmp_path)
    dumped = sorted(p.name for p in tmp_path.glob("acts_*.qtsr"))
    assert dumped == ["acts_conv1.qtsr", "acts_conv2.qtsr", "acts_conv3.qtsr"]
    acts = read_qtsr(tmp_path / "acts_conv1.qtsr")
    assert acts.values.shape[0] == 1 and not acts.signed


def test_noisy_stream_collection_differs_from_reference():
    net, images = synthetic_cnn(n_images=2)
    clean = collect_layer_streams(net, images)
    noisy = collect_layer_streams(net, images, device=DeviceParams(sigma=0.3),
                                  policy="zero_skip",
                                  rng=np.random.default_rng(3))
    assert np.array_equal(clean[0].values, noisy[0].values)  # layer-0 inputs
    assert any(not np.array_equal(c.values, n.values)
               for c, n in zip(clean[1:], noisy[1:]))
