"""Acceptance suite: one test per criterion, each printing a pass line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines and the reported trend percentages.
"""

import json

import numpy as np
import pytest

import cimsim as cs
from cimsim.archsim import (ChipConfig, PEConfig, collect_layer_streams,
                            map_layers, simulate_network)
from cimsim.bitplane import QuantizedTensor
from cimsim.cli import emit_summary, run_pipeline
from cimsim.config import parse_config_text
from cimsim.crossbar import program_array, simulate_vmm
from cimsim.device import adc_quantize
from cimsim.optimizer import TradeoffTable
from cimsim.workloads import CNN_SEED, bundled_layer, load_tiny_mlp, synthetic_cnn

SIGMA_GRID = (0.01, 0.05, 0.1, 0.2, 0.35)


def _report(line):
    print(f"\n{line}")


# ---------------------------------------------------------------------- 1
def test_criterion_1_misread_normalization():
    for n in range(17):
        for sigma in SIGMA_GRID:
            total = sum(cs.readout_probability(nh, n, sigma, n_max=16)
                        for nh in range(17))
            assert abs(total - 1.0) <= 1e-9, (n, sigma, total)
    _report("criterion 1 PASS: misread distribution sums to 1 +- 1e-9 "
            "for all n in [0,16], sigma in {0.01..0.35}")


# ---------------------------------------------------------------------- 2
def test_criterion_2_read_level_agreement():
    lay = bundled_layer()
    prof = cs.profile_layer(lay.weights, lay.activations, [8, 12, 16])
    rng = np.random.default_rng(0xACCE2)
    combos = []
    for sigma in (0.1, 0.2, 0.35):
        for n_wl in (8, 12, 16):
            for x in range(7):
                for w in range(7):
                    pmf = prof.get(x, w, n_wl)
                    if pmf.flagged:
                        continue
                    analytic = cs.expected_read_error(pmf, sigma, 3)
                    if analytic >= 0.02:
                        combos.append((pmf, sigma, analytic))
                if len(combos) >= 20:
                    break
            if len(combos) >= 20:
                break
        if len(combos) >= 20:
            break
    assert len(combos) >= 20
    worst = 0.0
    for pmf, sigma, analytic in combos[:20]:
        support = np.arange(pmf.n_wl + 1)
        ns = rng.choice(support, size=10**6, p=pmf.probs())
        levels = ns + sigma * np.sqrt(ns) * rng.standard_normal(10**6)
        codes = adc_quantize(levels, 3, pmf.n_wl)
        empirical = float(np.abs(codes - ns).mean())
        rel = abs(empirical - analytic) / analytic
        worst = max(worst, rel)
        assert rel <= 0.02, (pmf.x_bit, pmf.w_bit, pmf.n_wl, sigma, rel)
    _report(f"criterion 2 PASS: analytic read error vs 1e6-sample Monte Carlo within 2% "
            f"on 20 (PMF, sigma) combos (worst {worst * 100:.2f}%)")


# ---------------------------------------------------------------------- 3
def test_criterion_3_vmm_upper_bound():
    lay = bundled_layer()
    prof = cs.profile_layer(lay.weights, lay.activations, [8])
    lut = cs.uniform_lut(8)
    ratios = []
    for sigma in (0.05, 0.1, 0.2):
        dev = cs.DeviceParams(sigma=sigma)
        analytic = cs.estimate_layer_error(prof, dev, 8).vmm_mae
        mc = cs.monte_carlo_mae(lay, dev, "counting_cards", trials=1000,
                                rng=np.random.default_rng(0xACCE3), lut=lut)
        ratio = mc.mae / analytic
        ratios.append((sigma, ratio))
        assert mc.mae <= analytic * 1.05, (sigma, mc.mae, analytic)
        assert mc.mae >= 0.25 * analytic, (sigma, mc.mae, analytic)
    pretty = ", ".join(f"sigma={s}: {r:.3f}" for s, r in ratios)
    _report(f"criterion 3 PASS: empirical/analytic VMM error in [0.25, 1.05] "
            f"({pretty})")


# ---------------------------------------------------------------------- 4
def _random_instance(seed, live=6, n_choices=5):
    rng = np.random.default_rng(seed)
    err = np.zeros((8, 8, n_choices))
    dly = np.zeros((8, 8, n_choices))
    for x in range(8):
        for w in range(8):
            if x * 8 + w < live:
                err[x, w] = np.sort(rng.uniform(0, 10, n_choices))
                dly[x, w] = np.sort(rng.uniform(1, 20, n_choices))[::-1]
            else:
                dly[x, w] = np.linspace(1.0, 0.2, n_choices)
    table = TradeoffTable(error=err, delay=dly,
                          n_wl_values=tuple(range(1, n_choices + 1)))
    threshold = float(rng.uniform(err[:, :, 0].sum(), err[:, :, -1].sum()))
    return table, threshold


def test_criterion_4_knapsack_optimality():
    for seed in range(100):
        table, threshold = _random_instance(seed)
        a = cs.optimize_lut(table, threshold)
        b = cs.brute_force_lut(table, threshold)
        assert a.achieved_delay == b.achieved_delay, seed
        assert a.achieved_error == b.achieved_error, seed

    # structured 8x8x4 instance: magnitude-weighted, ten contended pairs
    rng = np.random.default_rng(0xACCE4)
    err = np.zeros((8, 8, 4))
    dly = np.zeros((8, 8, 4))
    hot = [(x, w) for x in (4, 5, 6) for w in (4, 5, 6)] + [(7, 7)]
    for x in range(8):
        for w in range(8):
            dly[x, w] = 16.0 / np.array([2, 4, 8, 16]) * (1 + 0.01 * (x * 8 + w))
            if (x, w) in hot:
                err[x, w] = (1 << x) * (1 << w) / 4096 * \
                    np.sort(rng.uniform(0.1, 3.0, 4))
    table = TradeoffTable(error=err, delay=dly, n_wl_values=(2, 4, 8, 16))
    for frac in (0.1, 0.5, 0.9):
        lo, hi = float(err.min(axis=2).sum()), float(err.max(axis=2).sum())
        thr = lo + (hi - lo) * frac + 1e-9
        a = cs.optimize_lut(table, thr)
        b = cs.brute_force_lut(table, thr)
        assert a.achieved_delay == b.achieved_delay
        assert a.achieved_error == b.achieved_error
    _report("criterion 4 PASS: exact solver matches exhaustive search on 100 "
            "random 6x5 instances and a structured 8x8x4 instance")


# ---------------------------------------------------------------------- 5
def test_criterion_5_noiseless_correctness():
    dev = cs.DeviceParams(sigma=0.0, group_rows_exact=True)
    rng = np.random.default_rng(0xACCE5)
    policies = ("baseline", "zero_skip", "counting_cards")
    for case in range(1000):
        w = QuantizedTensor(values=rng.integers(-128, 128, size=(16, 128)).astype(np.int8),
                            scale=1.0, signed=True, bits=8)
        x = QuantizedTensor(values=rng.integers(0, 256, size=128).astype(np.uint8),
                            scale=1.0, signed=False, bits=8)
        arr = program_array(w, dev, np.random.default_rng(case))
        policy = policies[case % 3]
        lut = cs.uniform_lut(7) if policy == "counting_cards" else None
        y, _ = simulate_vmm(arr, x, policy, lut=lut)
        assert np.array_equal(y, cs.reference_vmm(w, x)), (case, policy)

    net, images = synthetic_cnn(n_images=2)
    chip = ChipConfig(n_pes=1, pe=PEConfig(arrays_per_pe=8))
    rep = simulate_network(net, images, map_layers(net, chip), dev,
                           "zero_skip", np.random.default_rng(1), chip=chip)
    assert all(pl["mae"] == 0.0 for pl in rep.per_layer)
    assert rep.chip["final_mae"] == 0.0
    _report("criterion 5 PASS: sigma=0 full-resolution simulation bit-exact "
            "on 1000 random 128x128 cases; zero end-to-end MAE on the CNN")


# ---------------------------------------------------------------------- 6
def test_criterion_6_scheduling_invariants():
    lay_rng = np.random.default_rng(0xACCE6)
    w = QuantizedTensor(values=lay_rng.integers(-128, 128, size=(16, 128)).astype(np.int8),
                        scale=1.0, signed=True, bits=8)
    dev = cs.DeviceParams(sigma=0.0)
    arr = program_array(w, dev, np.random.default_rng(3))
    cases = 0
    for density in (0.1, 0.5, 0.9, 1.0):
        for _ in range(250):
            if density == 1.0:
                vals = np.full(128, 255, dtype=np.uint8)
            else:
                bits = (lay_rng.random((8, 128)) < density).astype(np.uint8)
                vals = np.zeros(128, dtype=np.uint8)
                for b in range(8):
                    vals |= (bits[b] << b).astype(np.uint8)
            x = QuantizedTensor(values=vals, scale=1.0, signed=False, bits=8)
            _, cb = simulate_vmm(arr, x, "baseline")
            _, cz = simulate_vmm(arr, x, "zero_skip")
            assert cz.cycles <= cb.cycles, density
            if density == 1.0:
                assert cz.cycles == cb.cycles
            cases += 1
    assert cases == 1000
    _report("criterion 6 PASS: zero-skip cycles <= baseline cycles on 1000 "
            "inputs across densities {0.1, 0.5, 0.9, 1.0}, equal at 1.0")


# ------------------------------------------------------------------- 7+8
@pytest.fixture(scope="module")
def cnn_experiment():
    net, images = synthetic_cnn(n_images=2)
    _, prof_images = synthetic_cnn(seed=CNN_SEED + 1, n_images=16)
    dev = cs.DeviceParams(sigma=0.2, adc_bits=2)
    streams = collect_layer_streams(net, prof_images)
    chip = ChipConfig(n_pes=1, pe=PEConfig(arrays_per_pe=8))
    mapping = map_layers(net, chip)
    profiles = [cs.profile_layer(l.weights, s, range(1, 17))
                for l, s in zip(net.layers, streams)]
    tables = [cs.build_tradeoff_table(p, dev, quant_scale=l.quant_divisor,
                                      robust_mass=0.1)
              for l, p in zip(net.layers, profiles)]
    return {"net": net, "images": images, "dev": dev, "chip": chip,
            "mapping": mapping, "tables": tables, "runs": {}}


def _run_policy(exp, policy, luts, trials, seed):
    maes, chips = [], []
    for t in range(trials):
        rep = simulate_network(exp["net"], exp["images"], exp["mapping"],
                               exp["dev"], policy,
                               np.random.default_rng(seed + t), luts=luts,
                               chip=exp["chip"])
        maes.append([pl["mae"] for pl in rep.per_layer])
        chips.append(rep.chip)
    m = np.array(maes)
    stats = {
        "mean": m.mean(axis=0),
        "ub95": m.mean(axis=0) + 1.645 * m.std(axis=0, ddof=1) / np.sqrt(len(m)),
        "cycles": float(np.mean([c["cycles_per_image"] for c in chips])),
        "energy": float(np.mean([c["energy_pj_per_image"] for c in chips])),
    }
    return stats


def test_criterion_7_mae_control(cnn_experiment):
    exp = cnn_experiment
    names = [l.name for l in exp["net"].layers]
    for thr in (0.1, 0.5, 1.0):
        luts = {i: cs.optimize_lut(t, thr) for i, t in enumerate(exp["tables"])}
        stats = _run_policy(exp, "counting_cards", luts, trials=160,
                            seed=0xC7000)
        exp["runs"][thr] = stats
        for name, ub in zip(names, stats["ub95"]):
            assert ub <= thr, (thr, name, ub)
    zs = _run_policy(exp, "zero_skip", None, trials=24, seed=0xC7999)
    exp["runs"]["zero_skip"] = zs
    assert zs["mean"].max() > 1.0, zs["mean"]
    hot = names[int(zs["mean"].argmax())]
    _report("criterion 7 PASS: counting-cards per-layer MAE held under "
            "thresholds {0.1, 0.5, 1.0} at 95% confidence "
            f"(zero-skip reaches {zs['mean'].max():.2f} on {hot})")


def test_criterion_8_trend_reproduction(cnn_experiment):
    exp = cnn_experiment
    if 1.0 not in exp["runs"]:
        luts = {i: cs.optimize_lut(t, 1.0) for i, t in enumerate(exp["tables"])}
        exp["runs"][1.0] = _run_policy(exp, "counting_cards", luts,
                                       trials=160, seed=0xC7000)
    cc = exp["runs"][1.0]
    base = _run_policy(exp, "baseline", None, trials=8, seed=0xC8000)
    if "zero_skip" not in exp["runs"]:
        exp["runs"]["zero_skip"] = _run_policy(exp, "zero_skip", None,
                                               trials=8, seed=0xC7999)
    cycle_saving = 1.0 - cc["cycles"] / base["cycles"]
    energy_saving = 1.0 - cc["energy"] / base["energy"]
    assert cycle_saving >= 0.20, cycle_saving
    assert energy_saving >= 0.20, energy_saving
    assert cc["cycles"] < exp["runs"]["zero_skip"]["cycles"]
    _report("criterion 8 PASS: counting-cards at threshold 1.0, sigma=0.2 "
            f"saves {cycle_saving * 100:.1f}% cycles and "
            f"{energy_saving * 100:.1f}% energy vs baseline")


# ---------------------------------------------------------------------- 9
def test_criterion_9_accuracy_degradation_shape():
    net, x_q, labels = load_tiny_mlp()
    chip = ChipConfig(n_pes=1, pe=PEConfig(arrays_per_pe=4))
    mapping = map_layers(net, chip)
    sigmas = (0.01, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35)
    accs = []
    for sigma in sigmas:
        dev = cs.DeviceParams(sigma=sigma)
        rep = simulate_network(net, x_q, mapping, dev, "baseline",
                               np.random.default_rng(0xACCE9), labels=labels,
                               chip=chip)
        accs.append(rep.chip["accuracy"] * 100)
    for a, b in zip(accs, accs[1:]):
        assert b <= a + 1.0, (accs,)   # non-increasing within 1 point
    drop = accs[sigmas.index(0.05)] - accs[-1]
    assert drop >= 10.0, (accs, drop)
    curve = ", ".join(f"{s}:{a:.1f}" for s, a in zip(sigmas, accs))
    _report(f"criterion 9 PASS: baseline accuracy monotone non-increasing, "
            f"drops {drop:.1f} points from sigma 0.05 to 0.35 ({curve})")


# --------------------------------------------------------------------- 10
def test_criterion_10_determinism(tmp_path):
    template = """
seed = 404
output_dir = "{out}"
[device]
adc_bits = 2
[pe]
arrays_per_pe = 8
[workload]
network = "synthetic_cnn"
images = 1
[profile]
samples = 4
[sweep]
sigmas = [0.05, 0.2]
policies = ["baseline", "zero_skip", "counting_cards"]
thresholds = [1.0]
trials = 2
"""
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    cfg_a = parse_config_text(template.format(out=out_a))
    cfg_b = parse_config_text(template.format(out=out_b))
    paths_a = run_pipeline(cfg_a)
    paths_b = run_pipeline(cfg_b)
    assert [p.name for p in paths_a] == [p.name for p in paths_b]
    for pa, pb in zip(paths_a, paths_b):
        assert pa.read_bytes() == pb.read_bytes(), pa.name
    assert emit_summary(out_a).read_bytes() == emit_summary(out_b).read_bytes()
    _report(f"criterion 10 PASS: full sweep reproduced byte-identically "
            f"({len(paths_a)} report files)")
