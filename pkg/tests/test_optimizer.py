import numpy as np
import pytest

from cimsim.device import DeviceParams
from cimsim.optimizer import (InfeasibleThresholdError, OptimizerError,
                              TradeoffTable, WordlineLUT, brute_force_lut,
                              build_tradeoff_table, lut_bits_per_entry,
                              optimize_lut, pack_lut, read_lut_text,
                              uniform_lut, unpack_lut, write_lut_text)
from cimsim.profiler import profile_layer
from cimsim.workloads import bundled_layer


def random_instance(seed, live=6, n_choices=5):
    """Synthetic table: `live` classes carry real trade-offs, the rest are
    zero-error with shrinking delay (they collapse under dominance)."""
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
    lo = float(err[:, :, 0].sum())
    hi = float(err[:, :, -1].sum())
    return table, float(rng.uniform(lo, hi))


def structured_instance(seed=123):
    """8x8x4 table shaped like a real one: magnitude-weighted errors, most
    pairs clean, ten pairs with genuine trade-offs."""
    rng = np.random.default_rng(seed)
    n_choices = 4
    err = np.zeros((8, 8, n_choices))
    dly = np.zeros((8, 8, n_choices))
    hot = {(x, w) for x in (4, 5, 6) for w in (4, 5, 6)} | {(7, 7)}
    for x in range(8):
        for w in range(8):
            base = (1 << x) * (1 << w) / 4096
            dly[x, w] = 16.0 / np.array([2, 4, 8, 16]) * (1 + 0.01 * (x * 8 + w))
            if (x, w) in hot:
                err[x, w] = base * np.sort(rng.uniform(0.1, 3.0, n_choices))
    table = TradeoffTable(error=err, delay=dly, n_wl_values=(2, 4, 8, 16))
    return table


def test_matches_brute_force_on_random_instances():
    for seed in range(30):
        table, threshold = random_instance(seed)
        a = optimize_lut(table, threshold)
        b = brute_force_lut(table, threshold)
        assert a.achieved_delay == b.achieved_delay
        assert a.achieved_error == b.achieved_error
        assert a.achieved_error <= threshold


def test_matches_brute_force_on_structured_instance():
    table = structured_instance()
    for frac in (0.05, 0.3, 0.9):
        lo = float(table.error.min(axis=2).sum())
        hi = float(table.error.max(axis=2).sum())
        thr = lo + (hi - lo) * frac + 1e-9
        a = optimize_lut(table, thr)
        b = brute_force_lut(table, thr)
        assert a.achieved_delay == b.achieved_delay
        assert a.achieved_error == b.achieved_error


def test_unconstrained_budget_picks_fastest_everywhere():
    table, _ = random_instance(3)
    thr = float(table.error[:, :, -1].sum()) * 2
    lut = optimize_lut(table, thr)
    assert np.all(lut.choice == 5)


def test_threshold_at_minimum_picks_argmin_error():
    table, _ = random_instance(4)
    min_err = float(sum(table.error[x, w].min() for x in range(8) for w in range(8)))
    lut = optimize_lut(table, min_err * (1 + 1e-12))
    for x in range(8):
        for w in range(8):
            i = list(table.n_wl_values).index(lut.choice[x, w])
            assert table.error[x, w, i] == table.error[x, w].min()
    # dead pairs double-tie on (error, delay) at every speed: smallest n_wl wins
    dead = TradeoffTable(error=np.zeros((8, 8, 3)), delay=np.zeros((8, 8, 3)),
                         n_wl_values=(2, 4, 8))
    assert np.all(optimize_lut(dead, 1.0).choice == 2)


def test_infeasible_threshold_reports_minimum():
    table, _ = random_instance(5)
    min_err = float(sum(table.error[x, w].min() for x in range(8) for w in range(8)))
    with pytest.raises(InfeasibleThresholdError) as exc:
        optimize_lut(table, min_err * 0.5)
    assert exc.value.min_achievable == pytest.approx(min_err)


def test_relaxing_threshold_never_slows_the_solution():
    table = structured_instance(7)
    lo = float(table.error.min(axis=2).sum())
    hi = float(table.error.max(axis=2).sum())
    prev = None
    for thr in np.linspace(lo * 1.000001 + 1e-12, hi, 9):
        lut = optimize_lut(table, float(thr))
        assert lut.achieved_error <= thr
        if prev is not None:
            assert lut.achieved_delay <= prev + 1e-12
        prev = lut.achieved_delay


def test_grouped_solution_is_never_faster():
    table = structured_instance(11)
    thr = float(table.error.min(axis=2).sum()) * 3 + 1.0
    lut1 = optimize_lut(table, thr, group_factor=1)
    lut4 = optimize_lut(table, thr, group_factor=4)
    assert lut4.achieved_delay >= lut1.achieved_delay - 1e-12
    # one shared choice per 2x2 block
    for x0 in range(0, 8, 2):
        for w0 in range(0, 8, 2):
            block = lut4.choice[x0:x0 + 2, w0:w0 + 2]
            assert len(np.unique(block)) == 1


def test_brute_force_refuses_oversized_instances():
    rng = np.random.default_rng(0)
    err = np.sort(rng.uniform(0, 1, size=(8, 8, 16)), axis=2)
    dly = np.sort(rng.uniform(0, 1, size=(8, 8, 16)), axis=2)[:, :, ::-1]
    table = TradeoffTable(error=err, delay=dly, n_wl_values=tuple(range(1, 17)))
    with pytest.raises(OptimizerError):
        brute_force_lut(table, float(err.sum()))


def test_real_table_shape_and_trends():
    lay = bundled_layer()
    prof = profile_layer(lay.weights, lay.activations, range(1, 17))
    dev = DeviceParams(sigma=0.2)
    table = build_tradeoff_table(prof, dev)
    assert table.error.shape == (8, 8, 16)
    assert np.isfinite(table.error).all() and (table.error >= 0).all()
    for x in range(8):
        for w in range(8):
            if prof.mean_ones(x) > 0:
                # delay strictly decreasing in the group size
                assert np.all(np.diff(table.delay[x, w]) < 0)
                # full-resolution errors grow with the group size, and any
                # over-subscribed speed is costlier than every exact one
                full = table.error[x, w, :7]
                assert np.all(np.diff(full) >= -1e-12)
                if table.error[x, w, 7:].max() > 0:
                    assert table.error[x, w, 7:].min() >= full.max() - 1e-12
            else:
                assert np.all(table.delay[x, w] == 0)
                assert np.all(table.error[x, w] == 0)


def test_zero_sigma_table_is_error_free_at_full_resolution():
    lay = bundled_layer()
    prof = profile_layer(lay.weights, lay.activations, [2, 4, 7])
    table = build_tradeoff_table(prof, DeviceParams(sigma=0.0))
    assert np.all(table.error == 0.0)
    lut = optimize_lut(table, 1e-9)
    assert np.all(lut.choice[:7] == 7)  # live pairs take the fastest exact speed
    assert np.all(lut.choice[7] == 2)   # dead x plane double-ties; smallest n_wl


def test_table_regeneration_is_deterministic():
    lay = bundled_layer()
    prof = profile_layer(lay.weights, lay.activations, [4, 8])
    dev = DeviceParams(sigma=0.1)
    t1 = build_tradeoff_table(prof, dev)
    t2 = build_tradeoff_table(prof, dev)
    assert np.array_equal(t1.error, t2.error)
    assert np.array_equal(t1.delay, t2.delay)


def test_lut_text_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    lut = WordlineLUT(choice=rng.integers(1, 17, size=(8, 8)))
    path = tmp_path / "lut.txt"
    write_lut_text(path, lut)
    back = read_lut_text(path)
    assert np.array_equal(back.choice, lut.choice)


def test_lut_packed_round_trip():
    rng = np.random.default_rng(9)
    lut = WordlineLUT(choice=rng.integers(1, 17, size=(8, 8)))
    blob = pack_lut(lut, n_max=16)
    assert lut_bits_per_entry(16) == 4
    assert len(blob) == 64 * 4 // 8  # log2(N) bits per sub-operation
    back = unpack_lut(blob, n_max=16)
    assert np.array_equal(back.choice, lut.choice)
    with pytest.raises(OptimizerError):
        pack_lut(uniform_lut(20), n_max=16)
