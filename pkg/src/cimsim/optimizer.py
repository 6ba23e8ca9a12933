"""Error/delay trade-off table and the wordline-count knapsack.

Each of the 64 sub-operations can run at any group size from 1 to N_max rows
per ADC read.  More rows per read means fewer reads (delay falls as 1/n) but
a noisier, possibly over-subscribed conversion (error rises).  Choosing one
speed per sub-operation under a total error budget is a multiple-choice
knapsack: minimize total delay subject to sum of error contributions <=
threshold, exactly one choice per pair.

The solver is exact: depth-first branch and bound with an LP-relaxation
bound over per-class convex hulls, cross-checked by brute_force_lut.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .device import DeviceParams
from .errormodel import expected_read_error, pair_magnitude
from .profiler import LayerProfile, ReadoutPMF


class OptimizerError(ValueError):
    pass


class InfeasibleThresholdError(OptimizerError):
    def __init__(self, threshold: float, min_achievable: float):
        self.threshold = threshold
        self.min_achievable = min_achievable
        super().__init__(
            f"threshold {threshold} infeasible; minimum achievable error is "
            f"{min_achievable}"
        )


@dataclass
class TradeoffTable:
    """error[x, w, i] and delay[x, w, i] for every wordline count n_wl_values[i].

    Error entries are whole-VMM contributions (magnitude-weighted, scaled by
    expected reads per column and column count, in the same normalized units
    as the optimization threshold).  Delay entries are expected ADC reads per
    output column.
    """

    error: np.ndarray
    delay: np.ndarray
    n_wl_values: tuple
    n_cols: int = 1
    quant_scale: float = 1.0

    def __post_init__(self):
        self.error = np.asarray(self.error, dtype=np.float64)
        self.delay = np.asarray(self.delay, dtype=np.float64)
        shape = (8, 8, len(self.n_wl_values))
        if self.error.shape != shape or self.delay.shape != shape:
            raise OptimizerError(f"table arrays must have shape {shape}")
        if not (np.isfinite(self.error).all() and np.isfinite(self.delay).all()):
            raise OptimizerError("table entries must be finite")


@dataclass
class WordlineLUT:
    """The knapsack solution: rows per cycle for each sub-operation."""

    choice: np.ndarray
    group_factor: int = 1
    threshold_used: float = math.inf
    achieved_error: float = 0.0
    achieved_delay: float = 0.0

    def __post_init__(self):
        self.choice = np.asarray(self.choice, dtype=np.int64)
        if self.choice.shape != (8, 8):
            raise OptimizerError("LUT must hold one choice per (x, w) pair")

    def n_wl(self, x_bit: int, w_bit: int) -> int:
        return int(self.choice[x_bit, w_bit])


def uniform_lut(n_wl: int) -> WordlineLUT:
    """Every pair at the same speed (models baseline / zero-skip group size)."""
    return WordlineLUT(choice=np.full((8, 8), n_wl, dtype=np.int64))


def _smooth_pmf(pmf: ReadoutPMF, mass: float) -> ReadoutPMF:
    """Spread a fraction of each count to the neighboring true counts.

    Profiled histograms are only an estimate of what the arrays will see;
    without smoothing the optimizer happily exploits counts that happen to
    sit exactly on a reconstruction level, a knife edge that runtime input
    scatter knocks over.  Mass clipped at the support edges stays put.
    """
    c = pmf.counts.astype(np.float64)
    out = (1.0 - 2.0 * mass) * c
    out[1:] += mass * c[:-1]
    out[0] += mass * c[0]
    out[:-1] += mass * c[1:]
    out[-1] += mass * c[-1]
    scaled = np.round(out * 1_000_000).astype(np.int64)
    return ReadoutPMF(pmf.x_bit, pmf.w_bit, pmf.n_wl, scaled)


def build_tradeoff_table(profile: LayerProfile, device: DeviceParams,
                         quant_scale: float = 1.0,
                         robust_mass: float = 0.0) -> TradeoffTable:
    """Evaluate expected error and delay for all pairs at all wordline counts.

    Error entries weight the per-read expected error by the profiled read
    count (including trailing partial groups), so short columns keep a sound
    budget.  Delay entries use the smooth ones/n_wl read model, strictly
    decreasing in n_wl.  robust_mass > 0 smooths each PMF by that fraction
    per neighbor before pricing it (see _smooth_pmf).
    """
    n_values = profile.n_wl_values
    shape = (8, 8, len(n_values))
    error = np.zeros(shape)
    delay = np.zeros(shape)
    for x in range(8):
        mean_ones = profile.mean_ones(x)
        for w in range(8):
            mag = pair_magnitude(x, w)
            for i, n in enumerate(n_values):
                pmf = profile.get(x, w, n)
                if robust_mass > 0.0 and not pmf.flagged:
                    pmf = _smooth_pmf(pmf, robust_mass)
                delay[x, w, i] = mean_ones / n
                error[x, w, i] = (
                    mag * profile.expected_reads(x, n)
                    * expected_read_error(pmf, device.sigma, device.adc_bits)
                    * profile.n_cols / quant_scale
                )
    return TradeoffTable(error=error, delay=delay, n_wl_values=tuple(n_values),
                         n_cols=profile.n_cols, quant_scale=quant_scale)


# ---------------------------------------------------------------------------
# Exact multiple-choice knapsack
# ---------------------------------------------------------------------------

@dataclass
class _Class:
    members: list                  # [(x, w), ...] pairs sharing this choice
    errors: np.ndarray             # pruned options, ascending error
    delays: np.ndarray             # strictly descending delay
    n_wl: np.ndarray               # wordline count per option


def _make_classes(table: TradeoffTable, group_factor: int) -> list:
    if group_factor not in (1, 4):
        raise OptimizerError(f"group_factor must be 1 or 4, got {group_factor}")
    if group_factor == 1:
        blocks = [[(x, w)] for x in range(8) for w in range(8)]
    else:
        blocks = [
            [(x0 + dx, w0 + dw) for dx in (0, 1) for dw in (0, 1)]
            for x0 in range(0, 8, 2) for w0 in range(0, 8, 2)
        ]

    classes = []
    for members in blocks:
        errs = np.zeros(len(table.n_wl_values))
        dels = np.zeros(len(table.n_wl_values))
        for (x, w) in members:
            errs += table.error[x, w, :]
            dels += table.delay[x, w, :]
        classes.append(_prune_class(members, errs, dels, table.n_wl_values))
    return classes


def _prune_class(members, errs, dels, n_values) -> _Class:
    """Drop dominated options.

    Option j is dominated when another option is no worse on both error and
    delay; exact (error, delay) ties keep the smaller wordline count (lower
    peak bitline current).
    """
    order = sorted(range(len(n_values)), key=lambda i: (errs[i], dels[i], n_values[i]))
    kept = []
    for i in order:
        if kept and dels[i] >= dels[kept[-1]]:
            continue  # previous option has <= error and <= delay
        kept.append(i)
    return _Class(
        members=members,
        errors=np.array([errs[i] for i in kept]),
        delays=np.array([dels[i] for i in kept]),
        n_wl=np.array([n_values[i] for i in kept], dtype=np.int64),
    )


def _best_first_min(budget_vals: list, obj_vals: list, budget: float,
                    obj_cap: float, seed_pick=None):
    """Best-first B&B: minimize sum of obj, subject to sum of budget_vals <=
    budget and sum of obj <= obj_cap (one option per class).

    budget_vals[c] must be sorted ascending with obj_vals[c] strictly
    descending (a dominance-pruned frontier).  Branches on the LP's single
    fractional class; every other class sits on a hull point, so integral LP
    nodes close exactly.  Returns (pick, obj) or (None, inf); totals are
    canonical class-order sums.
    """
    n_classes = len(budget_vals)
    hull_points = []
    segments = []   # (ratio, class, hull step, d_budget, d_obj) steepest first
    for c in range(n_classes):
        hull = _hull_indices(budget_vals[c], obj_vals[c])
        hull_points.append(hull)
        for k, (a, b) in enumerate(zip(hull, hull[1:])):
            db = budget_vals[c][b] - budget_vals[c][a]
            do = obj_vals[c][a] - obj_vals[c][b]
            segments.append((do / db, c, k, db, do))
    segments.sort(key=lambda s: -s[0])

    def lp(fixed: dict):
        """Greedy hull walk; returns (obj bound, fractional class, positions)."""
        used = obj = 0.0
        for c in range(n_classes):
            i = fixed.get(c, 0)
            used += budget_vals[c][i]
            obj += obj_vals[c][i]
        if used > budget:
            return None, None, None
        slack = budget - used
        pos = {}
        frac = None
        for ratio, c, k, db, do in segments:
            if c in fixed:
                continue
            if pos.get(c, 0) != k:
                continue
            if db <= slack:
                slack -= db
                obj -= do
                pos[c] = k + 1
            else:
                obj -= do * (slack / db)
                frac = c
                break
        return obj, frac, pos

    def evaluate(fixed: dict, pos: dict):
        pick = [fixed[c] if c in fixed else hull_points[c][pos.get(c, 0)]
                for c in range(n_classes)]
        used = sum(budget_vals[c][pick[c]] for c in range(n_classes))
        obj = sum(obj_vals[c][pick[c]] for c in range(n_classes))
        return pick, used, obj

    best_obj = math.inf
    best_pick = None
    if seed_pick is not None:
        used = sum(budget_vals[c][seed_pick[c]] for c in range(n_classes))
        obj = sum(obj_vals[c][seed_pick[c]] for c in range(n_classes))
        if used <= budget and obj <= obj_cap:
            best_obj, best_pick = obj, list(seed_pick)

    root = lp({})
    if root[0] is None:
        return best_pick, best_obj
    counter = 0
    heap = [(root[0], 0, {}, root[1], root[2])]
    while heap:
        bound, _, fixed, frac, pos = heapq.heappop(heap)
        if bound >= best_obj:
            break  # no remaining node can improve
        if frac is None:
            pick, used, obj = evaluate(fixed, pos)
            if used <= budget and obj <= obj_cap and obj < best_obj:
                best_obj, best_pick = obj, pick
            continue
        for i in range(len(budget_vals[frac])):
            child = dict(fixed)
            child[frac] = i
            c_bound, c_frac, c_pos = lp(child)
            if c_bound is None or c_bound >= best_obj or c_bound > obj_cap:
                continue
            if c_frac is None:
                pick, used, obj = evaluate(child, c_pos)
                if used <= budget and obj <= obj_cap and obj < best_obj:
                    best_obj, best_pick = obj, pick
            else:
                counter += 1
                heapq.heappush(heap, (c_bound, counter, child, c_frac, c_pos))
    return best_pick, best_obj


def _hull_indices(budget_vals: np.ndarray, obj_vals: np.ndarray) -> list:
    """Indices on the lower convex hull of an (ascending, descending) frontier."""
    hull = [0]
    for i in range(1, len(budget_vals)):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            # pop b when it lies above the chord a -> i
            lhs = (obj_vals[a] - obj_vals[b]) * (budget_vals[i] - budget_vals[a])
            rhs = (obj_vals[a] - obj_vals[i]) * (budget_vals[b] - budget_vals[a])
            if lhs < rhs:
                hull.pop()
            else:
                break
        hull.append(i)
    return hull


def _solve_exact(classes: list, threshold: float):
    """Exact two-phase solve; returns (option index per class, error, delay).

    Phase one minimizes total delay under the error budget.  Phase two
    minimizes total error among the minimum-delay solutions (axes swapped,
    delay becomes the budget), completing the tie-break.
    """
    n_classes = len(classes)
    min_achievable = float(sum(cls.errors[0] for cls in classes))
    if min_achievable > threshold:
        raise InfeasibleThresholdError(threshold, min_achievable)

    errs = [cls.errors for cls in classes]
    dlys = [cls.delays for cls in classes]

    pick1, best_delay = _best_first_min(errs, dlys, threshold, math.inf,
                                        seed_pick=[0] * n_classes)

    # swapped axes: options re-sorted by delay ascending (reverse order)
    errs_rev = [e[::-1] for e in errs]
    dlys_rev = [d[::-1] for d in dlys]
    seed = [len(errs[c]) - 1 - pick1[c] for c in range(n_classes)]
    pick2, _ = _best_first_min(dlys_rev, errs_rev, best_delay, threshold,
                               seed_pick=seed)
    choice = [len(errs[c]) - 1 - pick2[c] for c in range(n_classes)]

    err = sum(classes[c].errors[choice[c]] for c in range(n_classes))
    dly = sum(classes[c].delays[choice[c]] for c in range(n_classes))
    return choice, float(err), float(dly)




def _lut_from_choice(classes, choice, threshold, group_factor, err, dly) -> WordlineLUT:
    grid = np.zeros((8, 8), dtype=np.int64)
    for cls, i in zip(classes, choice):
        for (x, w) in cls.members:
            grid[x, w] = cls.n_wl[i]
    return WordlineLUT(choice=grid, group_factor=group_factor,
                       threshold_used=threshold, achieved_error=err,
                       achieved_delay=dly)


def optimize_lut(table: TradeoffTable, threshold: float,
                 group_factor: int = 1) -> WordlineLUT:
    """Exact minimum-delay wordline LUT under the error budget."""
    classes = _make_classes(table, group_factor)
    choice, err, dly = _solve_exact(classes, threshold)
    return _lut_from_choice(classes, choice, threshold, group_factor, err, dly)


def brute_force_lut(table: TradeoffTable, threshold: float,
                    group_factor: int = 1, limit: int = 10_000_000) -> WordlineLUT:
    """Exhaustive oracle with the same contract as optimize_lut.

    Enumerates every combination of dominance-pruned options; refuses
    instances above `limit` combinations.
    """
    classes = _make_classes(table, group_factor)
    sizes = [len(c.errors) for c in classes]
    combos = math.prod(sizes)
    if combos > limit:
        raise OptimizerError(f"instance too large to enumerate: {combos} combinations")

    total_err = np.zeros(1)
    total_dly = np.zeros(1)
    for cls in classes:
        total_err = (total_err[:, None] + cls.errors[None, :]).ravel()
        total_dly = (total_dly[:, None] + cls.delays[None, :]).ravel()

    feasible = total_err <= threshold
    if not feasible.any():
        raise InfeasibleThresholdError(threshold, float(total_err.min()))
    dly_masked = np.where(feasible, total_dly, math.inf)
    best_dly = dly_masked.min()
    tie = dly_masked == best_dly
    err_masked = np.where(tie, total_err, math.inf)
    best_flat = int(np.argmin(err_masked))  # first index: smallest n_wl vector

    choice = list(np.unravel_index(best_flat, sizes))
    err = float(sum(classes[c].errors[choice[c]] for c in range(len(classes))))
    dly = float(sum(classes[c].delays[choice[c]] for c in range(len(classes))))
    return _lut_from_choice(classes, choice, threshold, group_factor, err, dly)


# ---------------------------------------------------------------------------
# LUT serialization: text table and packed hardware register image
# ---------------------------------------------------------------------------

def lut_bits_per_entry(n_max: int) -> int:
    return max(1, math.ceil(math.log2(n_max)))


def write_lut_text(path, lut: WordlineLUT) -> None:
    with open(path, "w") as f:
        f.write("x_bit\tw_bit\tn_wl\n")
        for x in range(8):
            for w in range(8):
                f.write(f"{x}\t{w}\t{lut.choice[x, w]}\n")


def read_lut_text(path) -> WordlineLUT:
    grid = np.zeros((8, 8), dtype=np.int64)
    with open(path) as f:
        for line in f:
            if line.startswith("x_bit") or not line.strip():
                continue
            x, w, n = (int(v) for v in line.split())
            grid[x, w] = n
    return WordlineLUT(choice=grid)


def pack_lut(lut: WordlineLUT, n_max: int) -> bytes:
    """64 fields of ceil(log2(N_max)) bits each, value n_wl - 1, LSB first."""
    width = lut_bits_per_entry(n_max)
    acc = 0
    pos = 0
    for x in range(8):
        for w in range(8):
            n = int(lut.choice[x, w])
            if not 1 <= n <= n_max:
                raise OptimizerError(f"choice {n} outside [1, {n_max}]")
            acc |= (n - 1) << pos
            pos += width
    return acc.to_bytes((pos + 7) // 8, "little")


def unpack_lut(blob: bytes, n_max: int) -> WordlineLUT:
    width = lut_bits_per_entry(n_max)
    acc = int.from_bytes(blob, "little")
    grid = np.zeros((8, 8), dtype=np.int64)
    mask = (1 << width) - 1
    pos = 0
    for x in range(8):
        for w in range(8):
            grid[x, w] = ((acc >> pos) & mask) + 1
            pos += width
    return WordlineLUT(choice=grid)
