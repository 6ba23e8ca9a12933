"""Cycle-accurate simulation of one RRAM sub-array running bit-serial VMM.

Physical model: 8 adjacent physical columns hold the 8 bit planes of one
logical weight column and share a 3b ADC through an 8-to-1 mux, so a row
group activated once is converted over 8 mux steps (one cycle per
conversion).  Under counting-cards each sub-operation runs its own group
size, so groups are per (input bit, weight bit) pair and every cycle
converts the column it just activated.

Schedules:
  baseline       consecutive row blocks, zeros included
  zero_skip      next block of rows whose input bit is 1
  counting_cards next n_wl(x, w) one-rows, n_wl from the optimized LUT

Cycle count is the per-ADC conversion count (all ADCs of an array see the
same schedule, so the max over ADCs equals each one's count).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bitplane import QuantizedTensor, plane_stack
from .device import DeviceParams, adc_quantize
from .optimizer import WordlineLUT


class CrossbarError(ValueError):
    pass


@dataclass
class PerfCounters:
    cycles: int = 0
    adc_reads: int = 0
    wordline_activations: int = 0
    shift_add_ops: int = 0
    stalls: int = 0

    def merge(self, other: "PerfCounters") -> "PerfCounters":
        return PerfCounters(
            cycles=self.cycles + other.cycles,
            adc_reads=self.adc_reads + other.adc_reads,
            wordline_activations=self.wordline_activations + other.wordline_activations,
            shift_add_ops=self.shift_add_ops + other.shift_add_ops,
            stalls=self.stalls + other.stalls,
        )

    def as_dict(self) -> dict:
        return {
            "cycles": self.cycles,
            "adc_reads": self.adc_reads,
            "wordline_activations": self.wordline_activations,
            "shift_add_ops": self.shift_add_ops,
            "stalls": self.stalls,
        }


@dataclass
class EnergyParams:
    """Per-event energies in pJ.  Placeholders, not calibrated silicon data."""

    adc_read_pj: float = 2.0
    wordline_pj: float = 0.05
    shift_add_pj: float = 0.1
    register_pj: float = 0.02
    noc_hop_pj_per_byte: float = 0.3


def counters_energy(counters: PerfCounters, energy: EnergyParams) -> float:
    return (
        counters.adc_reads * energy.adc_read_pj
        + counters.wordline_activations * energy.wordline_pj
        + counters.shift_add_ops * (energy.shift_add_pj + energy.register_pj)
    )


@dataclass
class CrossbarArray:
    """One programmed sub-array: bit planes plus sampled conductances."""

    weights: QuantizedTensor
    planes: np.ndarray        # (8, n_in, n_out) binary
    conductance: np.ndarray   # (8, n_in, n_out) analog, sampled at programming
    magnitudes: np.ndarray    # (8,) plane weights, MSB -128 for signed weights
    device: DeviceParams
    array_rows: int = 128
    array_cols: int = 128

    @property
    def n_in(self) -> int:
        return self.planes.shape[1]

    @property
    def n_out(self) -> int:
        return self.planes.shape[2]


def program_array(weights: QuantizedTensor, device: DeviceParams,
                  rng: np.random.Generator, array_rows: int = 128,
                  array_cols: int = 128) -> CrossbarArray:
    """Sample per-cell conductances for a weight tile.

    On-cells draw Normal(1, sigma); off-cells sit at 1/hrs_ratio (zero by
    default).  Deterministic for a given rng state.  Raises when the tile
    does not fit the array (the architecture layer must tile first).
    """
    n_out, n_in = weights.values.shape
    if n_in > array_rows or 8 * n_out > array_cols:
        raise CrossbarError(
            f"weight tile ({n_out}x{n_in}) exceeds array "
            f"{array_rows}x{array_cols} (8 columns per weight)"
        )
    stack, mags = plane_stack(weights)              # (8, n_out, n_in)
    planes = np.ascontiguousarray(np.transpose(stack, (0, 2, 1)))
    noise = rng.normal(1.0, device.sigma, size=planes.shape)
    conductance = np.where(planes == 1, noise, device.off_conductance)
    return CrossbarArray(weights=weights, planes=planes, conductance=conductance,
                         magnitudes=mags, device=device,
                         array_rows=array_rows, array_cols=array_cols)


def next_row_group(policy: str, input_bits: np.ndarray, cursor: int,
                   n_wl: int) -> tuple[np.ndarray, int]:
    """Rows targeted by the next ADC read; empty result means done.

    baseline: the next n_wl consecutive rows regardless of content.
    zero_skip / counting_cards: the next up-to-n_wl rows with input bit 1.
    Returns (row indices, advanced cursor); cursor is a row index.
    """
    n_rows = len(input_bits)
    if cursor < 0 or cursor > n_rows:
        raise CrossbarError(f"cursor {cursor} outside 0..{n_rows}")
    if policy == "baseline":
        rows = np.arange(cursor, min(cursor + n_wl, n_rows))
        return rows, int(min(cursor + n_wl, n_rows))
    if policy in ("zero_skip", "counting_cards"):
        ones = cursor + np.flatnonzero(input_bits[cursor:])
        rows = ones[:n_wl]
        new_cursor = int(rows[-1]) + 1 if len(rows) else n_rows
        return rows, new_cursor
    raise CrossbarError(f"unknown policy {policy!r}")


def _group_list(policy: str, bits: np.ndarray, n_wl: int) -> list:
    groups = []
    cursor = 0
    while True:
        rows, cursor = next_row_group(policy, bits, cursor, n_wl)
        if len(rows) == 0:
            break
        groups.append(rows)
        if cursor >= len(bits):
            break
    return groups


def simulate_vmm(array: CrossbarArray, x: QuantizedTensor, policy: str,
                 lut: WordlineLUT | None = None, rng: np.random.Generator | None = None,
                 trace: list | None = None,
                 counters: PerfCounters | None = None) -> tuple[np.ndarray, PerfCounters]:
    """Run one noisy bit-serial VMM; returns (integer outputs, counters).

    Wordline activations count each driven row once per group; a group shared
    across the 8 mux steps is driven once, while counting-cards groups belong
    to a single pair.  Stalls count wordline-driver idle cycles while the mux
    walks the remaining columns of a shared group.  All reads of one
    (x_bit, w_bit, group-size) batch are evaluated together via grouped sums.
    """
    device = array.device
    if x.values.ndim != 1 or len(x.values) != array.n_in:
        raise CrossbarError(
            f"input length {x.values.shape} does not match array rows {array.n_in}"
        )
    if x.signed:
        raise CrossbarError("activations must be unsigned (post-ReLU convention)")
    if policy == "counting_cards" and lut is None:
        raise CrossbarError("counting_cards requires a wordline LUT")
    if device.resample_per_read and rng is None:
        raise CrossbarError("resample_per_read requires an rng")

    x_planes, _ = plane_stack(x)   # (8, n_in)
    counters = counters if counters is not None else PerfCounters()
    acc = np.zeros(array.n_out, dtype=np.int64)
    off = device.off_conductance

    def read_pair(x_bit: int, w_bit: int, enabled: np.ndarray,
                  offsets: np.ndarray, group_sizes: np.ndarray, span: int):
        """All groups of one pair at once; returns summed codes per column."""
        if len(enabled) == 0:
            return np.zeros(array.n_out, dtype=np.int64)
        true_n = np.add.reduceat(array.planes[w_bit][enabled].astype(np.int64),
                                 offsets, axis=0)
        if device.resample_per_read:
            levels = true_n + device.sigma * np.sqrt(true_n) \
                * rng.standard_normal(true_n.shape)
        else:
            levels = np.add.reduceat(array.conductance[w_bit][enabled],
                                     offsets, axis=0)
        if off:
            levels = levels + (group_sizes[:, None] - true_n) * off
        codes = adc_quantize(levels, device.adc_bits, span).astype(np.int64)
        counters.adc_reads += codes.size
        counters.shift_add_ops += codes.size
        counters.cycles += len(offsets)
        if trace is not None:
            base = counters.cycles - len(offsets)
            for g in range(codes.shape[0]):
                for col in range(array.n_out):
                    trace.append((base + g + 1, x_bit, w_bit, int(group_sizes[g]),
                                  col, int(true_n[g, col]), int(codes[g, col])))
        return codes.sum(axis=0)

    if policy in ("baseline", "zero_skip"):
        span = device.rows_per_group
        for x_bit in range(8):
            bits = x_planes[x_bit]
            if policy == "baseline":
                n_groups = -(-array.n_in // span)
                counters.wordline_activations += int(bits.sum())
                counters.stalls += (8 - 1) * n_groups
                for w_bit in range(8):
                    codes_sum = _baseline_pair(array, x_bit, w_bit, bits, span,
                                               device, rng, counters, trace, off)
                    acc += array.magnitudes[w_bit] * (1 << x_bit) * codes_sum
                continue
            enabled = np.flatnonzero(bits)
            if len(enabled) == 0:
                continue
            offsets = np.arange(0, len(enabled), span)
            sizes = np.diff(np.append(offsets, len(enabled)))
            counters.wordline_activations += len(enabled)
            counters.stalls += (8 - 1) * len(offsets)
            for w_bit in range(8):
                codes_sum = read_pair(x_bit, w_bit, enabled, offsets, sizes, span)
                acc += array.magnitudes[w_bit] * (1 << x_bit) * codes_sum
    elif policy == "counting_cards":
        for x_bit in range(8):
            bits = x_planes[x_bit]
            enabled_all = np.flatnonzero(bits)
            for w_bit in range(8):
                n_wl = lut.n_wl(x_bit, w_bit)
                if not 1 <= n_wl <= device.max_wordlines:
                    raise CrossbarError(
                        f"LUT choice {n_wl} outside [1, {device.max_wordlines}]"
                    )
                if len(enabled_all) == 0:
                    continue
                offsets = np.arange(0, len(enabled_all), n_wl)
                sizes = np.diff(np.append(offsets, len(enabled_all)))
                counters.wordline_activations += len(enabled_all)
                codes_sum = read_pair(x_bit, w_bit, enabled_all, offsets, sizes, n_wl)
                acc += array.magnitudes[w_bit] * (1 << x_bit) * codes_sum
    else:
        raise CrossbarError(f"unknown policy {policy!r}")

    return acc, counters


def _baseline_pair(array, x_bit, w_bit, bits, span, device, rng,
                   counters, trace, off):
    """Baseline reads consecutive blocks; rows with input 0 stay grounded."""
    n_rows = array.n_in
    n_groups = -(-n_rows // span)
    pad = n_groups * span - n_rows

    def blocks(masked):
        if pad:
            masked = np.concatenate(
                [masked, np.zeros((pad, array.n_out), dtype=masked.dtype)])
        return masked.reshape(n_groups, span, array.n_out).sum(axis=1)

    mask = bits.astype(np.int64)[:, None]
    true_n = blocks(array.planes[w_bit] * mask)
    sizes = np.append(bits, np.zeros(pad, dtype=bits.dtype)) \
        .reshape(n_groups, span).sum(axis=1)
    if device.resample_per_read:
        levels = true_n + device.sigma * np.sqrt(true_n) \
            * rng.standard_normal(true_n.shape)
    else:
        levels = blocks(array.conductance[w_bit] * mask)
    if off:
        levels = levels + (sizes[:, None] - true_n) * off
    codes = adc_quantize(levels, device.adc_bits, span).astype(np.int64)
    counters.adc_reads += codes.size
    counters.shift_add_ops += codes.size
    counters.cycles += n_groups
    if trace is not None:
        base = counters.cycles - n_groups
        for g in range(n_groups):
            for col in range(array.n_out):
                trace.append((base + g + 1, x_bit, w_bit, int(sizes[g]),
                              col, int(true_n[g, col]), int(codes[g, col])))
    return codes.sum(axis=0)


def simulate_vmm_batch(array: CrossbarArray, xs: QuantizedTensor, policy: str,
                       lut: WordlineLUT | None = None,
                       rng: np.random.Generator | None = None) -> tuple[np.ndarray, PerfCounters]:
    """Replay a (n_samples, n_in) activation stream; counters are aggregated."""
    if xs.values.ndim != 2:
        raise CrossbarError("batch input must be 2-D (samples, rows)")
    counters = PerfCounters()
    outputs = np.zeros((xs.values.shape[0], array.n_out), dtype=np.int64)
    for s in range(xs.values.shape[0]):
        sample = QuantizedTensor(values=xs.values[s].copy(), scale=xs.scale,
                                 signed=xs.signed, bits=xs.bits)
        outputs[s], _ = simulate_vmm(array, sample, policy, lut=lut, rng=rng,
                                     counters=counters)
    return outputs, counters


def write_trace_csv(path, trace: list) -> None:
    """Event trace rows: cycle, x_bit, w_bit, rows_enabled, col, true_n, code."""
    with open(path, "w") as f:
        f.write("cycle,x_bit,w_bit,rows_enabled,col,true_n,code\n")
        for row in trace:
            f.write(",".join(str(v) for v in row) + "\n")
