"""Analytic expected error of noisy in-memory VMM, plus its Monte-Carlo oracle.

Per ADC read, the expected absolute error is the double sum over true counts
N (workload PMF) and reported values N_hat (device misread model) of
P(N_hat|N) * P(N) * |N_hat - N|.  A column read in batches of N_WL rows out
of N_tot active rows scales that by N_tot / N_WL, and the whole VMM sums the
64 sub-operations weighted by their magnitudes 2**x * 2**w.  The linear
scaling across reads is an upper bound; the Monte-Carlo path below measures
the realized error for validation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bitplane import QuantizedTensor, reference_vmm
from .device import DeviceParams, code_distribution
from .profiler import LayerProfile, ReadoutPMF


class ErrorModelError(ValueError):
    pass


@dataclass
class ErrorEstimate:
    """Per-pair expected read errors and the composed VMM bound."""

    per_pair: np.ndarray          # (8, 8) expected |error| per ADC read
    vmm_mae: float                # composed upper bound, whole output vector
    n_tot: np.ndarray             # (8,) expected active rows per input bit
    n_wl_used: np.ndarray         # (8, 8) wordline choice per pair


@dataclass
class MonteCarloResult:
    mae: float
    ci95: float
    per_trial: np.ndarray

    def __iter__(self):
        yield self.mae
        yield self.ci95


def expected_read_error(pmf: ReadoutPMF, sigma: float, adc_bits: int) -> float:
    """Expected |reported - true| for a single ADC read (exact at this level).

    The reported values range over the ADC reconstruction levels for the
    pair's group size, so over-subscribed groups include their quantization
    error automatically.
    """
    probs = pmf.probs()
    if abs(probs.sum() - 1.0) > 1e-9:
        raise ErrorModelError("PMF is not normalized")
    total = 0.0
    for n, p_n in enumerate(probs):
        if p_n == 0.0:
            continue
        values, p_codes = code_distribution(n, sigma, adc_bits, pmf.n_wl)
        total += p_n * float(np.dot(p_codes, np.abs(values - n)))
    return total


def pair_magnitude(x_bit: int, w_bit: int) -> int:
    """|2**x * 2**w|; the signed weight MSB contributes |-(2**7)| = 2**7."""
    return (1 << x_bit) * (1 << w_bit)


def expected_vmm_error(read_errors: np.ndarray, n_tot, n_wl,
                       n_cols: int = 1, quant_scale: float = 1.0) -> float:
    """Compose per-read errors into the whole-VMM upper bound.

    read_errors : (8, 8) expected |error| per read for each (x, w) pair
    n_tot       : expected active rows per column, scalar or per-x (8,)
    n_wl        : rows per read for each pair, scalar or (8, 8)
    n_cols      : output columns summed into the bound
    quant_scale : divisor mapping integer output units to normalized units

    Returns sum over pairs of 2**x 2**w * (n_tot / n_wl) * E(err|x,w),
    times n_cols, divided by quant_scale.
    """
    read_errors = np.asarray(read_errors, dtype=np.float64)
    if read_errors.shape != (8, 8):
        raise ErrorModelError(f"read_errors must be 8x8, got {read_errors.shape}")
    n_tot = np.broadcast_to(np.asarray(n_tot, dtype=np.float64), (8,))
    n_wl = np.broadcast_to(np.asarray(n_wl, dtype=np.float64), (8, 8))
    if np.any(n_wl < 1):
        raise ErrorModelError("n_wl entries must be >= 1")

    total = 0.0
    for x in range(8):
        for w in range(8):
            reads = n_tot[x] / n_wl[x, w]
            total += pair_magnitude(x, w) * reads * read_errors[x, w]
    return total * n_cols / quant_scale


def estimate_layer_error(profile: LayerProfile, device: DeviceParams,
                         n_wl, quant_scale: float = 1.0) -> ErrorEstimate:
    """Evaluate the analytic bound for one layer at a given wordline choice."""
    n_wl_arr = np.broadcast_to(np.asarray(n_wl, dtype=np.int64), (8, 8)).copy()
    per_pair = np.zeros((8, 8))
    for x in range(8):
        for w in range(8):
            pmf = profile.get(x, w, int(n_wl_arr[x, w]))
            per_pair[x, w] = expected_read_error(pmf, device.sigma, device.adc_bits)
    n_tot = np.array([profile.mean_ones(x) for x in range(8)])
    mae = expected_vmm_error(per_pair, n_tot, n_wl_arr,
                             n_cols=profile.n_cols, quant_scale=quant_scale)
    return ErrorEstimate(per_pair=per_pair, vmm_mae=mae, n_tot=n_tot, n_wl_used=n_wl_arr)


def monte_carlo_mae(layer, device: DeviceParams, policy: str, trials: int,
                    rng: np.random.Generator, lut=None,
                    quant_scale: float = 1.0) -> MonteCarloResult:
    """Empirical mean absolute VMM error with a 95% confidence interval.

    layer must provide .weights and .activations (QuantizedTensor).  Each
    trial programs a fresh array (device-to-device variation), replays the
    activation stream, and averages sum|y_hat - y| over the stream.
    """
    from .crossbar import program_array, simulate_vmm_batch

    if trials < 1:
        raise ErrorModelError("trials must be >= 1")
    weights: QuantizedTensor = layer.weights
    acts: QuantizedTensor = layer.activations
    reference = reference_vmm(weights, _transpose(acts))  # (n_out, n_samples)

    per_trial = np.empty(trials)
    for t in range(trials):
        trial_rng = np.random.default_rng(rng.integers(0, 2**63 - 1))
        array = program_array(weights, device, trial_rng)
        outputs, _ = simulate_vmm_batch(array, acts, policy, lut=lut, rng=trial_rng)
        per_trial[t] = np.abs(outputs - reference.T).sum(axis=1).mean() / quant_scale

    mae = float(per_trial.mean())
    if trials > 1:
        ci95 = 1.96 * float(per_trial.std(ddof=1)) / math.sqrt(trials)
    else:
        ci95 = 0.0
    return MonteCarloResult(mae=mae, ci95=ci95, per_trial=per_trial)


def _transpose(q: QuantizedTensor) -> QuantizedTensor:
    return QuantizedTensor(values=q.values.T.copy(), scale=q.scale,
                           signed=q.signed, bits=q.bits)


def write_error_delay_csv(path, table) -> None:
    """Dump a trade-off table as CSV rows (x_bit, w_bit, n_wl, error, delay)."""
    with open(path, "w") as f:
        f.write("x_bit,w_bit,n_wl,expected_error,delay\n")
        for x in range(8):
            for w in range(8):
                for i, n in enumerate(table.n_wl_values):
                    f.write(f"{x},{w},{n},{table.error[x, w, i]!r},{table.delay[x, w, i]!r}\n")
